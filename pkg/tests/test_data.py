import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgd_sobolev.data import (
    CIRCLE,
    CURVE,
    CUSTOM,
    KINDS,
    LINEAR,
    NORM_WINDOW,
    TORUS,
    TRIG,
    ManifoldSampler,
    ManifoldSpec,
    generate,
    load_csv,
    load_sidecar,
    parse_number,
    save_csv,
    save_dataset,
)
from sgd_sobolev.errors import ArgumentError, DimensionError, ParseError


def fd_grad(fn, x, eps=1e-6):
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        out[i] = (fn(x + e) - fn(x - e)) / (2 * eps)
    return out


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("radius", [0.5, 1.0, 2.0])
def test_points_have_constant_norm(kind, radius):
    ds = generate(ManifoldSpec(8, kind, TRIG, radius=radius), 200, seed=3)
    norms = np.linalg.norm(ds.points, axis=1)
    np.testing.assert_allclose(norms, radius, rtol=1e-12)
    assert NORM_WINDOW[0] - 1e-12 <= norms.min() and norms.max() <= NORM_WINDOW[1] + 1e-12


def test_circle_spans_two_dimensions():
    ds = generate(ManifoldSpec(6, CIRCLE), 100, seed=1)
    sv = np.linalg.svd(ds.points, compute_uv=False)
    assert sv[2] < 1e-10 * sv[0]
    assert sv[1] > 0.1 * sv[0]


def test_curve_spans_every_harmonic_pair():
    ds = generate(ManifoldSpec(10, CURVE), 300, seed=1)
    sv = np.linalg.svd(ds.points, compute_uv=False)
    assert sv[-1] > 0.1 * sv[0]


def test_torus_has_two_chart_angles():
    spec = ManifoldSpec(5, TORUS)
    assert spec.intrinsic_dim == 2
    ds = generate(spec, 400, seed=2)
    sv = np.linalg.svd(ds.points, compute_uv=False)
    assert sv[4] < 1e-10 * sv[0] and sv[3] > 0.1 * sv[0]


def test_linear_target_is_unit_projection():
    sampler = ManifoldSampler(ManifoldSpec(7, CIRCLE, LINEAR))
    assert math.isclose(np.linalg.norm(sampler.beta), 1.0)
    x = np.random.default_rng(0).standard_normal((4, 7))
    np.testing.assert_allclose(sampler.target(x), x @ sampler.beta)
    np.testing.assert_allclose(sampler.target_grad(x), np.tile(sampler.beta, (4, 1)))


def test_trig_target_on_circle_matches_chart_formula():
    spec = ManifoldSpec(4, CIRCLE, TRIG)
    sampler = ManifoldSampler(spec)
    t = np.linspace(-3.0, 3.0, 13)
    f = sampler.frame
    pts = np.cos(t)[:, None] * f[:, 0] + np.sin(t)[:, None] * f[:, 1]
    np.testing.assert_allclose(sampler.target(pts), np.sin(t) + 0.5 * np.cos(2 * t), atol=1e-12)


def test_custom_target_reads_table():
    spec = ManifoldSpec(3, CIRCLE, CUSTOM, coefficients=((1.0, 0.0), (0.0, 2.0)))
    sampler = ManifoldSampler(spec)
    t = np.array([0.3, 1.1])
    f = sampler.frame
    pts = np.cos(t)[:, None] * f[:, 0] + np.sin(t)[:, None] * f[:, 1]
    np.testing.assert_allclose(sampler.target(pts), np.cos(t) + 2 * np.sin(2 * t), atol=1e-12)


@pytest.mark.parametrize("kind,target", [(CIRCLE, TRIG), (TORUS, TRIG), (CURVE, TRIG), (CURVE, CUSTOM)])
def test_target_gradient_matches_finite_differences(kind, target):
    coeffs = ((0.5, -1.0), (0.25, 0.75)) if target == CUSTOM else ()
    sampler = ManifoldSampler(ManifoldSpec(6, kind, target, coefficients=coeffs))
    pts, _ = sampler.sample(5, np.random.default_rng(4))
    grads = sampler.target_grad(pts)
    for x, g in zip(pts, grads):
        fd = fd_grad(lambda z: float(sampler.target(z)[0]), x)
        np.testing.assert_allclose(g, fd, atol=1e-8)


def test_generate_is_deterministic():
    spec = ManifoldSpec(5, CURVE, TRIG, geometry_seed=7)
    a, b = generate(spec, 20, seed=9), generate(spec, 20, seed=9)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.targets, b.targets)
    c = generate(spec, 20, seed=10)
    assert not np.array_equal(a.points, c.points)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(ambient_dim=1),
        dict(ambient_dim=3, kind=TORUS),
        dict(ambient_dim=3, kind="sphere"),
        dict(ambient_dim=3, target="cubic"),
        dict(ambient_dim=3, radius=2.5),
        dict(ambient_dim=3, radius=0.4),
        dict(ambient_dim=3, target=CUSTOM),
        dict(ambient_dim=3, target=CUSTOM, coefficients=((1.0,),)),
    ],
)
def test_spec_rejects_bad_arguments(kwargs):
    with pytest.raises(ArgumentError):
        ManifoldSpec(**kwargs)


def test_spec_dict_round_trip():
    spec = ManifoldSpec(6, CURVE, CUSTOM, 1.5, 3, ((1.0, 2.0),))
    assert ManifoldSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_parse_number_round_trips_repr_and_hex(x):
    assert parse_number(repr(x)) == x
    assert parse_number(x.hex()) == x


@pytest.mark.parametrize("text", ["nan", "inf", "-inf", " 1.0", "1.0 ", "", "1,0", "0x1p", "abc", "1e"])
def test_parse_number_rejects(text):
    with pytest.raises(ValueError):
        parse_number(text)


@pytest.mark.parametrize("hexfloat", [False, True])
def test_csv_round_trip_is_exact(tmp_path, hexfloat):
    ds = generate(ManifoldSpec(4, TORUS, TRIG), 30, seed=5)
    path = tmp_path / "d.csv"
    save_csv(path, ds.points, ds.targets, hexfloat=hexfloat)
    pts, ys = load_csv(path)
    assert np.array_equal(pts, ds.points) and np.array_equal(ys, ds.targets)
    assert load_sidecar(path) is None


def test_save_dataset_writes_sidecar(tmp_path):
    spec = ManifoldSpec(4, CIRCLE, TRIG, geometry_seed=2)
    ds = generate(spec, 10, seed=1)
    path = tmp_path / "d.csv"
    save_dataset(path, ds)
    side = load_sidecar(path)
    assert side["n"] == 10 and side["d"] == 4 and side["seed"] == 1
    assert ManifoldSpec.from_dict(side["spec"]) == spec


def test_save_csv_length_mismatch(tmp_path):
    with pytest.raises(DimensionError):
        save_csv(tmp_path / "x.csv", np.zeros((3, 2)), np.zeros(2))


@pytest.mark.parametrize(
    "body,line",
    [
        ("1,2,3\n4,5\n", 2),
        ("1,2\n3,x\n", 2),
        ("1\n", 1),
        ("1,nan\n", 1),
        ("", None),
    ],
)
def test_load_csv_errors_carry_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.line == line


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31))
def test_sample_shapes(n, seed):
    sampler = ManifoldSampler(ManifoldSpec(4, TORUS, TRIG))
    pts, ys = sampler.sample(n, np.random.default_rng(seed))
    assert pts.shape == (n, 4) and ys.shape == (n,)
    assert np.all(np.isfinite(ys))
