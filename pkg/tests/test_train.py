import csv
import math

import numpy as np
import pytest
from scipy import stats

from sgd_sobolev.errors import ArgumentError, DimensionError
from sgd_sobolev.model import Architecture, init_model, linear_model
from sgd_sobolev.stability import sample_batches
from sgd_sobolev.train import (
    SWEEP_HEADER,
    TrainConfig,
    run_seeds,
    sgd_train,
    sweep,
    write_sweep_csv,
)


def test_single_sample_residual_decays_geometrically():
    x = np.array([[0.6, -0.8, 0.5]])
    y = np.array([1.3])
    eta = 0.3
    res = sgd_train(linear_model([0.1, 0.2, -0.3]), x, y, TrainConfig(eta, 1, 20, record_every=1))
    factor = (1 - eta * float(x[0] @ x[0])) ** 2
    ratios = res.loss_trace[1:] / res.loss_trace[:-1]
    np.testing.assert_allclose(ratios, factor, rtol=1e-9)
    assert list(res.record_steps) == list(range(21))


def test_zero_step_leaves_weights_unchanged():
    arch = Architecture(3, (4, 4), "tanh")
    model = init_model(arch, seed=2)
    xs = np.random.default_rng(0).standard_normal((6, 3))
    res = sgd_train(model, xs, np.ones(6), TrainConfig(0.0, 2, 50))
    assert np.array_equal(res.final_model.params, model.params)
    assert np.all(res.loss_trace == res.loss_trace[0])


def test_small_net_interpolates():
    arch = Architecture(2, (16,), "tanh")
    rng = np.random.default_rng(1)
    xs = rng.standard_normal((4, 2))
    ys = rng.standard_normal(4)
    res = sgd_train(init_model(arch, 3), xs, ys, TrainConfig(0.5, 4, 20000, interp_tol=1e-6, record_every=1000))
    assert res.interpolated and res.final_max_residual <= 1e-6
    assert not res.diverged and res.steps_run == 20000


def test_training_is_deterministic():
    arch = Architecture(3, (5,), "tanh")
    xs = np.random.default_rng(4).standard_normal((8, 3))
    ys = np.sin(xs[:, 0])
    cfg = TrainConfig(0.1, 3, 300, seed=11, record_every=7)
    a = sgd_train(init_model(arch, 1), xs, ys, cfg)
    b = sgd_train(init_model(arch, 1), xs, ys, cfg)
    assert np.array_equal(a.final_model.params, b.final_model.params)
    assert np.array_equal(a.loss_trace, b.loss_trace)
    assert a.record_steps[-1] == 300


def test_divergence_stops_early():
    x = np.array([[1.0, 1.0]])
    res = sgd_train(linear_model([1.0, 0.0]), x, np.array([0.0]), TrainConfig(50.0, 1, 10_000, record_every=1))
    assert res.diverged and res.steps_run < 10_000
    assert math.isinf(res.final_max_residual) and not res.interpolated


def test_batch_sampling_is_uniform_over_subsets():
    n, b, draws = 6, 2, 100_000
    idx = sample_batches(np.random.default_rng(0), n, b, draws)
    assert np.all(idx[:, 0] != idx[:, 1])
    codes = np.sort(idx, axis=1) @ np.array([n, 1])
    _, counts = np.unique(codes, return_counts=True)
    assert len(counts) == math.comb(n, b)
    assert stats.chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize(
    "kwargs",
    [dict(eta=-1.0), dict(eta=math.nan), dict(batch=0), dict(iterations=0), dict(record_every=0)],
)
def test_config_rejects(kwargs):
    base = dict(eta=0.1, batch=1, iterations=1)
    base.update(kwargs)
    with pytest.raises(ArgumentError):
        TrainConfig(**base)


def test_shape_errors():
    model = linear_model([1.0, 2.0])
    with pytest.raises(DimensionError):
        sgd_train(model, np.zeros((3, 2)), np.zeros(2), TrainConfig(0.1, 1, 1))
    with pytest.raises(DimensionError):
        sgd_train(model, np.zeros((3, 3)), np.zeros(3), TrainConfig(0.1, 1, 1))
    with pytest.raises(ArgumentError):
        sgd_train(model, np.zeros((3, 2)), np.zeros(3), TrainConfig(0.1, 4, 1))


def test_run_seeds_share_init_across_cells():
    assert run_seeds(0, 1, 0)[0] == run_seeds(0, 1, 5)[0]
    assert run_seeds(0, 1, 0)[1] != run_seeds(0, 1, 5)[1]
    assert run_seeds(0, 1, 0)[0] != run_seeds(0, 2, 0)[0]


def test_sweep_rows_and_csv(tmp_path):
    arch = Architecture(2, (6,), "tanh")
    rng = np.random.default_rng(0)
    xs = rng.standard_normal((5, 2))
    ys = rng.standard_normal(5)
    grid = [(0.1, 2), (0.2, 2), (0.1, 2)]
    rows = sweep(arch, xs, ys, grid, reps=2, iterations=50, record_every=10)
    assert [(r.eta, r.batch, r.rep) for r in rows] == [(0.1, 2, 0), (0.1, 2, 1), (0.2, 2, 0), (0.2, 2, 1)]
    assert all(len(r.gw) == 3 and len(r.gx) == 3 for r in rows)
    path = tmp_path / "s.csv"
    write_sweep_csv(path, rows)
    with open(path) as fh:
        table = list(csv.reader(fh))
    assert table[0] == SWEEP_HEADER
    assert len(table) == 5 and all(len(r) == len(SWEEP_HEADER) for r in table)
    again = sweep(arch, xs, ys, grid, reps=2, iterations=50, record_every=10)
    assert [r.csv_row() for r in again] == [r.csv_row() for r in rows]


def test_sweep_parallel_matches_serial():
    arch = Architecture(2, (4,), "tanh")
    rng = np.random.default_rng(1)
    xs = rng.standard_normal((4, 2))
    ys = rng.standard_normal(4)
    grid = [(0.1, 1), (0.05, 2)]
    a = sweep(arch, xs, ys, grid, reps=1, iterations=30)
    b = sweep(arch, xs, ys, grid, reps=1, iterations=30, workers=2)
    assert [r.csv_row() for r in a] == [r.csv_row() for r in b]


def test_sweep_rejects_empty():
    with pytest.raises(ArgumentError):
        sweep(Architecture(2, (2,), "tanh"), np.zeros((2, 2)), np.zeros(2), [], 1, 1)


def test_overparameterized_tanh_net_interpolates_twenty_points():
    rng = np.random.default_rng(0)
    xs = rng.standard_normal((20, 10))
    xs /= np.linalg.norm(xs, axis=1, keepdims=True)
    ys = np.sin(3 * xs[:, 0]) + xs[:, 1]
    arch = Architecture(10, (20,), "tanh")
    assert arch.num_params >= 10 * len(xs)
    tol = 1e-5
    hits = 0
    for seed in range(5):
        cfg = TrainConfig(1.0, 5, 80_000, seed=seed, interp_tol=tol, record_every=100)
        res = sgd_train(init_model(arch, seed), xs, ys, cfg)
        if res.interpolated:
            hits += 1
            tail = res.loss_trace[res.record_steps >= 0.9 * cfg.iterations]
            assert tail.mean() < tol**2
    assert hits >= 4
