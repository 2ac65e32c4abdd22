"""Synthetic data on low-dimensional manifolds, plus CSV persistence.

Every manifold is parametrized by an angle chart and placed in ``R^d``
through a fixed orthonormal frame drawn from ``geometry_seed``. Targets are
noiseless functions ``f*`` defined on the ambient space, so both the labels
and ``grad f*`` are available at any test point.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError, ParseError

CIRCLE = "circle"
TORUS = "torus-embedding"
CURVE = "smooth-curve"
KINDS = (CIRCLE, TORUS, CURVE)

LINEAR = "linear-in-ambient"
TRIG = "trig-of-chart"
CUSTOM = "custom"
TARGETS = (LINEAR, TRIG, CUSTOM)

NORM_WINDOW = (0.5, 2.0)

_MIN_DIM = {CIRCLE: 2, TORUS: 4, CURVE: 4}


@dataclass(frozen=True)
class ManifoldSpec:
    """Manifold and target description.

    ``coefficients`` is the custom target table: pairs ``(a_j, b_j)`` giving
    ``f* = sum_j a_j cos(j t) + b_j sin(j t)`` in the first chart angle ``t``.
    """

    ambient_dim: int
    kind: str = CIRCLE
    target: str = LINEAR
    radius: float = 1.0
    geometry_seed: int = 0
    coefficients: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown manifold kind {self.kind!r}")
        if self.target not in TARGETS:
            raise ArgumentError(f"unknown target {self.target!r}")
        if self.ambient_dim < _MIN_DIM[self.kind]:
            raise ArgumentError(f"{self.kind} needs ambient_dim >= {_MIN_DIM[self.kind]}")
        lo, hi = NORM_WINDOW
        if not lo <= self.radius <= hi:
            raise ArgumentError(f"radius keeps norms outside {NORM_WINDOW}")
        coeffs = tuple(tuple(float(c) for c in pair) for pair in self.coefficients)
        if self.target == CUSTOM and not coeffs:
            raise ArgumentError("custom target needs coefficients")
        if any(len(p) != 2 for p in coeffs):
            raise ArgumentError("coefficients are (cos, sin) pairs")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def intrinsic_dim(self) -> int:
        return 2 if self.kind == TORUS else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = [list(p) for p in self.coefficients]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ManifoldSpec:
        d = dict(d)
        d["coefficients"] = tuple(tuple(p) for p in d.get("coefficients", ()))
        return cls(**d)


def _angle_and_grad(x, u, v):
    """``atan2(v.x, u.x)`` and its ambient gradient."""
    p, q = x @ u, x @ v
    r2 = p * p + q * q
    theta = np.arctan2(q, p)
    grad = (p[:, None] * v[None, :] - q[:, None] * u[None, :]) / r2[:, None]
    return theta, grad


@dataclass
class ManifoldSampler:
    """Draws i.i.d. points from the pushforward of uniform chart angles."""

    spec: ManifoldSpec
    frame: np.ndarray = field(init=False, repr=False)
    beta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.spec.geometry_seed)
        d = self.spec.ambient_dim
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        self.frame = q
        beta = rng.standard_normal(d)
        self.beta = beta / np.linalg.norm(beta)

    def _chart_points(self, angles):
        s, f = self.spec, self.frame
        r = s.radius
        if s.kind == CIRCLE:
            t = angles[:, 0]
            return r * (np.cos(t)[:, None] * f[:, 0] + np.sin(t)[:, None] * f[:, 1])
        if s.kind == TORUS:
            a, b = angles[:, 0], angles[:, 1]
            c = r / math.sqrt(2.0)
            return c * (
                np.cos(a)[:, None] * f[:, 0]
                + np.sin(a)[:, None] * f[:, 1]
                + np.cos(b)[:, None] * f[:, 2]
                + np.sin(b)[:, None] * f[:, 3]
            )
        # trigonometric moment curve: every point has norm r
        t = angles[:, 0]
        harmonics = s.ambient_dim // 2
        pts = np.zeros((len(t), s.ambient_dim))
        for j in range(1, harmonics + 1):
            pts += np.cos(j * t)[:, None] * f[:, 2 * j - 2] + np.sin(j * t)[:, None] * f[:, 2 * j - 1]
        return r / math.sqrt(harmonics) * pts

    def sample(self, n: int, rng) -> tuple:
        angles = rng.uniform(0.0, 2 * math.pi, size=(n, self.spec.intrinsic_dim))
        pts = self._chart_points(angles)
        return pts, self.target(pts)

    def _chart_value_grad(self, x):
        s, f = self.spec, self.frame
        t, gt = _angle_and_grad(x, f[:, 0], f[:, 1])
        if s.target == CUSTOM:
            val = np.zeros(len(x))
            dval = np.zeros(len(x))
            for j, (a, b) in enumerate(s.coefficients, start=1):
                val += a * np.cos(j * t) + b * np.sin(j * t)
                dval += j * (b * np.cos(j * t) - a * np.sin(j * t))
            return val, dval[:, None] * gt
        val = np.sin(t) + 0.5 * np.cos(2 * t)
        grad = (np.cos(t) - np.sin(2 * t))[:, None] * gt
        if s.kind == TORUS:
            u, gu = _angle_and_grad(x, f[:, 2], f[:, 3])
            val = val + 0.5 * np.sin(u)
            grad = grad + (0.5 * np.cos(u))[:, None] * gu
        return val, grad

    def target(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.spec.target == LINEAR:
            return x @ self.beta
        return self._chart_value_grad(x)[0]

    def target_grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.spec.target == LINEAR:
            return np.tile(self.beta, (len(x), 1))
        return self._chart_value_grad(x)[1]


@dataclass
class Dataset:
    points: np.ndarray
    targets: np.ndarray
    sampler: ManifoldSampler
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def generate(spec: ManifoldSpec, n: int, seed: int = 0) -> Dataset:
    if n < 1:
        raise ArgumentError("n must be >= 1")
    sampler = ManifoldSampler(spec)
    pts, ys = sampler.sample(n, np.random.default_rng(seed))
    norms = np.linalg.norm(pts, axis=1)
    lo, hi = NORM_WINDOW
    assert norms.min() >= lo - 1e-12 and norms.max() <= hi + 1e-12
    return Dataset(pts, ys, sampler, seed)


# ---------------------------------------------------------------- CSV

_DECIMAL = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_HEX = re.compile(r"^[+-]?0x[0-9a-fA-F]+(\.[0-9a-fA-F]*)?p[+-]?\d+$")


def parse_number(text: str) -> float:
    """Strict decimal or hex-float parsing; rejects ``nan``, ``inf`` and padding."""
    if _DECIMAL.match(text):
        return float(text)
    if _HEX.match(text):
        return float.fromhex(text)
    raise ValueError(f"not a number: {text!r}")


def _fmt(x: float, hexfloat: bool) -> str:
    return float(x).hex() if hexfloat else repr(float(x))


def save_csv(path, points, targets, hexfloat: bool = False, meta: dict | None = None):
    """Write ``d`` feature columns then the target; optional sidecar ``<path>.json``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if points.shape[0] != targets.size:
        raise DimensionError("points and targets differ in length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row, y in zip(points, targets):
            writer.writerow([_fmt(v, hexfloat) for v in row] + [_fmt(y, hexfloat)])
    if meta is not None:
        side = {"d": points.shape[1], "n": points.shape[0], "hexfloat": hexfloat}
        side.update(meta)
        with open(f"{path}.json", "w") as fh:
            json.dump(side, fh, indent=1, sort_keys=True)
            fh.write("\n")


def save_dataset(path, ds: Dataset, hexfloat: bool = True):
    save_csv(path, ds.points, ds.targets, hexfloat, {"spec": ds.sampler.spec.to_dict(), "seed": ds.seed})


def load_csv(path) -> tuple:
    """Return ``(points, targets)``; raises ParseError carrying the line number."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [parse_number(c) for c in row]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
            if len(vals) < 2:
                raise ParseError("need at least one feature and a target", lineno)
            if rows and len(vals) != len(rows[0]):
                raise ParseError(f"expected {len(rows[0])} columns, got {len(vals)}", lineno)
            rows.append(vals)
    if not rows:
        raise ParseError("empty data file")
    arr = np.array(rows)
    return arr[:, :-1], arr[:, -1]


def load_sidecar(path) -> dict | None:
    try:
        with open(f"{path}.json") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return None
