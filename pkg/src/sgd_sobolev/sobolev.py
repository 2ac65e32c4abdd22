"""Sobolev seminorms of the model in the input variable and the bounds built on them.

All bounds use the upper end of the ``|W1^T|_{2k}`` interval. The local
smoothness constant ``C`` cannot be computed, so reports plug in a sampled
lower estimate and carry the label ``empirical-C``.

Norms of inputs are taken on the vectors the first layer actually sees, so
under ``fold_bias`` they include the appended constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln
from scipy.stats import norm as normal_dist

from .errors import ArgumentError, DimensionError
from .model import MlpModel, g_norms, operator_pnorm, per_sample_gradients, spectral_norm

SCHEMA_VERSION = 1
EMPIRICAL_C = "empirical-C"
MARGIN = 1.5
MIN_MC_SAMPLES = 10**4
VOLUME_RTOL = 0.02

BOUND_TAGS = ("sobolev-emp", "sob-2k", "neighbor-grad", "gen1", "robust")


@dataclass
class BoundReport:
    bound: str
    rhs: float
    lhs: float
    satisfied: bool
    inputs: dict
    label: str = EMPIRICAL_C
    regime_ok: bool = True
    mc: dict | None = None
    extra: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "bound": self.bound,
            "label": self.label,
            "rhs": _num(self.rhs),
            "lhs": _num(self.lhs),
            "satisfied": bool(self.satisfied),
            "regime_ok": bool(self.regime_ok),
            "inputs": {k: _num(v) for k, v in self.inputs.items()},
            "mc": None if self.mc is None else {k: _num(v) for k, v in self.mc.items()},
            "extra": {k: _num(v) for k, v in self.extra.items()},
            "notes": list(self.notes),
        }


def _num(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_num(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


# ---------------------------------------------------------------- basics


def seminorm_finite(model: MlpModel, points, k: int) -> float:
    """``((1/n) sum_i |grad_x f(x_i)|_{2k}^{2k})^{1/2k}``."""
    return g_norms(model, points, k)[1]


def min_norm(model: MlpModel, points, p: float) -> float:
    return float(np.min(np.linalg.norm(model.augment(points), ord=p, axis=1)))


def stability_factor(w: int, batch: int, eta: float, k: int, n: int | None = None) -> float:
    """``(w/B)^{1/2k} sqrt(2B/eta)``, or with ``2nw`` in place of ``w`` when ``n`` is given."""
    if not eta > 0:
        raise ArgumentError("eta must be > 0")
    count = w if n is None else 2 * n * w
    return (count / batch) ** (1.0 / (2 * k)) * math.sqrt(2.0 * batch / eta)


def moment_condition(model: MlpModel, points, eta: float, batch: int, k: int):
    """Per-coordinate moment condition implied by k-th order stability.

    Returns ``(holds, worst_ratio)`` for
    ``(1/n) sum_i a_ij^{2k} <= 2^k B^{k-1} / eta^k``.
    """
    _, gw, _, _ = per_sample_gradients(model, points)
    lhs = np.mean(gw ** (2 * k), axis=0)
    rhs = 2.0**k * batch ** (k - 1) / eta**k
    worst = float(np.max(lhs) / rhs)
    return worst <= 1.0, worst


def _common_inputs(model, points, eta, batch, k):
    lo, hi = operator_pnorm(model.first_layer.T, 2 * k)
    holds, worst = moment_condition(model, points, eta, batch, k)
    return {
        "eta": eta,
        "batch": batch,
        "k": k,
        "w": model.num_params,
        "n": len(points),
        "d": model.input_dim,
        "w1t_norm_lower": lo,
        "w1t_norm_upper": hi,
        "min_norm_2k": min_norm(model, points, 2 * k),
        "moment_condition_holds": holds,
        "moment_condition_worst_ratio": worst,
    }


def sobolev_emp_bound(model: MlpModel, points, eta: float, batch: int, k: int) -> BoundReport:
    """Seminorm on the training set against the stability bound and the moment form."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inp = _common_inputs(model, points, eta, batch, k)
    mn = inp["min_norm_2k"]
    if mn <= 0:
        raise ArgumentError("a training point has zero norm")
    ratio = inp["w1t_norm_upper"] / mn
    rhs = ratio * stability_factor(model.num_params, batch, eta, k)
    lhs = seminorm_finite(model, points, k)
    gw_k = g_norms(model, points, k)[0]
    cor = ratio * gw_k
    notes = [] if inp["moment_condition_holds"] else ["moment condition fails: stability hypothesis not met"]
    return BoundReport(
        "sobolev-emp", rhs, lhs, lhs <= rhs, inp, label="exact-norms",
        extra={"corollary_rhs": cor, "corollary_satisfied": lhs <= cor * (1 + 1e-12), "g_w_k": gw_k},
        notes=notes,
    )


def perturbation_matrix(w1, x_star, x) -> np.ndarray:
    """Minimal Frobenius-norm ``V`` with ``V x_star = W1 (x - x_star)``."""
    w1 = np.asarray(w1, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w1.ndim != 2 or x_star.shape != (w1.shape[1],) or x.shape != x_star.shape:
        raise DimensionError("shapes do not match W1")
    nrm2 = float(x_star @ x_star)
    if nrm2 == 0.0:
        raise ArgumentError("x_star must be nonzero")
    return np.outer(w1 @ (x - x_star), x_star) / nrm2


# ---------------------------------------------------------------- local smoothness


@dataclass
class SmoothnessProbe:
    C_hat: float
    delta_approx: float
    k: int
    samples: int
    violation_rate: float  # share of the second half of samples above the first-half max
    C_random: float = math.nan
    C_construct: float = math.nan

    def to_dict(self):
        return {k: _num(v) for k, v in self.__dict__.items()}


def _ball_directions(rng, count, dim):
    z = rng.standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _uniform_ball(rng, count, dim, radius):
    r = radius * rng.uniform(size=count) ** (1.0 / dim)
    return _ball_directions(rng, count, dim) * r[:, None]


def _grad_w_norms(model, pts, p):
    _, gw, _, _ = per_sample_gradients(model, pts)
    return np.linalg.norm(gw, ord=p, axis=1)


def smoothness_probe(model: MlpModel, x_star, delta_approx: float, k: int, samples: int = 64, seed: int = 0):
    """Sampled lower estimate of ``C`` at one or several centers.

    ``x_star`` may be a single point or an ``(n, d)`` array; the estimate is
    the worst ratio over all of them. The unperturbed ``W`` is included, so
    ``C_hat >= |g| / (|g| + 1)``.
    """
    if samples < 1:
        raise ArgumentError("samples must be >= 1")
    pts = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    p = 2 * k
    base = _grad_w_norms(model, pts, p) + 1.0
    rng = np.random.default_rng(seed)
    shifts = _uniform_ball(rng, samples, model.num_params, delta_approx)
    ratios = np.array([np.max(_grad_w_norms(model.with_params(model.params + s), pts, p) / base) for s in shifts])
    center = float(np.max((base - 1.0) / base))
    c_hat = max(center, float(ratios.max()))
    half = samples // 2
    if half >= 1 and samples - half >= 1:
        ref = max(center, ratios[:half].max())
        viol = float(np.mean(ratios[half:] > ref))
    else:
        viol = math.nan
    return SmoothnessProbe(c_hat, delta_approx, k, samples, viol, C_random=c_hat)


def _neighborhood_samples(rng, points, delta, per_point):
    """Uniform draws in each ball ``B(x_i, delta)`` plus the centers, tagged by center."""
    n, d = points.shape
    centers = np.repeat(np.arange(n), per_point)
    xs = points[centers] + _uniform_ball(rng, len(centers), d, delta)
    return np.concatenate([points, xs]), np.concatenate([np.arange(n), centers])


def construct_ratios(model: MlpModel, xs, centers, points, k: int):
    """Ratios ``|grad_W f(x_*, W')|_{2k} / (|grad_W f(x_*, W)|_{2k} + 1)`` at the proof's ``W'``.

    ``W'`` replaces ``W1`` by ``W1 + V`` with ``V`` the minimal perturbation
    moving ``x_*`` onto ``x``. Also returns ``|V|_F`` per sample.
    """
    p = 2 * k
    arch = model.arch
    w1 = model.first_layer
    size = arch.first_layer_size
    base = _grad_w_norms(model, points, p) + 1.0
    xa, pa = model.augment(xs), model.augment(points)
    ratios, vnorms = np.empty(len(xs)), np.empty(len(xs))
    for j, (x, c) in enumerate(zip(xa, centers)):
        v = perturbation_matrix(w1, pa[c], x)
        params = model.params.copy()
        params[:size] += v.ravel()
        g = _grad_w_norms(model.with_params(params), points[c][None, :], p)[0]
        ratios[j] = g / base[c]
        vnorms[j] = np.linalg.norm(v)
    return ratios, vnorms


def regime_limit(model: MlpModel, points, delta_approx: float) -> float:
    """Largest ``delta`` with ``delta <= delta_approx min_i |x_i|_2 / |W1|_2``."""
    w1n = spectral_norm(model.first_layer, tol=1e-8)
    if w1n == 0.0:
        return math.inf
    return delta_approx * min_norm(model, points, 2) / w1n


def estimate_c(
    model: MlpModel, points, delta: float, delta_approx: float, k: int,
    samples: int = 32, per_point: int = 4, seed: int = 0,
) -> SmoothnessProbe:
    """``C_hat`` over all training points: random-ball probe joined with the proof's perturbations."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    probe = smoothness_probe(model, points, delta_approx, k, samples, seed)
    rng = np.random.default_rng([seed, 1])
    xs, centers = _neighborhood_samples(rng, points, delta, per_point)
    ratios, vnorms = construct_ratios(model, xs, centers, points, k)
    admissible = vnorms <= delta_approx * (1 + 1e-12)
    c_con = float(ratios[admissible].max()) if admissible.any() else 0.0
    probe.C_construct = c_con
    probe.C_hat = max(probe.C_hat, c_con)
    return probe


# ---------------------------------------------------------------- pointwise and neighborhood bounds


def neighborhood_grad_bound(
    model: MlpModel, points, eta: float, batch: int, k: int, C_hat: float,
    delta: float, delta_approx: float, per_point: int = 16, seed: int = 0,
) -> BoundReport:
    """Sampled max of ``|grad_x f|_{2k}`` over the union of ``delta``-balls versus the uniform bound.

    Also checks the pointwise bound at each sample against its own center.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inp = _common_inputs(model, points, eta, batch, k)
    p = 2 * k
    n = len(points)
    limit = regime_limit(model, points, delta_approx)
    inp.update(C_hat=C_hat, delta=delta, delta_approx=delta_approx, delta_limit=limit)
    fac = stability_factor(model.num_params, batch, eta, k, n=n)
    rhs = C_hat * inp["w1t_norm_upper"] / inp["min_norm_2k"] * (fac + 1.0)
    rng = np.random.default_rng(seed)
    xs, centers = _neighborhood_samples(rng, points, delta, per_point)
    _, _, gx, _ = per_sample_gradients(model, xs)
    gx_norm = np.linalg.norm(gx, ord=p, axis=1)
    lhs = float(gx_norm.max())
    base = _grad_w_norms(model, points, p) + 1.0
    center_norm = np.linalg.norm(model.augment(points), ord=p, axis=1)
    point_rhs = C_hat * inp["w1t_norm_upper"] / center_norm[centers] * base[centers]
    worst = float(np.max(gx_norm / point_rhs))
    regime = delta <= limit
    notes = [] if regime else ["delta outside the local smoothness regime"]
    if not inp["moment_condition_holds"]:
        notes.append("moment condition fails: stability hypothesis not met")
    return BoundReport(
        "neighbor-grad", rhs, lhs, lhs <= rhs, inp, regime_ok=regime,
        mc={"samples": len(xs), "seed": seed},
        extra={"pointwise_worst_ratio": worst, "pointwise_satisfied": worst <= 1.0 + 1e-9},
        notes=notes,
    )


# ---------------------------------------------------------------- geometry


def log_ball_volume(d: int, radius: float) -> float:
    return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1) + d * math.log(radius)


def _coverage_counts(tree, xs, delta):
    return np.array([len(c) for c in tree.query_ball_point(xs, delta)])


@dataclass
class VolumeEstimate:
    volume: float
    rel_stderr: float
    samples: int
    seed: int
    mean_inv_kappa: float


def union_volume(points, delta: float, rtol: float = VOLUME_RTOL, seed: int = 0,
                 min_samples: int = MIN_MC_SAMPLES, max_samples: int = 10**6) -> VolumeEstimate:
    """Karp-Luby estimate of the volume of a union of equal balls.

    Draw a center uniformly, then a point uniformly in its ball; the union
    volume is ``n V_ball E[1/kappa]``. Sampling continues in blocks until the
    relative standard error is at most ``rtol``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = points.shape
    if not delta > 0:
        raise ArgumentError("delta must be > 0")
    tree = cKDTree(points)
    rng = np.random.default_rng(seed)
    inv = []
    total = 0
    while True:
        count = min_samples if total == 0 else min(total, max_samples - total)
        idx = rng.integers(0, n, count)
        xs = points[idx] + _uniform_ball(rng, count, d, delta)
        inv.append(1.0 / _coverage_counts(tree, xs, delta))
        total += count
        allv = np.concatenate(inv)
        mean = float(allv.mean())
        rel = float(allv.std(ddof=1) / math.sqrt(total) / mean) if total > 1 else math.inf
        if rel <= rtol or total >= max_samples:
            break
    vol = n * math.exp(log_ball_volume(d, delta)) * mean
    return VolumeEstimate(vol, rel, total, seed, mean)


def uniform_union_samples(points, delta: float, count: int, rng) -> np.ndarray:
    """Exactly uniform draws in the union of balls by ``1/kappa`` acceptance."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = points.shape
    tree = cKDTree(points)
    out = []
    have = 0
    while have < count:
        m = max(2 * (count - have), 64)
        xs = points[rng.integers(0, n, m)] + _uniform_ball(rng, m, d, delta)
        keep = rng.uniform(size=m) < 1.0 / _coverage_counts(tree, xs, delta)
        out.append(xs[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:count]


@dataclass
class ScatterReport:
    k_max: int
    k_integral: float  # (1/V) * integral of kappa = n V_ball / V
    passes: bool
    K: float
    samples: int


def scattered_check(points, delta: float, K: float | None = None, samples: int = MIN_MC_SAMPLES, seed: int = 0):
    """Largest ball-overlap count seen on points, close-pair midpoints and uniform draws."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(points)
    tree = cKDTree(points)
    probes = [points]
    pairs = np.array(sorted(tree.query_pairs(2 * delta)), dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        probes.append(0.5 * (points[pairs[:, 0]] + points[pairs[:, 1]]))
    rng = np.random.default_rng(seed)
    probes.append(uniform_union_samples(points, delta, samples, rng))
    k_max = int(_coverage_counts(tree, np.concatenate(probes), delta).max())
    vol = union_volume(points, delta, seed=seed)
    k_int = 1.0 / vol.mean_inv_kappa
    K = k_max if K is None else K
    return ScatterReport(k_max, k_int, k_max <= K, K, samples)


@dataclass
class CoverReport:
    eps_hat: float
    lower: float
    upper: float
    trials: int
    confidence: float


def wilson_interval(successes: int, trials: int, confidence: float = 0.99):
    z = float(normal_dist.ppf(0.5 + confidence / 2))
    p = successes / trials
    denom = 1 + z * z / trials
    mid = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, mid - half), min(1.0, mid + half)


def covering_check(points, delta: float, test_sampler, trials: int, seed: int = 0, confidence: float = 0.99):
    """Fraction of fresh draws farther than ``delta`` from every training point.

    ``test_sampler(count, rng)`` must return an array of points, or a tuple
    whose first entry is one.
    """
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    draw = test_sampler(trials, rng)
    xs = draw[0] if isinstance(draw, tuple) else draw
    dist, _ = cKDTree(np.atleast_2d(points)).query(np.atleast_2d(xs))
    misses = int(np.sum(dist > delta))
    lo, hi = wilson_interval(misses, trials, confidence)
    return CoverReport(misses / trials, lo, hi, trials, confidence)


def sob_neighborhood_bound(
    model: MlpModel, points, delta: float, K: float, eta: float, batch: int, k: int, C_hat: float,
    delta_approx: float | None = None, samples: int = MIN_MC_SAMPLES, seed: int = 0,
) -> BoundReport:
    """Lebesgue seminorm over the union of balls versus the scattered-data bound."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    scatter = scattered_check(points, delta, K, seed=seed)
    if not scatter.passes:
        raise ArgumentError(f"points are not ({delta}, {K})-scattered: saw overlap {scatter.k_max}")
    K = scatter.K
    inp = _common_inputs(model, points, eta, batch, k)
    vol = union_volume(points, delta, seed=seed)
    inp.update(C_hat=C_hat, delta=delta, K=K, volume=vol.volume, k_max_seen=scatter.k_max)
    fac = stability_factor(model.num_params, batch, eta, k)
    p = 2 * k
    rhs = (K * vol.volume) ** (1.0 / p) * 2 * C_hat * inp["w1t_norm_upper"] / inp["min_norm_2k"] * (fac + 1.0)
    xs = uniform_union_samples(points, delta, samples, np.random.default_rng([seed, 2]))
    _, _, gx, _ = per_sample_gradients(model, xs)
    vals = np.sum(np.abs(gx) ** p, axis=1)
    mean = float(vals.mean())
    lhs = (vol.volume * mean) ** (1.0 / p)
    # delta-method error for (V m)^{1/p}
    rel = math.hypot(vol.rel_stderr, float(vals.std(ddof=1)) / math.sqrt(samples) / mean if mean > 0 else 0.0)
    regime = True
    notes = []
    if delta_approx is not None:
        limit = regime_limit(model, points, delta_approx)
        inp.update(delta_approx=delta_approx, delta_limit=limit)
        regime = delta <= limit
        if not regime:
            notes.append("delta outside the local smoothness regime")
    return BoundReport(
        "sob-2k", rhs, lhs, lhs <= rhs, inp, regime_ok=regime,
        mc={"samples": samples, "volume_samples": vol.samples, "rel_stderr": rel / p, "seed": seed},
        notes=notes,
    )


# ---------------------------------------------------------------- generalization and robustness


def generalization_bound(
    model: MlpModel, target, points, mu_sampler, delta: float, eps2: float, C_hat: float,
    eta: float, batch: int, k: int, delta_approx: float | None = None,
    samples: int = MIN_MC_SAMPLES, seed: int = 0, target_grad=None,
) -> BoundReport:
    """Monte-Carlo test error against the covered-data bound.

    ``M1`` and ``M2`` are the sampled maxima of ``|f|, |f*|`` and ``|grad f*|_2``
    times a 1.5 safety factor. Without ``target_grad`` the gradient of ``f*``
    is taken by central differences.
    """
    if samples < MIN_MC_SAMPLES:
        raise ArgumentError(f"need at least {MIN_MC_SAMPLES} samples")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rng = np.random.default_rng(seed)
    draw = mu_sampler(samples, rng)
    xs = draw[0] if isinstance(draw, tuple) else draw
    fx, _, _, _ = per_sample_gradients(model, xs)
    fs = np.asarray(target(xs), dtype=np.float64)
    sq = (fx - fs) ** 2
    lhs = float(sq.mean())
    stderr = float(sq.std(ddof=1) / math.sqrt(samples))
    if target_grad is not None:
        gstar = np.asarray(target_grad(xs))
    else:
        h = 1e-6
        eye = np.eye(xs.shape[1])
        gstar = np.stack([(target(xs + h * e) - target(xs - h * e)) / (2 * h) for e in eye], axis=1)
    m1 = MARGIN * max(float(np.abs(fx).max()), float(np.abs(fs).max()))
    m2 = MARGIN * float(np.linalg.norm(gstar, axis=1).max())
    inp = _common_inputs(model, points, eta, batch, k)
    d = model.input_dim
    inp.update(C_hat=C_hat, delta=delta, eps2=eps2, M1=m1, M2=m2, margin=MARGIN)
    fac = stability_factor(model.num_params, batch, eta, k, n=len(points))
    lead = C_hat * inp["w1t_norm_upper"] / inp["min_norm_2k"] * (fac + 1.0)
    rhs = 2 * d * lead**2 * delta**2 + 2 * m2**2 * delta**2 + 4 * m1**2 * eps2
    regime, notes = True, ["training-set draw probability eps1 not assessed in a single run"]
    if delta_approx is not None:
        limit = regime_limit(model, points, delta_approx)
        inp.update(delta_approx=delta_approx, delta_limit=limit)
        regime = delta <= limit
        if not regime:
            notes.append("delta outside the local smoothness regime")
    return BoundReport(
        "gen1", rhs, lhs, lhs <= rhs, inp, regime_ok=regime,
        mc={"samples": samples, "stderr": stderr, "seed": seed}, notes=notes,
    )


def _project(x, center, radius):
    diff = x - center
    nrm = np.linalg.norm(diff, axis=1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(nrm, 1e-300))
    return center + diff * scale


def robustness_bound(
    model: MlpModel, points, delta: float, eta: float, batch: int, k: int, C_hat: float,
    delta_approx: float | None = None, random_probes: int = 16, ascent_steps: int = 20, seed: int = 0,
) -> BoundReport:
    """Worst ``|f(x) - f(x_i)|`` found in the ``delta``-balls versus the robustness bound.

    The search combines uniform random draws with projected, normalized
    input-gradient ascent on ``|f(x) - f(x_i)|`` from each random start.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = points.shape
    inp = _common_inputs(model, points, eta, batch, k)
    inp.update(C_hat=C_hat, delta=delta)
    fac = stability_factor(model.num_params, batch, eta, k, n=n)
    rhs = C_hat * math.sqrt(d) * inp["w1t_norm_upper"] / inp["min_norm_2k"] * (fac + 1.0) * delta
    f0, _, _, _ = per_sample_gradients(model, points)
    if delta == 0:
        lhs = 0.0
    else:
        rng = np.random.default_rng(seed)
        centers = np.repeat(points, random_probes, axis=0)
        ref = np.repeat(f0, random_probes)
        xs = centers + _uniform_ball(rng, len(centers), d, delta)
        fx, _, gx, _ = per_sample_gradients(model, xs)
        best = np.abs(fx - ref)
        step = delta / 5.0
        for _ in range(ascent_steps):
            sign = np.where(fx >= ref, 1.0, -1.0)
            gn = np.linalg.norm(gx, axis=1, keepdims=True)
            xs = _project(xs + step * sign[:, None] * gx / np.maximum(gn, 1e-300), centers, delta)
            fx, _, gx, _ = per_sample_gradients(model, xs)
            best = np.maximum(best, np.abs(fx - ref))
        lhs = float(best.max())
    regime, notes = True, []
    if delta_approx is not None:
        limit = regime_limit(model, points, delta_approx)
        inp.update(delta_approx=delta_approx, delta_limit=limit)
        regime = delta <= limit
        if not regime:
            notes.append("delta outside the local smoothness regime")
    return BoundReport(
        "robust", rhs, lhs, lhs <= rhs, inp, regime_ok=regime,
        mc={"samples": n * random_probes, "ascent_steps": ascent_steps, "seed": seed}, notes=notes,
    )
