"""Linear stability of SGD around an interpolating minimum.

Near a global minimum the SGD iterates follow the random linear map
``W <- (I - eta/B * sum_{i in batch} a_i a_i^T) W`` where ``a_i`` is the
parameter gradient at sample ``i``. The k-th moment ``E W^{(x)k}`` evolves
under the averaged operator ``T_k``; the minimum is k-th order stable when
``T_k`` does not expand symmetric tensors, i.e. its spectral radius is at
most one.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache, reduce

import numpy as np

from . import kernels
from .errors import ArgumentError, CapacityError, DimensionError, ParseError
from .tensor_core import (
    DEFAULT_COMPRESS_TOL,
    DEFAULT_MAX_TERMS,
    SymTensor,
    compress,
    frob_norm,
    rank_one,
    to_dense,
)

ENUM_CAP = 10**5
OPERATOR_CAP = 2**24  # entries of a dense w^k x w^k operator
DENSE_CAP = 10**6
STABLE_TOL = 1e-9
DIVERGENCE_LIMIT = 1e300
MC_BATCHES = 10**4

EXACT = "exact"
MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class GradientSet:
    """Per-sample parameter gradients ``a_i`` stacked as rows, shape ``(n, w)``."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError("gradients must be a non-empty (n, w) array")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("gradients must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def w(self) -> int:
        return self.vectors.shape[1]

    def mean_hessian(self) -> np.ndarray:
        """``H = (1/n) sum_i a_i a_i^T``."""
        return self.vectors.T @ self.vectors / self.n

    def noise_covariance(self) -> np.ndarray:
        """``Sigma = (1/n) sum_i H_i^2 - H^2`` with ``H_i^2 = |a_i|^2 a_i a_i^T``."""
        sq = np.sum(self.vectors**2, axis=1)
        h = self.mean_hessian()
        return (self.vectors.T * sq) @ self.vectors / self.n - h @ h

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.vectors:
                writer.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> GradientSet:
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    rows.append([float(x) for x in row])
                except ValueError as exc:
                    raise ParseError(f"non-numeric entry ({exc})", lineno) from exc
                if len(rows[-1]) != len(rows[0]):
                    raise ParseError(
                        f"expected {len(rows[0])} columns, got {len(rows[-1])}", lineno
                    )
        if not rows:
            raise ParseError("empty gradient file")
        return cls(np.array(rows))


@dataclass(frozen=True)
class SgdConfig:
    eta: float
    batch: int
    order: int = 2
    seed: int = 0
    mode: str = EXACT
    num_batches: int = MC_BATCHES
    enum_cap: int = ENUM_CAP
    max_terms: int = DEFAULT_MAX_TERMS
    compress_tol: float = DEFAULT_COMPRESS_TOL

    def __post_init__(self):
        if not self.eta > 0:
            raise ArgumentError("eta must be > 0")
        if self.batch < 1:
            raise ArgumentError("batch must be >= 1")
        if self.order < 1:
            raise ArgumentError("order must be >= 1")
        if self.mode not in (EXACT, MONTE_CARLO):
            raise ArgumentError(f"unknown mode {self.mode!r}")
        if self.num_batches < 1:
            raise ArgumentError("num_batches must be >= 1")

    def check_against(self, g: GradientSet):
        if self.batch > g.n:
            raise ArgumentError(f"batch {self.batch} exceeds sample count {g.n}")


@dataclass
class StabilityVerdict:
    spectral_radius_estimate: float
    stable: bool
    method: str
    iterations_used: int
    tolerance: float
    converged: bool = True
    # even k only: whether the dominant eigentensor passed the nonnegative-cone test
    cone_check: str = "n/a"
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- batches


def sample_batches(rng, n, batch, count) -> np.ndarray:
    """``count`` independent uniform ``batch``-subsets of ``range(n)``, one per row."""
    keys = rng.random((count, n))
    return np.argsort(keys, axis=1, kind="stable")[:, :batch].astype(np.int64)


def all_batches(n, batch, cap=ENUM_CAP) -> np.ndarray:
    count = math.comb(n, batch)
    if count > cap:
        raise CapacityError(
            f"C({n},{batch}) = {count} batches exceeds the enumeration cap {cap}; "
            "use monte-carlo mode"
        )
    return np.array(list(itertools.combinations(range(n), batch)), dtype=np.int64).reshape(
        count, batch
    )


def _check_batch(g: GradientSet, idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ArgumentError("empty batch")
    if len(set(idx.tolist())) != idx.size:
        raise ArgumentError("batch indices must be distinct")
    if idx.min() < 0 or idx.max() >= g.n:
        raise ArgumentError(f"batch index out of range [0, {g.n})")
    return idx


# ---------------------------------------------------------------- operators


def batch_matrix(g: GradientSet, idx, eta) -> np.ndarray:
    """``M_J = I - (eta/B) sum_{j in J} a_j a_j^T``."""
    idx = _check_batch(g, idx)
    rows = g.vectors[idx]
    return np.eye(g.w) - (eta / idx.size) * rows.T @ rows


def apply_batch_operator(g: GradientSet, batch_indices, a: SymTensor, cfg: SgdConfig) -> SymTensor:
    """Map every term ``(c, v)`` of ``a`` to ``(c, M_J v)``."""
    idx = _check_batch(g, batch_indices)
    if a.order != cfg.order:
        raise DimensionError(f"tensor order {a.order} != configured order {cfg.order}")
    if a.dim != g.w:
        raise DimensionError(f"tensor dim {a.dim} != parameter count {g.w}")
    if a.num_terms == 0:
        return a
    out = kernels.batch_apply(a.vectors, g.vectors, idx[None, :], cfg.eta / idx.size)
    return SymTensor(a.order, a.coeffs, out[0])


def apply_expected_operator(
    g: GradientSet, a: SymTensor, cfg: SgdConfig, rng=None, batches=None, compress_result=None
) -> SymTensor:
    """Average of ``apply_batch_operator`` over batches.

    Exact mode enumerates all ``C(n, B)`` subsets. Monte-Carlo mode averages
    over ``cfg.num_batches`` uniformly drawn subsets from ``rng`` (seeded from
    ``cfg.seed`` when omitted); ``batches`` overrides the draw. The result is
    compressed in Monte-Carlo mode, and in exact mode only when asked.
    """
    cfg.check_against(g)
    if a.order != cfg.order or a.dim != g.w:
        raise DimensionError("tensor does not match gradient set / config")
    if batches is None:
        if cfg.mode == EXACT:
            batches = all_batches(g.n, cfg.batch, cfg.enum_cap)
        else:
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            batches = sample_batches(rng, g.n, cfg.batch, cfg.num_batches)
    batches = np.asarray(batches, dtype=np.int64)
    if a.num_terms == 0:
        return a
    out = kernels.batch_apply(a.vectors, g.vectors, batches, cfg.eta / cfg.batch)
    nb = batches.shape[0]
    result = SymTensor(a.order, np.tile(a.coeffs, nb) / nb, out.reshape(-1, g.w))
    if compress_result is None:
        compress_result = cfg.mode == MONTE_CARLO
    if compress_result:
        result = compress(result, cfg.max_terms, cfg.compress_tol)
    return result


def _kron_power(m, k):
    return reduce(np.kron, [m] * k)


def dense_operator(
    g: GradientSet, cfg: SgdConfig, cap: int = OPERATOR_CAP, batches=None
) -> np.ndarray:
    """Explicit ``w^k x w^k`` matrix ``mean_J M_J^{(x)k}`` over all batches."""
    cfg.check_against(g)
    size = g.w**cfg.order
    if size * size > cap:
        raise CapacityError(f"dense operator needs {size}x{size} entries, cap is {cap}")
    if batches is None:
        batches = all_batches(g.n, cfg.batch, cfg.enum_cap)
    batches = np.asarray(batches, dtype=np.int64)
    w, k = g.w, cfg.order
    total = np.zeros((size, size))
    chunk = max(1, min(len(batches), DENSE_CAP // (w * w)))
    for start in range(0, len(batches), chunk):
        rows = g.vectors[batches[start : start + chunk]]
        mats = np.eye(w) - (cfg.eta / cfg.batch) * np.einsum("jbi,jbl->jil", rows, rows)
        if k == 1:
            total += mats.sum(axis=0)
        elif k == 2:
            x = mats.reshape(len(mats), w * w)
            total += (x.T @ x).reshape(w, w, w, w).transpose(0, 2, 1, 3).reshape(size, size)
        else:
            for m in mats:
                total += _kron_power(m, k)
    total /= len(batches)
    return 0.5 * (total + total.T)


@lru_cache(maxsize=32)
def symmetric_basis(w, k) -> np.ndarray:
    """Orthonormal basis (columns) of the symmetric subspace of ``(R^w)^{(x)k}``."""
    cols = []
    for ms in itertools.combinations_with_replacement(range(w), k):
        col = np.zeros(w**k)
        for perm in set(itertools.permutations(ms)):
            col[np.ravel_multi_index(perm, (w,) * k)] = 1.0
        cols.append(col / np.linalg.norm(col))
    basis = np.array(cols).T
    basis.setflags(write=False)
    return basis


def symmetric_radius(op: np.ndarray, w: int, k: int) -> float:
    """Spectral radius of a dense operator restricted to symmetric tensors."""
    q = symmetric_basis(w, k)
    return float(np.max(np.abs(np.linalg.eigvalsh(q.T @ op @ q))))


# ---------------------------------------------------------------- verdicts


def _cone_check(vec, w, k, rng, samples=2000, tol=1e-10) -> str:
    """Necessary test for the nonnegative cone on an eigentensor (even k).

    The sign of an eigenvector is arbitrary, so the form may be all
    nonnegative or all nonpositive.
    """
    t = vec.reshape((w,) * k)
    t = sum(t.transpose(p) for p in itertools.permutations(range(k))) / math.factorial(k)
    if k == 2:
        ev = np.linalg.eigvalsh(t)
        scale = max(np.max(np.abs(ev)), 1e-300)
        ok = np.all(ev >= -tol * scale) or np.all(ev <= tol * scale)
        return "pass" if ok else "fail"
    xs = rng.standard_normal((samples, w))
    xs /= np.linalg.norm(xs, axis=1, keepdims=True)
    vals = t.reshape(w, -1)
    form = np.einsum("si,ij->sj", xs, vals)
    for _ in range(k - 1):
        form = form.reshape(samples, w, -1)
        form = np.einsum("sij,si->sj", form, xs)
    form = form.reshape(samples)
    scale = max(np.max(np.abs(form)), 1e-300)
    ok = np.all(form >= -tol * scale) or np.all(form <= tol * scale)
    return "pass (sampled)" if ok else "fail"


def _random_start(w, k, rng, terms=8) -> SymTensor:
    vecs = rng.standard_normal((terms, w))
    if k % 2 == 0:
        coeffs = rng.uniform(0.5, 1.5, terms)
    else:
        coeffs = rng.standard_normal(terms)
    a = SymTensor(k, coeffs, vecs)
    return a.scale(1.0 / frob_norm(a))


def check_stability(
    g: GradientSet,
    cfg: SgdConfig,
    tol: float = STABLE_TOL,
    method: str = "auto",
    max_iter: int = 2000,
    rel_tol: float = 1e-12,
    reduce_span: bool = True,
) -> StabilityVerdict:
    """Decide k-th order linear stability.

    ``method`` is ``"dense-oracle"``, ``"power-iteration"`` or ``"auto"``
    (dense when the operator fits its cap). Power iteration repeatedly
    applies the expected operator to a random tensor; for even k it starts
    in, and is projected back onto, the nonnegative rank-one cone. In
    Monte-Carlo mode one batch sample is drawn up front and reused, so the
    iteration targets a fixed sampled operator.

    Unless the dense oracle is used on the full space, gradients that span
    fewer than ``w`` dimensions are first reduced to their span (see
    ``_span_verdict``); ``reduce_span=False`` disables this.
    """
    cfg.check_against(g)
    k = cfg.order
    rng = np.random.default_rng(cfg.seed)
    if method == "auto" and _dense_fits(g, cfg):
        method = "dense-oracle"
    if method in ("auto", "power-iteration") and reduce_span:
        red = span_coordinates(g)
        if red.w < g.w:
            return _span_verdict(red, cfg, tol, method, max_iter, rel_tol)
    if method == "auto":
        method = "power-iteration"

    if method == "dense-oracle":
        batches = (
            sample_batches(rng, g.n, cfg.batch, cfg.num_batches)
            if cfg.mode == MONTE_CARLO
            else None
        )
        op = dense_operator(g, cfg, batches=batches)
        evals, evecs = np.linalg.eigh(op)
        top = int(np.argmax(np.abs(evals)))
        radius = float(abs(evals[top]))
        cone = _cone_check(evecs[:, top], g.w, k, rng) if k % 2 == 0 else "n/a"
        name = "dense-oracle" if cfg.mode == EXACT else "monte-carlo"
        return StabilityVerdict(radius, radius <= 1 + tol, name, 1, tol, True, cone)

    if method != "power-iteration":
        raise ArgumentError(f"unknown method {method!r}")
    batches = (
        sample_batches(rng, g.n, cfg.batch, cfg.num_batches)
        if cfg.mode == MONTE_CARLO
        else all_batches(g.n, cfg.batch, cfg.enum_cap)
    )
    a = _random_start(g.w, k, rng)
    nonneg = k % 2 == 0
    ratios = []
    estimate, converged, it = 0.0, False, 0
    for it in range(1, max_iter + 1):
        b = apply_expected_operator(g, a, cfg, batches=batches, compress_result=False)
        b = compress(b, cfg.max_terms, cfg.compress_tol, nonnegative=nonneg)
        nb = frob_norm(b)
        if nb == 0.0:
            estimate, converged = 0.0, True
            break
        ratios.append(nb)  # a has unit norm
        a = b.scale(1.0 / nb)
        if len(ratios) >= 3:
            # geometric mean of consecutive ratios absorbs +/- eigenvalue pairs
            cur = math.sqrt(ratios[-1] * ratios[-2])
            prev = math.sqrt(ratios[-2] * ratios[-3])
            estimate = cur
            if abs(cur - prev) <= rel_tol * cur:
                converged = True
                break
        else:
            estimate = nb
    name = "power-iteration" if cfg.mode == EXACT else "monte-carlo"
    verdict = StabilityVerdict(estimate, estimate <= 1 + tol, name, it, tol, converged)
    if nonneg:
        verdict.notes.append(
            "iterates projected onto nonnegative rank-one sums; estimate is a lower bound "
            "on the cone growth rate"
        )
    if not converged:
        verdict.notes.append("inconclusive: growth ratio did not settle within max_iter")
    return verdict


def _dense_fits(g: GradientSet, cfg: SgdConfig) -> bool:
    return (g.w**cfg.order) ** 2 <= OPERATOR_CAP and (
        cfg.mode == MONTE_CARLO or math.comb(g.n, cfg.batch) <= cfg.enum_cap
    )


def _span_verdict(red: GradientSet, cfg, tol, method, max_iter, rel_tol) -> StabilityVerdict:
    """Verdict from gradients ``red`` given in coordinates of their span S.

    Each ``M_J`` is block diagonal over S and its complement, acting as the
    identity on the latter, so symmetric ``k``-tensors split into blocks
    ``Sym^j(S) (x) Sym^(k-j)(S^perp)`` on which ``T_k`` acts as ``T_j`` on S.
    The radius is therefore the largest of 1 (the ``j = 0`` block) and the
    order-``j`` radii on S for ``1 <= j <= k``.
    """
    parts = [
        check_stability(red, replace(cfg, order=j), tol, method, max_iter, rel_tol, reduce_span=False)
        for j in range(1, cfg.order + 1)
    ]
    radii = [p.spectral_radius_estimate for p in parts]
    radius = max([1.0] + radii)
    top = parts[-1]
    verdict = StabilityVerdict(
        radius,
        radius <= 1 + tol,
        top.method,
        sum(p.iterations_used for p in parts),
        tol,
        all(p.converged for p in parts),
        top.cone_check if radii[-1] == radius else "n/a",
    )
    verdict.notes.append(
        f"reduced to the {red.w}-dimensional gradient span; radius is the max over orders "
        f"1..{cfg.order} on the span ({', '.join(f'{r:.6g}' for r in radii)}) and 1 off it"
    )
    for p in parts:
        verdict.notes.extend(n for n in p.notes if n not in verdict.notes)
    return verdict


# ---------------------------------------------------------------- k = 2


@dataclass
class SecondOrderSummary:
    radius_kron: float
    radius_wu: float
    sharpness: float
    nonuniformity: float


def k2_closed_form(g: GradientSet, eta: float, batch: int, cap: int = OPERATOR_CAP):
    """Second-moment operator written through ``H``, ``H_i`` and ``Sigma``.

    ``radius_kron`` is the spectral radius of
    ``(I - eta H)^{(x)2} + c (eta^2/n) sum_i (H_i^{(x)2} - H^{(x)2})`` with
    ``c = (n-B)/(B(n-1))``; ``radius_wu`` is
    ``lambda_max((I - eta H)^2 + c eta^2 Sigma)``.
    """
    n, w = g.n, g.w
    if n < 2:
        raise ArgumentError("closed form needs n >= 2")
    if not 1 <= batch <= n:
        raise ArgumentError("batch must lie in [1, n]")
    if w**4 > cap:
        raise CapacityError(f"w^2 x w^2 operator needs {w**4} entries, cap is {cap}")
    c = (n - batch) / (batch * (n - 1))
    h = g.mean_hessian()
    gd = np.eye(w) - eta * h
    noise = sum(np.kron(np.outer(a, a), np.outer(a, a)) for a in g.vectors) - n * np.kron(h, h)
    op = np.kron(gd, gd) + c * eta**2 / n * noise
    op = 0.5 * (op + op.T)
    radius_kron = float(np.max(np.abs(np.linalg.eigvalsh(op))))
    sigma = g.noise_covariance()
    wu = gd @ gd + c * eta**2 * sigma
    radius_wu = float(np.max(np.linalg.eigvalsh(0.5 * (wu + wu.T))))
    return SecondOrderSummary(
        radius_kron,
        radius_wu,
        float(np.max(np.linalg.eigvalsh(h))),
        float(np.max(np.linalg.eigvalsh(0.5 * (sigma + sigma.T)))),
    )


def second_moment_map(g: GradientSet, eta: float, batch: int):
    """Matrix-free ``X -> T_2 X`` on symmetric ``w x w`` matrices.

    Uses ``T_2 X = (I - eta H) X (I - eta H) + c eta^2/n sum_i (H_i X H_i - H X H)``
    with ``H_i X H_i = (a_i^T X a_i) a_i a_i^T``; cost is ``O(n w^2)``.
    """
    n = g.n
    c = (n - batch) / (batch * (n - 1)) if n > 1 else 0.0
    a = g.vectors
    h = g.mean_hessian()
    gd = np.eye(g.w) - eta * h

    def apply(x):
        quad = np.einsum("iw,wv,iv->i", a, x, a)
        out = gd @ x @ gd + c * eta**2 / n * ((a.T * quad) @ a - n * h @ x @ h)
        return 0.5 * (out + out.T)

    return apply


def span_coordinates(g: GradientSet, rtol=1e-12) -> GradientSet:
    """Gradients expressed in an orthonormal basis of their span.

    Every batch matrix is the identity on the orthogonal complement, so
    the operators restricted to the span carry all nontrivial spectrum.
    """
    u, s, vt = np.linalg.svd(g.vectors, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    rank = max(rank, 1)
    return GradientSet(u[:, :rank] * s[:rank])


def k2_radius_matrix_free(g: GradientSet, eta: float, batch: int, tol=1e-10) -> float:
    """Spectral radius of ``T_2`` on all of ``R^{w x w}`` without forming it.

    Works in span coordinates: with rank ``r < w`` the full spectrum is the
    union of ``T_2`` on the span, ``I - eta H`` on the span (mixed span /
    complement tensors) and the eigenvalue 1.
    """
    from scipy.sparse.linalg import LinearOperator, eigsh

    red = span_coordinates(g)
    r = red.w
    t2 = second_moment_map(red, eta, batch)
    radii = []
    if r < g.w:
        radii.append(1.0)
        radii.append(float(np.max(np.abs(np.linalg.eigvalsh(np.eye(r) - eta * red.mean_hessian())))))
    if r * r <= 400:
        q = symmetric_basis(r, 2)
        cols = [t2(q[:, j].reshape(r, r)).reshape(-1) for j in range(q.shape[1])]
        radii.append(float(np.max(np.abs(np.linalg.eigvalsh(q.T @ np.array(cols).T)))))
    else:
        op = LinearOperator(
            (r * r, r * r), matvec=lambda v: t2(v.reshape(r, r)).reshape(-1), dtype=np.float64
        )
        val = eigsh(op, k=1, which="LM", tol=tol, return_eigenvectors=False)
        radii.append(float(np.max(np.abs(val))))
    return max(radii)


# ---------------------------------------------------------------- moment bounds


@dataclass
class MomentReport:
    per_coordinate: np.ndarray
    rhs: float  # constant as stated in the theorem
    rhs_proof: float  # constant reached at the end of the proof
    summed_lhs: float
    summed_rhs: float
    satisfied: bool
    k: int

    def to_dict(self):
        d = asdict(self)
        d["per_coordinate"] = self.per_coordinate.tolist()
        d["max_coordinate"] = float(np.max(self.per_coordinate))
        return d


def moment_bound_check(g: GradientSet, eta: float, batch: int, k: int) -> MomentReport:
    """Per-coordinate ``(1/n) sum_i a_ij^{2k}`` against ``2 (2B)^{k-1} / eta^k``."""
    if k < 1:
        raise ArgumentError("k must be >= 1")
    per = np.mean(g.vectors ** (2 * k), axis=0)
    rhs = 2.0**k * batch ** (k - 1) / eta**k
    rhs_proof = 2.0 * (2.0 * batch) ** (k - 1) / eta**k
    summed_lhs = float(np.sum(per))
    summed_rhs = 2.0 * g.w * (2.0 * batch) ** (k - 1) / eta**k
    satisfied = bool(np.all(per <= rhs_proof * (1 + 1e-12)))
    return MomentReport(per, rhs, rhs_proof, summed_lhs, summed_rhs, satisfied, k)


def holder_corollary(g: GradientSet, eta: float, batch: int, k: int):
    """Mean ``2k``-norm of the gradients and its stability-implied ceiling."""
    lhs = float(np.mean(np.sum(np.abs(g.vectors) ** (2 * k), axis=1) ** (1.0 / (2 * k))))
    rhs = (g.w / batch) ** (1.0 / (2 * k)) * math.sqrt(2.0 * batch / eta)
    return lhs, rhs


def lemma_power_gap(t, k):
    """Return ``2^{k-1}((t-1)^k + 1) - t^k``, nonnegative for ``t >= 0``."""
    t = np.asarray(t, dtype=np.float64)
    return 2.0 ** (k - 1) * ((t - 1.0) ** k + 1.0) - t**k


# ---------------------------------------------------------------- simulation


@dataclass
class SimulationResult:
    norms: np.ndarray  # estimated |E W_t^{(x)k}|_F for t = 0..steps
    diverged: bool
    replicas: int
    k: int

    def growth_rate(self, fraction=0.5) -> float:
        """Least-squares slope of ``log norm`` over the trailing ``fraction`` of the run."""
        logs = np.log(self.norms)
        start = int(len(logs) * (1 - fraction))
        t = np.arange(start, len(logs))
        y = logs[start:]
        ok = np.isfinite(y)
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(t[ok], y[ok], 1)[0])


def initial_replicas(w0_dist, w, replicas, rng) -> np.ndarray:
    kind = w0_dist[0]
    if kind == "point":
        v = np.asarray(w0_dist[1], dtype=np.float64)
        if v.shape != (w,):
            raise DimensionError("point-mass vector has the wrong length")
        return np.tile(v, (replicas, 1))
    if kind == "gaussian":
        return float(w0_dist[1]) * rng.standard_normal((replicas, w))
    if kind == "rademacher":
        vecs = np.atleast_2d(np.asarray(w0_dist[1], dtype=np.float64))
        if vecs.shape[1] != w:
            raise DimensionError("rank-one set vectors have the wrong length")
        pick = rng.integers(0, vecs.shape[0], replicas)
        signs = rng.choice([-1.0, 1.0], replicas)
        return vecs[pick] * signs[:, None]
    raise ArgumentError(f"unknown initial distribution {kind!r}")


def simulate_linearized(
    g: GradientSet, cfg: SgdConfig, w0_dist, horizon: int, replicas: int
) -> SimulationResult:
    """Run ``replicas`` independent linearized SGD trajectories.

    At each step ``E W_t^{(x)k}`` is estimated by the replica average in
    rank-one form and its Frobenius norm recorded. The replica cloud is
    rescaled every step and the scale tracked in log space, so only the
    reported norm can overflow; beyond ``DIVERGENCE_LIMIT`` the run stops
    with ``diverged`` set.
    """
    if horizon < 1 or replicas < 1:
        raise ArgumentError("horizon and replicas must be >= 1")
    cfg.check_against(g)
    k = cfg.order
    rng = np.random.default_rng(cfg.seed)
    state = initial_replicas(w0_dist, g.w, replicas, rng)
    weights = np.full(replicas, 1.0 / replicas)
    log_scale = 0.0
    limit = math.log(DIVERGENCE_LIMIT)

    dense = g.w**k <= replicas  # dense mean tensor is cheaper than the replica Gram sum

    def moment_log_norm(x):
        if dense:
            sq = float(np.sum(to_dense(rank_one(weights, x, k)).entries ** 2))
        else:
            sq = kernels.gram_power_sum(weights, x, weights, x, k)
        return 0.5 * math.log(sq) if sq > 0 else -math.inf

    norms = [math.exp(moment_log_norm(state))]
    diverged = False
    step = cfg.eta / cfg.batch
    for _ in range(horizon):
        idx = sample_batches(rng, g.n, cfg.batch, replicas)
        state = kernels.rowwise_apply(state, g.vectors, idx, step)
        peak = float(np.max(np.abs(state)))
        if peak > 0:
            state /= peak
            log_scale += math.log(peak)
        log_norm = moment_log_norm(state) + k * log_scale
        if log_norm > limit:
            diverged = True
            break
        norms.append(math.exp(log_norm))
    return SimulationResult(np.array(norms), diverged, replicas, k)
