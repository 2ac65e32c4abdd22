"""Symmetric tensors stored as sums of rank-one powers.

A ``SymTensor`` of order ``k`` on ``R^w`` represents ``sum_i c_i v_i^{(x)k}``.
Inner products never touch the ``w**k`` entries; they use
``<u^{(x)k}, v^{(x)k}> = (u . v)**k``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ArgumentError, CapacityError, CompressionError, DimensionError

DENSE_CAP = 10**6
CLIP_RTOL = 1e-12
DEFAULT_MAX_TERMS = 64
DEFAULT_COMPRESS_TOL = 1e-8


@dataclass(frozen=True)
class SymTensor:
    order: int
    coeffs: np.ndarray  # (r,)
    vectors: np.ndarray  # (r, w)

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionError("vectors must be a 2-D array of shape (r, w)")
        if vectors.shape[0] != coeffs.shape[0]:
            raise DimensionError(
                f"{coeffs.shape[0]} coefficients but {vectors.shape[0]} vectors"
            )
        if self.order < 1:
            raise ArgumentError("order must be >= 1")
        if vectors.shape[1] < 1:
            raise DimensionError("dim must be >= 1")
        coeffs.setflags(write=False)
        vectors.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_terms(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, order, dim):
        return cls(order, np.zeros(0), np.zeros((0, dim)))

    def scale(self, factor) -> SymTensor:
        return SymTensor(self.order, self.coeffs * factor, self.vectors)

    def __add__(self, other: SymTensor) -> SymTensor:
        _check_compatible(self, other)
        return SymTensor(
            self.order,
            np.concatenate([self.coeffs, other.coeffs]),
            np.vstack([self.vectors, other.vectors]),
        )

    def __sub__(self, other: SymTensor) -> SymTensor:
        return self + other.scale(-1.0)

    def evaluate(self, x) -> float:
        """The homogeneous form ``<A, x^{(x)k}>``."""
        return float(self.coeffs @ (self.vectors @ np.asarray(x, dtype=np.float64)) ** self.order)


@dataclass(frozen=True)
class DenseTensor:
    order: int
    dim: int
    entries: np.ndarray  # length dim**order, row-major multi-index order

    def as_array(self) -> np.ndarray:
        return self.entries.reshape((self.dim,) * self.order)


def _check_compatible(a: SymTensor, b: SymTensor):
    if a.order != b.order:
        raise DimensionError(f"order mismatch: {a.order} vs {b.order}")
    if a.dim != b.dim:
        raise DimensionError(f"dim mismatch: {a.dim} vs {b.dim}")


def rank_one(coeffs, vectors, k) -> SymTensor:
    """Build ``sum_i coeffs[i] * vectors[i]^{(x)k}`` without normalizing anything."""
    if k < 1:
        raise ArgumentError("k must be >= 1")
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if coeffs.size == 0:
        raise ArgumentError("at least one term is required")
    try:
        vectors = np.array(vectors, dtype=np.float64)
    except ValueError as exc:  # ragged input
        raise DimensionError("vectors have mismatched lengths") from exc
    if vectors.ndim == 1 and coeffs.size == 1:
        vectors = vectors[None, :]
    if vectors.ndim != 2 or vectors.shape[1] < 1:
        raise DimensionError("vectors have mismatched lengths")
    return SymTensor(int(k), coeffs, vectors)


def _clip_scale(a: SymTensor) -> float:
    norms = np.linalg.norm(a.vectors, axis=1)
    return float(np.sum(np.abs(a.coeffs) * norms**a.order)) ** 2


def inner(a: SymTensor, b: SymTensor) -> float:
    """Frobenius inner product ``sum_ij a_i b_j (v_i . u_j)**k``."""
    _check_compatible(a, b)
    if a.num_terms == 0 or b.num_terms == 0:
        return 0.0
    return kernels.gram_power_sum(a.coeffs, a.vectors, b.coeffs, b.vectors, a.order)


def frob_norm(a: SymTensor) -> float:
    if a.num_terms == 0:
        return 0.0
    sq = inner(a, a)
    if sq < 0.0:
        # negative only through cancellation
        if sq >= -CLIP_RTOL * _clip_scale(a):
            return 0.0
        raise ArithmeticError(f"Gram formula gave a negative squared norm {sq!r}")
    return float(np.sqrt(sq))


def to_dense(a: SymTensor, cap: int = DENSE_CAP) -> DenseTensor:
    size = a.dim**a.order
    if size > cap:
        raise CapacityError(f"dense tensor needs {size} entries, cap is {cap}")
    out = np.zeros(size)
    # vectorized over terms, in blocks that keep the temporary near 2^22 entries
    block = max(1, (1 << 22) // size)
    for start in range(0, a.num_terms, block):
        vecs = a.vectors[start:start + block]
        t = a.coeffs[start:start + block, None]
        for _ in range(a.order):
            t = (t[:, :, None] * vecs[:, None, :]).reshape(len(vecs), -1)
        out += t.sum(axis=0)
    return DenseTensor(a.order, a.dim, out)


def dense_from_array(arr) -> DenseTensor:
    arr = np.asarray(arr, dtype=np.float64)
    if len(set(arr.shape)) != 1:
        raise DimensionError("dense tensor must be cubical")
    return DenseTensor(arr.ndim, arr.shape[0], arr.reshape(-1).copy())


def is_permutation_symmetric(t: DenseTensor, atol=1e-12) -> bool:
    arr = t.as_array()
    return all(
        np.allclose(arr, arr.transpose(p), atol=atol, rtol=0.0)
        for p in itertools.permutations(range(t.order))
    )


def merge_duplicates(a: SymTensor, rtol=1e-14) -> SymTensor:
    """Combine terms whose vectors are parallel.

    ``(c1, v)`` and ``(c2, s v)`` become ``(c1 + c2 s**k, v)``. Terms with a
    zero vector or zero coefficient are dropped.
    """
    norms = np.linalg.norm(a.vectors, axis=1)
    keep = (norms > 0) & (a.coeffs != 0)
    coeffs, vectors, norms = a.coeffs[keep], a.vectors[keep], norms[keep]
    out_c, out_v = [], []
    used = np.zeros(len(coeffs), dtype=bool)
    units = vectors / norms[:, None] if len(coeffs) else vectors
    for i in range(len(coeffs)):
        if used[i]:
            continue
        cos = units[i + 1:] @ units[i]
        total = coeffs[i]
        for off in np.flatnonzero(np.abs(np.abs(cos) - 1.0) <= rtol):
            j = i + 1 + off
            if used[j]:
                continue
            s = np.sign(cos[off]) * norms[j] / norms[i]
            total += coeffs[j] * s**a.order
            used[j] = True
        if total != 0.0:
            out_c.append(total)
            out_v.append(vectors[i])
    if not out_c:
        return SymTensor.zeros(a.order, a.dim)
    return SymTensor(a.order, np.array(out_c), np.array(out_v))


def best_rank_one(a: SymTensor, max_iter=500, tol=1e-13, restarts=4, seed=0, positive_only=False):
    """Leading rank-one term ``(c, x)`` with unit ``x`` via shifted symmetric power iteration.

    Iterates ``x <- normalize(s * A x^{k-1} + shift * x)`` for ``s = +1`` and
    ``s = -1``; the shift keeps each run monotone in ``s * A x^k``.
    """
    k = a.order
    x0 = np.zeros(a.dim)
    x0[0] = 1.0
    if a.num_terms == 0:
        return 0.0, x0
    rng = np.random.default_rng(seed)
    norms = np.linalg.norm(a.vectors, axis=1)
    shift = float(np.sum(np.abs(a.coeffs) * norms**k)) * (k - 1)
    starts = [a.vectors[np.argmax(np.abs(a.coeffs) * norms**k)]]
    starts += [rng.standard_normal(a.dim) for _ in range(restarts)]
    best = (0.0, x0)
    signs = (1.0,) if positive_only else (1.0, -1.0)
    for x in starts:
        x = x / np.linalg.norm(x)
        for sign in signs:
            y = x.copy()
            val = a.evaluate(y)
            for _ in range(max_iter):
                g = a.vectors.T @ (a.coeffs * (a.vectors @ y) ** (k - 1))
                z = sign * g + shift * y
                nz = np.linalg.norm(z)
                if nz == 0.0:
                    break
                y_new = z / nz
                new_val = a.evaluate(y_new)
                done = abs(new_val - val) <= tol * max(abs(val), 1e-300)
                y, val = y_new, new_val
                if done:
                    break
            score = val if positive_only else abs(val)
            if score > (best[0] if positive_only else abs(best[0])):
                best = (val, y)
    return best


def _refit(a: SymTensor, atoms: np.ndarray, nonnegative=False):
    """Least-squares coefficients for ``atoms`` approximating ``a``."""
    k = a.order
    gram = (atoms @ atoms.T) ** k
    rhs = ((atoms @ a.vectors.T) ** k) @ a.coeffs
    if nonnegative:
        from scipy.optimize import nnls

        # min |A - sum c_i x_i^k|^2 = c^T G c - 2 c^T r + const; solve via G = L L^T
        evals, evecs = np.linalg.eigh(gram)
        evals = np.clip(evals, 0.0, None)
        root = evecs * np.sqrt(evals)
        keep = evals > 1e-14 * max(evals.max(), 1e-300)
        lhs = root[:, keep].T
        target = (evecs[:, keep].T @ rhs) / np.sqrt(evals[keep])
        coeffs, _ = nnls(lhs, target)
        return coeffs
    coeffs, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    return coeffs


@lru_cache(maxsize=64)
def spanning_atoms(dim, order):
    """Unit vectors whose ``order``-th powers form a well-conditioned basis of
    the symmetric tensor space (size ``C(dim+order-1, order)``)."""
    size = math.comb(dim + order - 1, order)
    rng = np.random.default_rng(dim * 1000 + order)
    best, best_cond = None, np.inf
    for _ in range(20):
        x = rng.standard_normal((size, dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        cond = np.linalg.cond((x @ x.T) ** order)
        if cond < best_cond:
            best, best_cond = x, cond
    best.setflags(write=False)
    return best


def compress(
    a: SymTensor,
    max_terms: int = DEFAULT_MAX_TERMS,
    tol: float = DEFAULT_COMPRESS_TOL,
    nonnegative: bool = False,
) -> SymTensor:
    """Approximate ``a`` with at most ``max_terms`` terms.

    Exact duplicate merging runs first. If that is not enough, rank-one
    terms are extracted greedily from the residual by power iteration, with
    all coefficients refit by least squares after each extraction. Two
    shortcuts replace the greedy loop where it is provably unnecessary:
    order 2 uses the eigendecomposition (the greedy optimum), and when the
    whole symmetric space has at most ``max_terms`` dimensions the tensor is
    refit exactly on a fixed spanning set.

    ``nonnegative`` keeps the result a nonnegative combination (coefficients
    clipped for order 2, nonnegative least squares otherwise). Raises
    ``CompressionError`` when the relative residual stays above ``tol``.
    """
    if max_terms < 1:
        raise ArgumentError("max_terms must be >= 1")
    merged = merge_duplicates(a)
    if merged.num_terms <= max_terms:
        if nonnegative and np.any(merged.coeffs < 0):
            merged = SymTensor(a.order, np.clip(merged.coeffs, 0.0, None), merged.vectors)
        else:
            return merged
    norm_a = frob_norm(a)
    if norm_a == 0.0:
        return SymTensor.zeros(a.order, a.dim)
    k, w = a.order, a.dim
    if merged.num_terms <= max_terms:
        out = merged
    elif k == 2:
        out = _compress_matrix(merged, max_terms)
        if nonnegative:
            keep = out.coeffs > 0
            out = SymTensor(k, out.coeffs[keep], out.vectors[keep])
    elif math.comb(w + k - 1, k) <= max_terms and not nonnegative:
        atoms = spanning_atoms(w, k)
        out = SymTensor(k, _refit(merged, atoms), atoms)
    else:
        out = _compress_greedy(merged, max_terms, tol, norm_a, nonnegative)
    residual = frob_norm(a - out) / norm_a
    # Gram-formula residuals cannot resolve below this level
    floor = np.sqrt(CLIP_RTOL * _clip_scale(a - out)) / norm_a
    if residual > max(tol, floor) and not nonnegative:
        raise CompressionError(
            f"residual {residual:.3e} exceeds tol {tol:.1e} with {max_terms} terms",
            residual,
        )
    return out


def _compress_matrix(a: SymTensor, max_terms: int) -> SymTensor:
    mat = (a.vectors.T * a.coeffs) @ a.vectors
    evals, evecs = np.linalg.eigh(0.5 * (mat + mat.T))
    order = np.argsort(-np.abs(evals))[:max_terms]
    order = order[evals[order] != 0.0]
    return SymTensor(2, evals[order], evecs[:, order].T)


def _compress_greedy(a, max_terms, tol, norm_a, nonnegative=False) -> SymTensor:
    atoms = np.zeros((0, a.dim))
    out = SymTensor.zeros(a.order, a.dim)
    for step in range(max_terms):
        resid = merge_duplicates(a - out)
        c, x = best_rank_one(resid, seed=step, positive_only=nonnegative)
        if c == 0.0 or (nonnegative and c <= 0.0):
            break
        atoms = np.vstack([atoms, x])
        out = SymTensor(a.order, _refit(a, atoms, nonnegative), atoms)
        if frob_norm(a - out) <= tol * norm_a:
            break
    keep = out.coeffs != 0.0
    return SymTensor(a.order, out.coeffs[keep], out.vectors[keep])
