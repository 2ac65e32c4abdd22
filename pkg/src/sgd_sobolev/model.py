"""Scalar-output MLP ``f(x, W) = f~(W1 x, W2)`` with hand-written reverse mode.

The first layer is a bare matrix product, so the signal ``s = df/d(W1 x)``
back-propagated to it gives both ``grad_{W1} f = s x^T`` and
``grad_x f = W1^T s``.

Parameters live in one flat vector, ordered: ``W1`` row-major, then for
each further layer its weight matrix row-major followed by its bias, then
the head weights and head bias.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError, ParseError

SCHEMA_VERSION = 1


def _tanh_grad(z, h):
    return 1.0 - h * h


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, h):
    # subgradient at 0 is 0
    return (z > 0).astype(z.dtype)


def _identity(z):
    return z


def _ones(z, h):
    return np.ones_like(z)


ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "linear": (_identity, _ones),
}


@dataclass(frozen=True)
class Architecture:
    """Layer sizes. ``widths[0]`` is the row count ``m`` of ``W1``.

    With ``head=False`` the last width must be 1 and the output is that
    unit's activation. ``fold_bias`` appends a constant 1 to every input,
    which gives the first layer an affine term while keeping it a pure
    matrix product on the augmented input.
    """

    input_dim: int
    widths: tuple
    activations: tuple
    head: bool = True
    fold_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(x) for x in self.widths))
        acts = self.activations
        if isinstance(acts, str):
            acts = (acts,) * len(self.widths)
        object.__setattr__(self, "activations", tuple(acts))
        if self.input_dim < 1 or not self.widths or min(self.widths) < 1:
            raise ArgumentError("dimensions must be positive and at least one layer given")
        if len(self.activations) != len(self.widths):
            raise ArgumentError("one activation tag per layer")
        for tag in self.activations:
            if tag not in ACTIVATIONS:
                raise ArgumentError(f"unknown activation {tag!r}")
        if not self.head and self.widths[-1] != 1:
            raise ArgumentError("a headless network must end in a single unit")

    @property
    def augmented_dim(self) -> int:
        return self.input_dim + int(self.fold_bias)

    def shapes(self):
        """``(name, shape)`` for every parameter block in flattening order."""
        out = [("W1", (self.widths[0], self.augmented_dim))]
        for i in range(1, len(self.widths)):
            out.append((f"W{i + 1}", (self.widths[i], self.widths[i - 1])))
            out.append((f"b{i + 1}", (self.widths[i],)))
        if self.head:
            out.append(("head_w", (self.widths[-1],)))
            out.append(("head_b", ()))
        return out

    @property
    def num_params(self) -> int:
        return sum(math.prod(s) for _, s in self.shapes())

    @property
    def first_layer_size(self) -> int:
        return self.widths[0] * self.augmented_dim


@dataclass(frozen=True)
class MlpModel:
    arch: Architecture
    params: np.ndarray

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64).reshape(-1)
        if p.size != self.arch.num_params:
            raise DimensionError(f"expected {self.arch.num_params} parameters, got {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @property
    def input_dim(self) -> int:
        return self.arch.input_dim

    @property
    def num_params(self) -> int:
        return self.arch.num_params

    @property
    def first_layer(self) -> np.ndarray:
        return unpack(self.arch, self.params)[0]

    def with_params(self, params) -> MlpModel:
        return MlpModel(self.arch, params)

    def augment(self, x) -> np.ndarray:
        """Inputs as seen by ``W1`` (constant 1 appended under ``fold_bias``)."""
        x = np.asarray(x, dtype=np.float64)
        if not self.arch.fold_bias:
            return x
        ones = np.ones(x.shape[:-1] + (1,))
        return np.concatenate([x, ones], axis=-1)


@dataclass
class GradPair:
    grad_w: np.ndarray
    grad_x: np.ndarray
    value: float
    signal: np.ndarray = field(repr=False)  # df/d(W1 x)


def unpack(arch: Architecture, params):
    blocks, pos = [], 0
    for _, shape in arch.shapes():
        size = math.prod(shape)
        blocks.append(params[pos:pos + size].reshape(shape))
        pos += size
    return blocks


def init_model(arch: Architecture, seed: int = 0, scale: float = 1.0, head_scale: float | None = None) -> MlpModel:
    """Uniform ``(-scale/sqrt(fan_in), scale/sqrt(fan_in))`` for every block.

    ``head_scale`` overrides ``scale`` for the head weights and bias; 0 starts
    from a constant function.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    fan_in = arch.augmented_dim
    for name, shape in arch.shapes():
        if name.startswith("W"):
            fan_in = shape[1]
        elif name == "head_w":
            fan_in = shape[0]
        s = scale if head_scale is None or not name.startswith("head") else head_scale
        # draw even when zeroed so the other blocks do not depend on head_scale
        chunks.append(rng.uniform(-1.0, 1.0, math.prod(shape)) * (s / math.sqrt(fan_in)))
    return MlpModel(arch, np.concatenate(chunks))


def linear_model(w) -> MlpModel:
    """``f(x) = w . x`` as a one-layer headless network with parameters ``w``."""
    w = np.asarray(w, dtype=np.float64)
    return MlpModel(Architecture(w.size, (1,), ("linear",), head=False), w)


# ---------------------------------------------------------------- evaluation


def _check_inputs(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise DimensionError(f"input dim {x.shape[-1]} != {model.input_dim}")
    return x


def _forward_cache(arch, blocks, xa):
    w1 = blocks[0]
    z = xa @ w1.T
    act = ACTIVATIONS[arch.activations[0]][0]
    zs, hs = [z], [act(z)]
    pos = 1
    for layer in range(1, len(arch.widths)):
        w, b = blocks[pos], blocks[pos + 1]
        pos += 2
        z = hs[-1] @ w.T + b
        zs.append(z)
        hs.append(ACTIVATIONS[arch.activations[layer]][0](z))
    if arch.head:
        out = hs[-1] @ blocks[pos] + blocks[pos + 1]
    else:
        out = hs[-1][:, 0]
    return zs, hs, out


def forward_batch(model: MlpModel, xs) -> np.ndarray:
    xs = np.atleast_2d(_check_inputs(model, xs))
    blocks = unpack(model.arch, model.params)
    return _forward_cache(model.arch, blocks, model.augment(xs))[2]


def forward(model: MlpModel, x) -> float:
    return float(forward_batch(model, np.asarray(x)[None, :])[0])


def _output_delta(arch, blocks, zs, hs):
    grad = ACTIVATIONS[arch.activations[-1]][1](zs[-1], hs[-1])
    if arch.head:
        return grad * blocks[-2]
    return grad  # single unit


def per_sample_gradients(model: MlpModel, xs):
    """Values, ``grad_W f`` rows ``(n, w)``, ``grad_x f`` rows ``(n, d)`` and signals ``(n, m)``."""
    xs = np.atleast_2d(_check_inputs(model, xs))
    arch = model.arch
    blocks = unpack(arch, model.params)
    xa = model.augment(xs)
    zs, hs, out = _forward_cache(arch, blocks, xa)
    n = xs.shape[0]
    grads = [None] * len(blocks)
    if arch.head:
        grads[-2] = hs[-1]
        grads[-1] = np.ones((n, 1))
    delta = _output_delta(arch, blocks, zs, hs)
    for layer in range(len(arch.widths) - 1, 0, -1):
        wi = 2 * layer - 1
        grads[wi] = (delta[:, :, None] * hs[layer - 1][:, None, :]).reshape(n, -1)
        grads[wi + 1] = delta
        delta = (delta @ blocks[wi]) * ACTIVATIONS[arch.activations[layer - 1]][1](
            zs[layer - 1], hs[layer - 1]
        )
    signal = delta
    grads[0] = (signal[:, :, None] * xa[:, None, :]).reshape(n, -1)
    grad_w = np.concatenate([g.reshape(n, -1) for g in grads], axis=1)
    grad_x = (signal @ blocks[0])[:, : arch.input_dim]
    return out, grad_w, grad_x, signal


def backward(model: MlpModel, x) -> GradPair:
    out, gw, gx, s = per_sample_gradients(model, np.asarray(x)[None, :])
    return GradPair(gw[0], gx[0], float(out[0]), s[0])


def loss_gradient(arch: Architecture, params, xs, ys):
    """``(1/B) sum_i (f(x_i) - y_i) grad_W f(x_i)`` and the residuals, without per-sample blocks."""
    blocks = unpack(arch, params)
    xa = xs if not arch.fold_bias else np.concatenate([xs, np.ones((len(xs), 1))], axis=1)
    zs, hs, out = _forward_cache(arch, blocks, xa)
    resid = out - ys
    weight = resid / len(ys)
    grads = [None] * len(blocks)
    if arch.head:
        grads[-2] = weight @ hs[-1]
        grads[-1] = np.array([weight.sum()])
    delta = _output_delta(arch, blocks, zs, hs) * weight[:, None]
    for layer in range(len(arch.widths) - 1, 0, -1):
        wi = 2 * layer - 1
        grads[wi] = delta.T @ hs[layer - 1]
        grads[wi + 1] = delta.sum(axis=0)
        delta = (delta @ blocks[wi]) * ACTIVATIONS[arch.activations[layer - 1]][1](
            zs[layer - 1], hs[layer - 1]
        )
    grads[0] = delta.T @ xa
    return np.concatenate([g.reshape(-1) for g in grads]), resid


# ---------------------------------------------------------------- instrumentation


def g_norms(model: MlpModel, data, k: int = 1):
    """``((1/n) sum_i |grad_W f(x_i)|_{2k}^{2k})^{1/2k}`` and the same for ``grad_x``."""
    if k < 1:
        raise ArgumentError("k must be >= 1")
    _, gw, gx, _ = per_sample_gradients(model, data)
    p = 2 * k
    g_w = float(np.mean(np.sum(np.abs(gw) ** p, axis=1)) ** (1.0 / p))
    g_x = float(np.mean(np.sum(np.abs(gx) ** p, axis=1)) ** (1.0 / p))
    return g_w, g_x


@dataclass
class FlatnessReport:
    value: float
    max_residual: float
    interpolated: bool
    tolerance: float


def flatness(model: MlpModel, data, targets, interp_tol: float = 1e-6) -> FlatnessReport:
    """Gauss-Newton trace ``(1/n) sum_i |grad_W f(x_i)|^2``.

    Equals ``tr Hess L`` only at interpolation; the residual level is
    reported so callers can judge the approximation.
    """
    out, gw, _, _ = per_sample_gradients(model, data)
    max_res = float(np.max(np.abs(out - np.asarray(targets, dtype=np.float64))))
    value = float(np.mean(np.sum(gw * gw, axis=1)))
    return FlatnessReport(value, max_res, max_res <= interp_tol, interp_tol)


def _dual(y, p):
    """Unit-norm dual vector: ``sign(y)|y|^{p-1} / |y|_p^{p-1}``."""
    norm = np.linalg.norm(y, ord=p)
    if norm == 0.0:
        return np.zeros_like(y)
    return np.sign(y) * (np.abs(y) / norm) ** (p - 1)


def operator_pnorm(mat, p: float, restarts: int = 8, seed: int = 0, max_iter: int = 200):
    """Interval ``(lower, upper)`` containing the induced ``p``-norm, ``p >= 2``.

    ``p = 2`` is exact. Otherwise ``lower`` comes from Boyd's nonlinear
    power method (best of several starts) and ``upper`` from Riesz-Thorin
    interpolation, ``min(|A|_2^{2/p} |A|_inf^{1-2/p}, |A|_1^{1/p} |A|_inf^{1-1/p})``.
    """
    a = np.asarray(mat, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError("expected a matrix")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("matrix entries must be finite")
    if p < 2:
        raise ArgumentError("p must be >= 2")
    if a.size == 0 or not np.any(a):
        return 0.0, 0.0
    u, s, vt = np.linalg.svd(a)
    norm2 = float(s[0])
    if p == 2:
        return norm2, norm2
    # shapes with a closed form
    if a.shape[1] == 1:
        val = float(np.linalg.norm(a[:, 0], ord=p))
        return val, val
    if a.shape[0] == 1:
        val = float(np.linalg.norm(a[0], ord=p / (p - 1.0)))
        return val, val
    if a.shape[0] == a.shape[1] and not np.any(a - np.diag(np.diag(a))):
        val = float(np.max(np.abs(np.diag(a))))
        return val, val
    norm_inf = float(np.max(np.sum(np.abs(a), axis=1)))
    norm_1 = float(np.max(np.sum(np.abs(a), axis=0)))
    upper = min(
        norm2 ** (2.0 / p) * norm_inf ** (1.0 - 2.0 / p),
        norm_1 ** (1.0 / p) * norm_inf ** (1.0 - 1.0 / p),
    )
    q = p / (p - 1.0)
    rng = np.random.default_rng(seed)
    starts = [vt[0], np.ones(a.shape[1])]
    starts += [rng.standard_normal(a.shape[1]) for _ in range(restarts)]
    lower = float(np.max(np.linalg.norm(a, ord=p, axis=0)))  # unit coordinate vectors
    for x in starts:
        nx = np.linalg.norm(x, ord=p)
        if nx == 0.0:
            continue
        x = x / nx
        for _ in range(max_iter):
            y = a @ x
            z = a.T @ _dual(y, p)
            if np.linalg.norm(z, ord=q) <= z @ x * (1 + 1e-14):
                break
            x = _dual(z, q)
        lower = max(lower, float(np.linalg.norm(a @ x, ord=p) / np.linalg.norm(x, ord=p)))
    return lower, max(upper, lower)


def first_layer_norm_interval(model: MlpModel, k: int):
    """``(lower, upper)`` for ``|W1^T|_{2k}``."""
    return operator_pnorm(model.first_layer.T, 2 * k)


def spectral_norm(mat, tol=1e-8, max_iter=1000, seed=0) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    a = np.asarray(mat, dtype=np.float64)
    x = np.random.default_rng(seed).standard_normal(a.shape[1])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(max_iter):
        y = a.T @ (a @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        new = math.sqrt(ny)
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    return sigma


# ---------------------------------------------------------------- checkpoints


def model_to_dict(model: MlpModel) -> dict:
    a = model.arch
    return {
        "schema_version": SCHEMA_VERSION,
        "input_dim": a.input_dim,
        "widths": list(a.widths),
        "activations": list(a.activations),
        "head": a.head,
        "fold_bias": a.fold_bias,
        "num_params": a.num_params,
        "params": [repr(float(x)) for x in model.params],
        "params_hex": [float(x).hex() for x in model.params],
    }


def model_from_dict(d: dict) -> MlpModel:
    try:
        arch = Architecture(
            int(d["input_dim"]),
            tuple(d["widths"]),
            tuple(d["activations"]),
            bool(d.get("head", True)),
            bool(d.get("fold_bias", False)),
        )
        if "params_hex" in d:
            params = np.array([float.fromhex(x) for x in d["params_hex"]])
        else:
            params = np.array([float(x) for x in d["params"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid model checkpoint: {exc}") from exc
    return MlpModel(arch, params)


def save_model(model: MlpModel, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> MlpModel:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
    return model_from_dict(d)
