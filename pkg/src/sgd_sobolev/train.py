"""Mini-batch SGD on the square loss with first-layer norm tracking."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError
from .model import Architecture, MlpModel, flatness, g_norms, init_model, loss_gradient, spectral_norm
from .stability import sample_batches

DIVERGENCE_LOSS = 1e100
INTERP_TOL = 1e-6
SWEEP_HEADER = ["eta", "batch", "rep", "interpolated", "gw1", "gx1", "gw2", "gx2", "gw3", "gx3", "flatness", "w1norm"]

_BATCH_CHUNK = 1024


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    batch: int
    iterations: int
    seed: int = 0
    interp_tol: float = INTERP_TOL
    record_every: int = 100

    def __post_init__(self):
        if not self.eta >= 0 or not math.isfinite(self.eta):
            raise ArgumentError("eta must be finite and >= 0")
        if self.batch < 1:
            raise ArgumentError("batch must be >= 1")
        if self.iterations < 1:
            raise ArgumentError("iterations must be >= 1")
        if self.record_every < 1:
            raise ArgumentError("record_every must be >= 1")


@dataclass
class TrainResult:
    final_model: MlpModel
    loss_trace: np.ndarray  # recorded at steps 0, record_every, 2*record_every, ... and the last step
    w1_norm_trace: np.ndarray
    record_steps: np.ndarray
    interpolated: bool
    final_max_residual: float
    diverged: bool = False
    steps_run: int = 0


def _full_loss(arch, params, xs, ys):
    with np.errstate(over="ignore", invalid="ignore"):
        _, resid = loss_gradient(arch, params, xs, ys)
        return 0.5 * float(np.mean(resid * resid)), float(np.max(np.abs(resid)))


def sgd_train(model: MlpModel, data, targets, cfg: TrainConfig) -> TrainResult:
    """Run exactly ``cfg.iterations`` steps unless the loss exceeds ``1e100``.

    Each step draws a uniformly random subset of ``cfg.batch`` distinct
    indices, independently of previous steps.
    """
    xs = np.asarray(data, dtype=np.float64)
    ys = np.asarray(targets, dtype=np.float64).reshape(-1)
    n = xs.shape[0]
    if ys.size != n:
        raise DimensionError("data and targets differ in length")
    if xs.shape[1] != model.input_dim:
        raise DimensionError("data width does not match the model")
    if cfg.batch > n:
        raise ArgumentError("batch larger than the dataset")
    arch = model.arch
    params = model.params.copy()
    m1, d1 = arch.widths[0], arch.augmented_dim
    rng = np.random.default_rng(cfg.seed)

    losses, norms, steps = [], [], []

    def record(step):
        loss, _ = _full_loss(arch, params, xs, ys)
        losses.append(loss)
        norms.append(spectral_norm(params[: m1 * d1].reshape(m1, d1)))
        steps.append(step)
        return loss

    record(0)
    diverged = False
    step = 0
    batches = np.empty((0, cfg.batch), dtype=np.int64)
    pos = 0
    while step < cfg.iterations:
        if pos == len(batches):
            count = min(_BATCH_CHUNK, cfg.iterations - step)
            batches = sample_batches(rng, n, cfg.batch, count)
            pos = 0
        idx = batches[pos]
        pos += 1
        with np.errstate(over="ignore", invalid="ignore"):
            grad, _ = loss_gradient(arch, params, xs[idx], ys[idx])
            params -= cfg.eta * grad
        step += 1
        if step % cfg.record_every == 0 or step == cfg.iterations:
            loss = record(step)
            if not loss <= DIVERGENCE_LOSS:
                diverged = True
                break

    final = MlpModel(arch, params) if np.all(np.isfinite(params)) else MlpModel(arch, model.params)
    if diverged:
        max_res = math.inf
    else:
        max_res = _full_loss(arch, params, xs, ys)[1]
    return TrainResult(
        final_model=final,
        loss_trace=np.array(losses),
        w1_norm_trace=np.array(norms),
        record_steps=np.array(steps),
        interpolated=bool(max_res <= cfg.interp_tol),
        final_max_residual=max_res,
        diverged=diverged,
        steps_run=step,
    )


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepRow:
    eta: float
    batch: int
    rep: int
    interpolated: bool
    gw: tuple  # k = 1, 2, 3
    gx: tuple
    flatness: float
    w1norm: float
    diverged: bool = False
    max_residual: float = math.nan
    w1_trace: np.ndarray = field(default=None, repr=False)
    model: MlpModel = field(default=None, repr=False)

    def csv_row(self) -> list:
        vals = [repr(float(self.eta)), str(self.batch), str(self.rep), str(int(self.interpolated))]
        for a, b in zip(self.gw, self.gx):
            vals += [repr(float(a)), repr(float(b))]
        return vals + [repr(float(self.flatness)), repr(float(self.w1norm))]


def run_seeds(seed: int, rep: int, cell: int):
    """Init seed shared by every cell of one repetition; SGD seed unique per (rep, cell)."""
    init = int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])
    sgd = int(np.random.SeedSequence([seed, rep, cell + 1]).generate_state(1)[0])
    return init, sgd


def _run_cell(args):
    arch, xs, ys, eta, batch, rep, cell, seed, iterations, interp_tol, record_every, init_scale, head_scale = args
    init_seed, sgd_seed = run_seeds(seed, rep, cell)
    model = init_model(arch, init_seed, init_scale, head_scale)
    cfg = TrainConfig(eta, batch, iterations, sgd_seed, interp_tol, record_every)
    res = sgd_train(model, xs, ys, cfg)
    if res.diverged:
        nan3 = (math.nan,) * 3
        return SweepRow(eta, batch, rep, False, nan3, nan3, math.nan, math.nan, True,
                        math.inf, res.w1_norm_trace, None)
    gw, gx = zip(*(g_norms(res.final_model, xs, k) for k in (1, 2, 3)))
    flat = flatness(res.final_model, xs, ys, interp_tol)
    return SweepRow(eta, batch, rep, res.interpolated, gw, gx, flat.value, float(res.w1_norm_trace[-1]),
                    False, res.final_max_residual, res.w1_norm_trace, res.final_model)


def sweep(
    arch: Architecture,
    data,
    targets,
    grid,
    reps: int,
    iterations: int,
    seed: int = 0,
    interp_tol: float = INTERP_TOL,
    record_every: int = 100,
    init_scale: float = 1.0,
    head_scale: float | None = None,
    workers: int = 1,
) -> list:
    """One row per ``(eta, batch)`` cell and repetition, ordered by cell then rep.

    Duplicate cells are trained once. Non-interpolating and diverged runs are
    kept and flagged.
    """
    cells = list(dict.fromkeys((float(e), int(b)) for e, b in grid))
    if not cells:
        raise ArgumentError("empty grid")
    if reps < 1:
        raise ArgumentError("reps must be >= 1")
    xs = np.asarray(data, dtype=np.float64)
    ys = np.asarray(targets, dtype=np.float64).reshape(-1)
    jobs = [
        (arch, xs, ys, eta, batch, rep, ci, seed, iterations, interp_tol, record_every, init_scale, head_scale)
        for ci, (eta, batch) in enumerate(cells)
        for rep in range(reps)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(j) for j in jobs]


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow(row.csv_row())
