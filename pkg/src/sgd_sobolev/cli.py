"""Command-line entry point: ``sgd-sobolev <command> [flags]``.

Every command writes its primary outputs plus a run manifest. Primary
outputs depend only on the flags and the master seed, so a rerun
reproduces them byte for byte; the manifest adds wall-clock fields.

Each command derives its working seed as ``master + SEED_OFFSETS[command]``
so that, for example, ``generate --seed 1`` and ``train --seed 1`` do not
share a random stream.

Exit codes: 0 success, 2 bad usage or input, 3 capacity exceeded,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import data as data_mod
from . import sobolev, stability, train
from .errors import ArgumentError, CapacityError, DimensionError, ParseError
from .model import Architecture, init_model, load_model, per_sample_gradients, save_model

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CAPACITY = 3
EXIT_DIVERGED = 4

SEED_OFFSETS = {"generate": 0, "train": 1000, "sweep": 2000, "stability": 3000, "bounds": 4000}
WORKERS_ENV = "SGD_SOBOLEV_WORKERS"
REPORT_SCHEMA_VERSION = 1

MODE_MAP = {
    "dense": ("dense-oracle", stability.EXACT),
    "power": ("power-iteration", stability.EXACT),
    "auto": ("auto", stability.EXACT),
    "mc": ("auto", stability.MONTE_CARLO),
}


class Diverged(Exception):
    pass


def load_schema(name: str) -> dict:
    """Shipped JSON schema, e.g. ``load_schema("bound_report")``."""
    text = resources.files(__package__).joinpath("schemas", f"{name}.json").read_text()
    return json.loads(text)


def derived_seed(command: str, master: int) -> int:
    return (int(master) + SEED_OFFSETS[command]) % 2**63


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


def _grid(text):
    cells = []
    for item in text.split(","):
        try:
            eta, batch = item.split(":")
            cells.append((float(eta), int(batch)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"grid cells look like eta:batch, got {item!r}") from exc
    return cells


def _coefficients(text):
    pairs = []
    for item in text.split(","):
        try:
            a, b = item.split(":")
            pairs.append((float(a), float(b)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"coefficients look like a:b, got {item!r}") from exc
    return tuple(pairs)


# ---------------------------------------------------------------- shared pieces


def _add_manifold_flags(p, n_default=100):
    p.add_argument("--kind", choices=data_mod.KINDS, default=data_mod.CURVE)
    p.add_argument("--target", choices=data_mod.TARGETS, default=data_mod.TRIG)
    p.add_argument("--ambient-dim", type=int, default=10)
    p.add_argument("--n", type=int, default=n_default)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--geometry-seed", type=int, default=0)
    p.add_argument("--coefficients", type=_coefficients, default=(),
                   help="custom target table a1:b1,a2:b2,...")


def _add_arch_flags(p):
    p.add_argument("--widths", type=_int_list, default=[64, 64])
    p.add_argument("--activation", choices=("tanh", "relu", "linear"), default="tanh")
    p.add_argument("--fold-bias", action="store_true")
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--head-scale", type=float, default=None)


def _spec_from_args(args):
    return data_mod.ManifoldSpec(
        args.ambient_dim, args.kind, args.target, args.radius, args.geometry_seed, args.coefficients
    )


def _arch_from_args(args, input_dim):
    return Architecture(input_dim, tuple(args.widths), args.activation, True, args.fold_bias)


def _load_points(path):
    return data_mod.load_csv(path)


def _sampler_for(path):
    side = data_mod.load_sidecar(path)
    if side is None or "spec" not in side:
        raise ArgumentError(f"{path} has no generator sidecar; gen1 needs the data distribution")
    return data_mod.ManifoldSampler(data_mod.ManifoldSpec.from_dict(side["spec"]))


# ---------------------------------------------------------------- commands


def cmd_generate(args, seed):
    spec = _spec_from_args(args)
    ds = data_mod.generate(spec, args.n, seed)
    data_mod.save_dataset(args.out, ds, hexfloat=args.hexfloat)
    return [args.out, f"{args.out}.json"]


def _write_trace(path, res):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "w1norm"])
        for s, loss, nrm in zip(res.record_steps, res.loss_trace, res.w1_norm_trace):
            writer.writerow([int(s), repr(float(loss)), repr(float(nrm))])


def cmd_train(args, seed):
    xs, ys = _load_points(args.data)
    if args.init_model:
        model = load_model(args.init_model)
    else:
        model = init_model(_arch_from_args(args, xs.shape[1]), seed, args.init_scale, args.head_scale)
    cfg = train.TrainConfig(args.eta, args.batch, args.iterations, seed + 1, args.interp_tol, args.record_every)
    res = train.sgd_train(model, xs, ys, cfg)
    trace = args.trace or f"{args.out}.trace.csv"
    _write_trace(trace, res)
    if res.diverged:
        raise Diverged(f"loss exceeded {train.DIVERGENCE_LOSS:g} at step {res.steps_run}")
    save_model(res.final_model, args.out)
    return [args.out, trace]


def cmd_sweep(args, seed):
    if args.data:
        xs, ys = _load_points(args.data)
    else:
        ds = data_mod.generate(_spec_from_args(args), args.n, seed)
        xs, ys = ds.points, ds.targets
    grid = args.grid or [(e, b) for e in args.etas for b in args.batches]
    arch = _arch_from_args(args, xs.shape[1])
    workers = args.workers if args.workers is not None else int(os.environ.get(WORKERS_ENV, "1"))
    rows = train.sweep(
        arch, xs, ys, grid, args.reps, args.iterations, seed, args.interp_tol, args.record_every,
        args.init_scale, args.head_scale, max(1, workers),
    )
    train.write_sweep_csv(args.out, rows)
    outputs = [args.out]
    if args.traces:
        with open(args.traces, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["eta", "batch", "rep", "record", "w1norm"])
            for r in rows:
                for i, v in enumerate(r.w1_trace):
                    writer.writerow([repr(r.eta), r.batch, r.rep, i, repr(float(v))])
        outputs.append(args.traces)
    if args.models_dir:
        Path(args.models_dir).mkdir(parents=True, exist_ok=True)
        for r in rows:
            if r.model is not None:
                path = os.path.join(args.models_dir, f"eta{r.eta!r}_b{r.batch}_rep{r.rep}.json")
                save_model(r.model, path)
                outputs.append(path)
    return outputs


def _gradients_from_args(args):
    if args.gradients:
        if args.model or args.data:
            raise ArgumentError("give either --gradients or --model with --data")
        return stability.GradientSet.from_csv(args.gradients)
    if not (args.model and args.data):
        raise ArgumentError("need --gradients, or --model together with --data")
    model = load_model(args.model)
    xs, _ = _load_points(args.data)
    _, gw, _, _ = per_sample_gradients(model, xs)
    return stability.GradientSet(gw)


def stability_report(g, args, seed) -> dict:
    method, mode = MODE_MAP[args.mode]
    cfg = stability.SgdConfig(args.eta, args.batch, args.k, seed, mode, args.mc_batches)
    verdict = stability.check_stability(g, cfg, tol=args.tol, method=method, max_iter=args.max_iter)
    notes = list(verdict.notes)
    second = None
    if args.k == 2:
        try:
            second = vars(stability.k2_closed_form(g, args.eta, args.batch))
        except (ArgumentError, CapacityError) as exc:
            notes.append(f"k=2 closed form skipped: {exc}")
    moment = stability.moment_bound_check(g, args.eta, args.batch, args.k)
    h_lhs, h_rhs = stability.holder_corollary(g, args.eta, args.batch, args.k)
    sim = None
    if args.horizon:
        res = stability.simulate_linearized(
            g, cfg, ("gaussian", 1.0), args.horizon, args.replicas
        )
        sim = {
            "horizon": args.horizon,
            "replicas": args.replicas,
            "initial": "gaussian(1.0)",
            "norms": res.norms,
            "diverged": res.diverged,
            "growth_rate": res.growth_rate(),
        }
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "report": "stability",
        "inputs": {
            "eta": args.eta, "batch": args.batch, "k": args.k, "mode": args.mode,
            "mc_batches": args.mc_batches, "seed": seed, "tol": args.tol, "n": g.n, "w": g.w,
        },
        "verdict": verdict.to_dict() | {"notes": notes},
        "k2": second,
        "moment": moment.to_dict(),
        "holder": {"lhs": h_lhs, "rhs": h_rhs, "satisfied": h_lhs <= h_rhs},
        "simulation": sim,
        "gradients": g.vectors if args.embed_gradients else None,
    }


def cmd_stability(args, seed):
    g = _gradients_from_args(args)
    write_json(args.out, stability_report(g, args, seed))
    return [args.out]


def _tags(values):
    tags = []
    for v in values:
        tags.extend(t.strip() for t in v.split(",") if t.strip())
    bad = [t for t in tags if t not in sobolev.BOUND_TAGS]
    if bad:
        raise ArgumentError(f"unknown theorem tag(s) {bad}; choose from {', '.join(sobolev.BOUND_TAGS)}")
    return list(dict.fromkeys(tags))


def bound_reports(model, xs, tags, args, seed, sampler=None) -> dict:
    """One BoundReport per tag; ``C_hat`` and ``delta`` are shared across tags."""
    k = args.k
    delta_approx = args.delta_approx
    limit = sobolev.regime_limit(model, xs, delta_approx)
    delta = args.delta if args.delta is not None else 0.5 * limit
    needs_c = any(t != "sobolev-emp" for t in tags)
    probe = None
    if args.C is not None:
        c_hat = args.C
    elif needs_c:
        probe = sobolev.estimate_c(model, xs, delta, delta_approx, k, seed=seed)
        c_hat = probe.C_hat
    else:
        c_hat = None
    reports = {}
    for i, tag in enumerate(tags):
        s = seed + 1 + i
        if tag == "sobolev-emp":
            rep = sobolev.sobolev_emp_bound(model, xs, args.eta, args.batch, k)
        elif tag == "neighbor-grad":
            rep = sobolev.neighborhood_grad_bound(
                model, xs, args.eta, args.batch, k, c_hat, delta, delta_approx, seed=s)
        elif tag == "sob-2k":
            rep = sobolev.sob_neighborhood_bound(
                model, xs, delta, args.K, args.eta, args.batch, k, c_hat, delta_approx,
                samples=args.samples, seed=s)
        elif tag == "gen1":
            cover = sobolev.covering_check(xs, delta, sampler.sample, args.samples, seed=s)
            rep = sobolev.generalization_bound(
                model, sampler.target, xs, sampler.sample, delta, cover.upper, c_hat,
                args.eta, args.batch, k, delta_approx, samples=args.samples, seed=s + 7919,
                target_grad=sampler.target_grad)
            rep.extra.update(eps2_hat=cover.eps_hat, eps2_lower=cover.lower, eps2_upper=cover.upper,
                             cover_trials=cover.trials, cover_confidence=cover.confidence)
        else:
            rep = sobolev.robustness_bound(
                model, xs, delta, args.eta, args.batch, k, c_hat, delta_approx, seed=s)
        if probe is not None and tag != "sobolev-emp":
            rep.extra.update(C_random=probe.C_random, C_construct=probe.C_construct,
                             C_violation_rate=probe.violation_rate)
        reports[tag] = rep.to_dict()
    return reports


def cmd_bounds(args, seed):
    tags = _tags(args.theorem)
    model = load_model(args.model)
    xs, _ = _load_points(args.data)
    if xs.shape[1] != model.input_dim:
        raise DimensionError("data width does not match the model")
    sampler = _sampler_for(args.data) if "gen1" in tags else None
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    outputs = []
    for tag, rep in bound_reports(model, xs, tags, args, seed, sampler).items():
        path = os.path.join(args.out_dir, f"{tag}.json")
        write_json(path, rep)
        outputs.append(path)
    return outputs


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgd-sobolev", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help=None):
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--manifest", default=None, help="manifest path (default <out>.manifest.json)")
        if out_help:
            p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("generate", help="sample a synthetic manifold dataset")
    _add_manifold_flags(p)
    p.add_argument("--hexfloat", action="store_true", help="write hex-float values")
    common(p, "CSV path; a <out>.json sidecar is written next to it")

    p = sub.add_parser("train", help="train an MLP with mini-batch SGD")
    p.add_argument("--data", required=True)
    _add_arch_flags(p)
    p.add_argument("--init-model", default=None, help="start from this checkpoint")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--interp-tol", type=float, default=train.INTERP_TOL)
    p.add_argument("--record-every", type=int, default=100)
    p.add_argument("--trace", default=None, help="trace CSV (default <out>.trace.csv)")
    common(p, "model checkpoint JSON")

    p = sub.add_parser("sweep", help="train over an (eta, batch) grid and tabulate g-norms")
    p.add_argument("--data", default=None, help="CSV data; otherwise a manifold set is generated")
    _add_manifold_flags(p)
    _add_arch_flags(p)
    p.add_argument("--etas", type=_float_list, default=[0.1])
    p.add_argument("--batches", type=_int_list, default=[5])
    p.add_argument("--grid", type=_grid, default=None, help="explicit cells eta:batch,...")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--iterations", type=int, default=100000)
    p.add_argument("--interp-tol", type=float, default=train.INTERP_TOL)
    p.add_argument("--record-every", type=int, default=1000)
    p.add_argument("--workers", type=int, default=None, help=f"processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--traces", default=None, help="long-format CSV of W1 spectral-norm traces")
    p.add_argument("--models-dir", default=None, help="save each final model here")
    common(p, "sweep CSV")

    p = sub.add_parser("stability", help="linear-stability analysis of SGD at a minimum")
    p.add_argument("--gradients", default=None, help="CSV of per-sample gradients, one row each")
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--mode", choices=tuple(MODE_MAP), default="auto")
    p.add_argument("--mc-batches", type=int, default=stability.MC_BATCHES)
    p.add_argument("--tol", type=float, default=stability.STABLE_TOL)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--horizon", type=int, default=0, help="also simulate this many linearized steps")
    p.add_argument("--replicas", type=int, default=2000)
    p.add_argument("--embed-gradients", action="store_true", help="copy the gradients into the report")
    common(p, "report JSON")

    p = sub.add_parser("bounds", help="evaluate Sobolev, generalization and robustness bounds")
    p.add_argument("--theorem", action="append", required=True,
                   help=f"tags, comma-separated or repeated: {', '.join(sobolev.BOUND_TAGS)}")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--delta", type=float, default=None, help="neighborhood radius (default half the regime limit)")
    p.add_argument("--delta-approx", type=float, default=0.1, help="parameter-perturbation radius")
    p.add_argument("--C", type=float, default=None, help="smoothness constant (default: estimated)")
    p.add_argument("--K", type=float, default=None, help="scatter constant (default: observed overlap)")
    p.add_argument("--samples", type=int, default=sobolev.MIN_MC_SAMPLES)
    p.add_argument("--out-dir", required=True, help="one <tag>.json per theorem plus manifest.json")
    common(p)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "stability": cmd_stability,
    "bounds": cmd_bounds,
}


def _manifest_path(args):
    if args.manifest:
        return args.manifest
    if args.command == "bounds":
        return os.path.join(args.out_dir, "manifest.json")
    return f"{args.out}.manifest.json"


def write_manifest(args, seed, outputs, started, elapsed):
    config = {k: v for k, v in vars(args).items() if k not in ("command", "manifest")}
    manifest = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": args.command,
        "config": config,
        "master_seed": args.seed,
        "derived_seed": seed,
        "seed_offset": SEED_OFFSETS[args.command],
        "tool_version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_clock": {"started": started, "seconds": elapsed},
    }
    path = _manifest_path(args)
    write_json(path, manifest)
    return path


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    seed = derived_seed(args.command, args.seed)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    try:
        outputs = COMMANDS[args.command](args, seed)
    except CapacityError as exc:
        hint = "--mode mc" if "batches" in str(exc) else "--mode power or --mode mc"
        print(f"error: {exc}; retry with {hint}", file=sys.stderr)
        return EXIT_CAPACITY
    except Diverged as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, ArgumentError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    write_manifest(args, seed, outputs, started, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
