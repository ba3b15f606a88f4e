"""Command-line entry point: ``lsc verify|pascal|pretrain|train|report``.

Exit codes: 0 success, 1 a verification failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from .config import load_config, root_seed
from .errors import ConfigError, LSCError, PreconditionError
from .grid_gradient import norm_curve
from .linalg_core import make_rng
from .pretrain import PretrainConfig, gaussian_batches, pretrain_run, weighted_targets
from .stack import build_stack, init_stack_params, stack_forward, transition_jacobians
from . import theory_verify as tv
from .training import aggregate, read_metrics_csv, train_run

CLAIMS = ("kostlan", "kostlan_variance", "init", "pascal", "paths", "psd", "halfrho")


def _rng(seed: int, *salt: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence([seed, *salt]))


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _run_claim(claim: str, seed: int, samples: int | None) -> list:
    if claim == "kostlan":
        return tv.kostlan_check(8, samples or 5000, _rng(seed, 1))
    if claim == "kostlan_variance":
        return [tv.kostlan_top_variance_check((4, 16, 64), samples or 5000, _rng(seed, 2))]
    if claim == "init":
        n = samples or 2000
        return [tv.init_equivalence_check("glorot", 32, "linear", n, _rng(seed, 3)),
                tv.init_equivalence_check("he", 32, "relu", n, _rng(seed, 4)),
                tv.init_equivalence_check("orthogonal", 32, "linear", n, _rng(seed, 5))]
    if claim == "pascal":
        return [tv.pascal_bound_check(10, 100, 1.0), tv.pascal_bound_check(10, 100, 0.5),
                tv.pascal_shape_check(10, 100, 0.5)]
    if claim == "paths":
        return [tv.path_identity_check()]
    if claim == "psd":
        return [tv.psd_superadditivity_check(6, samples or 1000, _rng(seed, 6))]
    if claim == "halfrho":
        return tv.halfrho_linear_bound_check(seed=seed)
    raise ConfigError(f"unknown claim {claim!r}")


def cmd_verify(args) -> int:
    seed = root_seed(args.seed)
    claims = CLAIMS if args.claim == "all" else (args.claim,)
    ok = True
    for claim in claims:
        try:
            reports = _run_claim(claim, seed, args.samples)
        except PreconditionError as exc:
            _emit({"claim": claim, "pass": False, "note": f"precondition failed: {exc}"})
            ok = False
            continue
        for r in reports:
            d = r.to_dict()
            if args.no_timing:
                d["seconds"] = 0.0
            _emit(d)
            ok &= r.passed
    return 0 if ok else 1


def cmd_pascal(args) -> int:
    if args.rho <= 0 or args.depth < 1 or args.time < 1:
        raise ConfigError("need rho > 0, depth >= 1 and time >= 1")
    st = build_stack("pascal", args.depth, 1, 1, rho=args.rho)
    params = init_stack_params(st, make_rng(0))
    run = stack_forward(st, params, np.zeros((args.time, 1)))
    curve = norm_curve(transition_jacobians(st, params, run), args.norm)
    if args.out:
        curve.write_csv(args.out)
        _emit({"kind": curve.kind, "c1": curve.c1, "c2": curve.c2, "dev_binomial": curve.dev_binomial,
               "dev_constant": curve.dev_constant})
    else:
        print("t,value,bound_binomial,bound_constant")
        for r in curve.rows():
            print(f"{r['t']},{r['value']!r},{r['bound_binomial']!r},{r['bound_constant']!r}")
    return 0


def cmd_pretrain(args) -> int:
    fields = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                fields = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: bad JSON: {exc}") from None
        fields = fields.get("pretrain", fields)
    target = weighted_targets(args.time, args.depth) if args.weighted else args.rho_target
    fields.setdefault("target", target)
    if isinstance(fields.get("target"), list):
        fields["target"] = tuple(fields["target"])
    if isinstance(fields.get("kappa_clip"), list):
        fields["kappa_clip"] = tuple(fields["kappa_clip"])
    fields.setdefault("max_steps", args.max_steps)
    seed = root_seed(args.seed)
    try:
        cfg = PretrainConfig(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    kw = {"activation": args.activation} if args.cell == "rnn" else {}
    st = build_stack(args.cell, args.depth, args.width, args.channels, **kw)
    params = init_stack_params(st, _rng(seed, 10))
    _, rep = pretrain_run(st, params, cfg, gaussian_batches(args.time, args.batch, args.channels), _rng(seed, 11))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rep.write_trace(os.path.join(args.out, "pretrain_trace.csv"))
        with open(os.path.join(args.out, "pretrain_summary.json"), "w") as fh:
            json.dump(rep.summary(), fh, indent=2, sort_keys=True)
    _emit(rep.summary())
    return 0 if rep.converged else 1


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seeds:
        cfg.seeds = args.seeds
    if args.out_dir:
        cfg.output_dir = args.out_dir
    agg = train_run(cfg, jobs=args.jobs)
    _emit(agg)
    return 0


def collect_report(directory) -> dict:
    """Re-read every per-seed artifact in ``directory`` and recompute the aggregate."""
    if not os.path.isdir(directory):
        raise ConfigError(f"no such directory: {directory}")
    results = []
    for path in sorted(glob.glob(os.path.join(directory, "result_seed*.json"))):
        with open(path) as fh:
            results.append(json.load(fh))
    if not results:
        raise ConfigError(f"no result_seed*.json files in {directory}")
    results.sort(key=lambda r: r["seed"])
    metrics = {}
    for r in results:
        path = os.path.join(directory, f"metrics_seed{r['seed']}.csv")
        if os.path.isfile(path):
            metrics[str(r["seed"])] = read_metrics_csv(path)
    ok = [r for r in results if not r["failed"]]
    out = aggregate([r["test"] for r in ok])
    out["failed_seeds"] = [r["seed"] for r in results if r["failed"]]
    out["per_seed"] = {str(r["seed"]): r["test"] for r in ok}
    out["epochs"] = {s: max(row["epoch"] for row in rows) for s, rows in metrics.items()}
    return out


def cmd_report(args) -> int:
    _emit(collect_report(args.dir))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsc", description="Local stability checks, pre-training and training.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run numerical checks, one JSON report per line")
    v.add_argument("--claim", choices=CLAIMS + ("all",), default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--samples", type=int, default=None)
    v.add_argument("--no-timing", action="store_true", help="report seconds as 0 for byte-identical replays")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("pascal", help="backward-norm curve of a PascalRNN grid as CSV")
    c.add_argument("--depth", type=int, default=10)
    c.add_argument("--time", type=int, default=100)
    c.add_argument("--rho", type=float, default=1.0)
    c.add_argument("--norm", type=lambda s: np.inf if s == "inf" else int(s), default=2)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_pascal)

    r = sub.add_parser("pretrain", help="drive transition radii to a target on Gaussian batches")
    r.add_argument("--cell", choices=("pascal", "rnn", "gru", "lstm", "alif"), default="gru")
    r.add_argument("--activation", default="sigmoid")
    r.add_argument("--depth", type=int, default=2)
    r.add_argument("--width", type=int, default=8)
    r.add_argument("--channels", type=int, default=4)
    r.add_argument("--time", type=int, default=10)
    r.add_argument("--batch", type=int, default=8)
    r.add_argument("--rho-target", type=float, default=1.0)
    r.add_argument("--weighted", action="store_true", help="targets T/(T+L) for time, L/(T+L) for depth")
    r.add_argument("--max-steps", type=int, default=500)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--config", default=None, help="JSON file of pre-training fields")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", help="train every configured seed")
    t.add_argument("--config", required=True)
    t.add_argument("--seeds", type=int, nargs="+", default=None)
    t.add_argument("--out-dir", default=None)
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("report", help="aggregate the artifacts of a training output directory")
    a.add_argument("dir")
    a.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"lsc: configuration error: {exc}", file=sys.stderr)
        return 2
    except LSCError as exc:
        print(f"lsc: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
