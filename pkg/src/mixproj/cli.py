"""Command-line driver: ``mixproj project|solve|gen``.

Records go to JSON lines (one object per run), solver traces to CSV.
Exit status is 0 on success, 1 when a solver stops abnormally, 2 for bad
flags and 3 for I/O or format errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .ballproj import RootConfig, project_mixed_ball
from .core import FormatError, GroupedVector, read_matrix_market
from .mtl import (
    MtlProblem, SynthSpec, generate_synthetic, load_mtl, normalize_columns, planted_norm, save_mtl,
    to_constrained,
)
from .norms import NormSpec, canonical_exponent, mixed_norm
from .solvers import SgdOptions, SpgOptions, sgd_solve, spg_solve

TRACE_HEADER = ("iter", "seconds", "objective", "feasibility-error")
DEFAULT_RATIOS = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)


def record_schema():
    """The JSON schema every emitted record satisfies."""
    return json.loads(resources.files("mixproj").joinpath("record.schema.json").read_text())


def _exponent(text):
    try:
        return canonical_exponent(float(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _float_list(text):
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _exponent_list(text):
    return [_exponent(t) for t in str(text).split(",") if t.strip()]


def _json_number(x):
    return "inf" if x == math.inf else x


def _usec(seconds):
    return round(float(seconds), 6)


def _write_jsonl(path, records):
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if path is None or str(path) == "-":
        sys.stdout.write(lines)
    else:
        Path(path).write_text(lines)


def cmd_project(args):
    """Sweep radii (and exponents) for projections of one matrix onto l_{1,q} balls."""
    if args.matrix_file:
        V = read_matrix_market(args.matrix_file).toarray()
    else:
        if args.rows < 1 or args.cols < 1:
            raise ValueError("--rows and --cols must be positive")
        V = np.random.default_rng(args.seed).standard_normal((args.rows, args.cols))
    y = GroupedVector.from_rows(V)
    cfg = RootConfig(ftol=args.ftol)
    records = []
    for q in args.q:
        base = mixed_norm(y, NormSpec(1.0, q))
        for ratio in args.ratios:
            if not ratio > 0:
                raise ValueError(f"ratios must be positive, got {ratio}")
            gamma = ratio * base
            t0 = time.perf_counter()
            res = project_mixed_ball(y, gamma, q, cfg)
            seconds = time.perf_counter() - t0
            fx = mixed_norm(res.x, NormSpec(1.0, q))
            diff = res.x.data - y.data
            records.append({
                "experiment": "project",
                "q": _json_number(q),
                "gamma_ratio": ratio,
                "gamma": gamma,
                "rows": int(V.shape[0]),
                "cols": int(V.shape[1]),
                "seed": args.seed,
                "seconds": _usec(seconds),
                "err": 0.0 if res.interior else abs(gamma - fx),
                "objective": 0.5 * float(np.dot(diff, diff)),
                "interior": bool(res.interior),
                "theta": res.theta,
                "iterations": res.evaluations,
                "projections": 1,
            })
    _write_jsonl(args.output, records)
    return 0


def _load_problem(args):
    if args.manifest:
        prob = load_mtl(args.manifest)
    else:
        spec = SynthSpec(args.m, args.d, args.n, args.density, args.active, args.noise, args.seed)
        prob, _ = generate_synthetic(spec)
    if args.gamma is not None or args.q is not None:
        prob = MtlProblem(prob.X, prob.y, args.gamma if args.gamma is not None else prob.gamma,
                          args.q if args.q is not None else prob.q)
    if args.normalize:
        prob, _ = normalize_columns(prob)
    return prob


def write_trace(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for it, sec, obj, feas in zip(report.iterations, report.seconds, report.objective, report.feasibility):
            w.writerow([int(it), f"{sec:.6f}", repr(float(obj)), repr(float(feas))])


def cmd_solve(args):
    """Run SPG or SGD on a multitask lasso problem; write trace and summary."""
    prob = _load_problem(args)
    cp = to_constrained(prob, check=not args.skip_check)
    if args.solver == "spg":
        opts = SpgOptions(max_iter=args.max_iter, tol=args.tol, memory=args.memory)
        x, rep = spg_solve(cp, opts)
    else:
        opts = SgdOptions(batch=args.batch, step0=args.step0, horizon=args.horizon,
                          project_every=args.project_every, epochs=args.epochs, seed=args.seed)
        x, rep = sgd_solve(cp, opts)
    if args.trace:
        write_trace(args.trace, rep)
    summary = {
        "experiment": "solve",
        "solver": args.solver,
        "q": _json_number(prob.q),
        "gamma": prob.gamma,
        "rows": prob.r,
        "cols": prob.d,
        "tasks": prob.n,
        "seed": args.seed,
        "seconds": _usec(rep.seconds[-1]),
        "err": abs(cp.constraint(x) - prob.gamma),
        "objective": float(cp.loss(x)),
        "initial_objective": float(rep.objective[0]),
        "iterations": int(rep.iterations[-1]),
        "projections": rep.projections,
        "projection_seconds": _usec(rep.projection_seconds),
        "gradient_evaluations": rep.gradient_evaluations,
        "reason": rep.reason,
    }
    if rep.step0 is not None:
        summary["step0"] = rep.step0
    _write_jsonl(args.output, [summary])
    return 0 if rep.reason in ("converged", "max_iter") else 1


def cmd_gen(args):
    """Write a synthetic problem (MatrixMarket + CSV + manifest)."""
    spec = SynthSpec(args.m, args.d, args.n, args.density, args.active, args.noise, args.seed)
    prob, W = generate_synthetic(spec)
    support = [int(i) for i in np.flatnonzero(np.any(W != 0, axis=1))]
    norm = planted_norm(W)
    path = save_mtl(prob, args.out, extra={"planted_rows": support, "planted_norm": norm,
                                           "seed": args.seed})
    print(json.dumps({"manifest": str(path), "planted_rows": support, "planted_norm": norm}))
    return 0


def _synth_flags(p):
    p.add_argument("--m", type=int, default=200, help="rows per task")
    p.add_argument("--d", type=int, default=100, help="features")
    p.add_argument("--n", type=int, default=10, help="tasks")
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--active", type=int, default=5, help="planted nonzero rows")
    p.add_argument("--noise", type=float, default=None, help="label noise std (default 1%% of signal RMS)")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flag defaults")
    common.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP threads")
    common.add_argument("--output", default=None, help="JSON-lines output (default stdout)")

    parser = argparse.ArgumentParser(prog="mixproj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}

    p = sub.add_parser("project", parents=[common], help="projection sweeps")
    p.add_argument("--rows", type=int, default=1000)
    p.add_argument("--cols", type=int, default=100)
    p.add_argument("--matrix-file", default=None, help="MatrixMarket input; its rows are the groups")
    p.add_argument("--q", type=_exponent_list, default=[math.inf], help="comma-separated exponents")
    p.add_argument("--ratios", type=_float_list, default=list(DEFAULT_RATIOS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ftol", type=float, default=1e-10)
    p.set_defaults(func=cmd_project)
    parser.commands["project"] = p

    p = sub.add_parser("solve", parents=[common], help="run SPG or SGD on multitask lasso")
    p.add_argument("--manifest", default=None, help="problem manifest (else synthetic)")
    _synth_flags(p)
    p.add_argument("--solver", choices=("spg", "sgd"), default="spg")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--q", type=_exponent, default=None)
    p.add_argument("--normalize", action="store_true", help="scale features to unit norm")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--memory", type=int, default=10)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--step0", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--project-every", type=int, default=10)
    p.add_argument("--epochs", type=float, default=1.0)
    p.add_argument("--trace", default=None, help="CSV trace path")
    p.add_argument("--skip-check", action="store_true", help="skip the gradient self-check")
    p.set_defaults(func=cmd_solve)
    parser.commands["solve"] = p

    p = sub.add_parser("gen", parents=[common], help="write a synthetic problem")
    _synth_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)
    parser.commands["gen"] = p
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(config, dict):
            parser.error("config file must hold a JSON object")
        sub = parser.commands[args.command]
        known = {a.dest: a for a in sub._actions}
        for key, value in config.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("help", "config"):
                parser.error(f"unknown config key {key!r}")
            action = known[dest]
            if action.type is not None and isinstance(value, (str, int, float)):
                value = action.type(str(value))
            elif action.type is not None and isinstance(value, list):
                value = action.type(",".join(str(v) for v in value))
            config[key] = value
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    args = parse_args(argv)
    if args.threads < 1:
        print("mixproj: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"mixproj: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"mixproj: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"mixproj: solver failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
