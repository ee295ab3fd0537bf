"""Command-line interface: ``mosumseg segment | simulate | calibrate``.

Exit codes: 0 on success, 2 for usage or input errors, 3 for numerical
failures (singular scalings, failed fits).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .errors import DomainError, MosumError
from .estimators import Samples, make_model
from .mosum import Inspection, ScanConfig
from .scaling import KINDS, ScalingPolicy
from .segmenter import segment, segment_recursive

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3

RESULT_SCHEMA = {
    "type": "object",
    "required": ["q_hat", "changepoints", "threshold", "config", "warnings"],
    "additionalProperties": False,
    "properties": {
        "q_hat": {"type": "integer", "minimum": 0},
        "threshold": {"type": "number"},
        "config": {"type": "object"},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "changepoints": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["k", "interval", "peak", "pass", "theta_inspect"],
                "additionalProperties": False,
                "properties": {
                    "k": {"type": "integer"},
                    "interval": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                    "peak": {"type": "number"},
                    "pass": {"type": "integer", "minimum": 1},
                    "theta_inspect": {"type": ["array", "null"], "items": {"type": "number"}},
                },
            },
        },
    },
}


class InputError(ValueError):
    """Unreadable or ill-typed user input."""


def read_csv(path) -> tuple[list, np.ndarray]:
    """Header row plus a float matrix from a comma-separated file."""
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from None
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    width = len(header)
    values = np.empty((len(body), width))
    for i, row in enumerate(body, start=2):
        if len(row) != width:
            raise InputError(f"{path}, line {i}: expected {width} fields, found {len(row)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise InputError(f"{path}, line {i}: {cell!r} is not a number") from None
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: missing or non-finite values")
    return header, values


def build_samples(model: str, values: np.ndarray) -> tuple[Samples, int]:
    """Model-ready samples plus the offset that maps split indices to observation numbers."""
    if model == "linreg":
        if values.shape[1] < 2:
            raise InputError("linreg input needs a response column and at least one regressor column")
        return Samples.regression(values[:, 0], values[:, 1:], intercept=True), 0
    if model == "inarch":
        if values.shape[1] != 1:
            raise InputError("inarch input must have exactly one column of counts")
        try:
            return Samples.counts(values[:, 0]), 1
        except ValueError as err:
            raise InputError(str(err)) from None
    return Samples.from_series(values[:, 0] if values.shape[1] == 1 else values), 0


def parse_inspection(text: str, estimator: str) -> tuple[Inspection, bool]:
    """``global``, ``recursive``, ``range:a,b`` or ``fixed:v1,v2,...``."""
    kind, _, arg = text.partition(":")
    if kind in ("global", "recursive") and not arg:
        return Inspection(estimator=estimator), kind == "recursive"
    try:
        numbers = [float(v) for v in arg.split(",")]
    except ValueError:
        raise InputError(f"bad inspection argument {text!r}") from None
    if kind == "range" and len(numbers) == 2 and all(v.is_integer() for v in numbers):
        return Inspection.range_fit(int(numbers[0]), int(numbers[1]), estimator), False
    if kind == "fixed":
        return Inspection.fixed(numbers), False
    raise InputError(f"bad inspection {text!r}; use global, recursive, range:a,b or fixed:v1,...")


def parse_known(text: str | None, p: int) -> np.ndarray:
    if text is None:
        return np.eye(p)
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise InputError(f"bad known scale {text!r}") from None
    if v.size == p:
        return np.diag(v)
    if v.size == p * p:
        return v.reshape(p, p)
    raise InputError(f"known scale needs {p} diagonal or {p * p} matrix entries, got {v.size}")


def result_json(result, offset: int) -> dict:
    out = {
        "q_hat": result.q_hat,
        "changepoints": [
            {
                "k": cp.k + offset,
                "interval": [cp.interval.v + offset, cp.interval.w + offset],
                "peak": cp.peak,
                "pass": cp.pass_id,
                "theta_inspect": list(cp.inspection_theta) if cp.inspection_theta is not None else None,
            }
            for cp in result.changepoints
        ],
        "threshold": result.threshold,
        "config": result.config,
        "warnings": [f"{flag} at k={k + offset}" for k, flag in result.warnings],
    }
    jsonschema.validate(out, RESULT_SCHEMA)
    return out


def _write(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_segment(args) -> int:
    _, values = read_csv(args.input)
    samples, offset = build_samples(args.model, values)
    model = make_model(args.model, samples)
    inspection, recursive = parse_inspection(args.inspection, args.inspection_estimator)
    if recursive and args.statistic != "score":
        raise InputError("recursive inspection needs --statistic score")
    scaling = args.scaling or ("score-local" if args.statistic == "score" else "wald-local")
    policy = ScalingPolicy(scaling, parse_known(args.known_scale, model.dim) if scaling == "known" else None,
                           args.ridge)
    config = ScanConfig(args.G, args.statistic, inspection, policy)
    if recursive:
        result = segment_recursive(samples, model, config, alpha=args.alpha, epsilon=args.epsilon,
                                   max_depth=args.max_depth, inflation=args.inflation)
    else:
        result = segment(samples, model, config, alpha=args.alpha, epsilon=args.epsilon,
                         relocate="identity" if args.relocate else None, inflation=args.inflation)
    _write(json.dumps(result_json(result, offset), indent=2) + "\n", args.output)
    if args.emit_stats:
        scan = result.scans[0]
        lines = ["k,value"] + [f"{k + offset},{'' if not np.isfinite(v) else repr(float(v))}"
                               for k, v in zip(scan.ks, scan.stats)]
        Path(args.emit_stats).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from . import simlab

    if args.scenario not in simlab.METHODS:
        raise InputError(f"unknown scenario {args.scenario!r}; choose from {sorted(simlab.METHODS)}")
    methods = args.method or list(simlab.METHODS[args.scenario])
    reports = [simlab.run_study(args.scenario, m, args.reps, G=args.G, master_seed=args.seed,
                                alpha=args.alpha, epsilon=args.epsilon) for m in methods]
    table = simlab.format_table(reports)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{args.scenario}_G{reports[0].G}"
        (out / f"{stem}.csv").write_text(simlab.reports_to_csv(reports))
        (out / f"{stem}.txt").write_text(table)
    sys.stdout.write(table)
    for r in reports:
        print(f"{r.method}: {r.runtime:.1f}s", file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .simlab import calibrate

    report = calibrate(args.n, args.G, args.reps, master_seed=args.seed, scaling=args.scaling,
                       alphas=tuple(args.alphas))
    _write(json.dumps(report.to_dict(), indent=2) + "\n", args.output)
    if args.emit_maxima:
        Path(args.emit_maxima).write_text("normed_max\n" + "".join(f"{v!r}\n" for v in report.normed_max.tolist()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mosumseg", description="MOSUM change-point segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment a CSV series")
    seg.add_argument("input", help="CSV file with a header row")
    seg.add_argument("--model", default="mean", choices=["mean", "median-like", "linreg", "inarch"])
    seg.add_argument("-G", "--G", "--bandwidth", dest="G", type=int, required=True)
    seg.add_argument("--alpha", type=float, default=0.05)
    seg.add_argument("--epsilon", type=float, default=0.2)
    seg.add_argument("--statistic", choices=["score", "wald"], default="score")
    seg.add_argument("--inspection", default="global", help="global, recursive, range:a,b or fixed:v1,v2,...")
    seg.add_argument("--inspection-estimator", choices=["fit", "median"], default="fit")
    seg.add_argument("--scaling", choices=KINDS, default=None)
    seg.add_argument("--known-scale", default=None, help="diagonal or row-major matrix entries for --scaling known")
    seg.add_argument("--ridge", type=float, default=None)
    seg.add_argument("--inflation", type=float, default=None)
    seg.add_argument("--relocate", action="store_true", help="re-locate with identity weighting")
    seg.add_argument("--max-depth", type=int, default=3)
    seg.add_argument("--emit-stats", default=None, help="write the statistic series as CSV (k,value)")
    seg.add_argument("-o", "--output", default=None)
    seg.set_defaults(func=cmd_segment)

    sim = sub.add_parser("simulate", help="run a simulation study")
    sim.add_argument("scenario")
    sim.add_argument("--method", action="append", default=None)
    sim.add_argument("-G", "--G", "--bandwidth", dest="G", type=int, default=None)
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--epsilon", type=float, default=0.2)
    sim.add_argument("--out-dir", default=None)
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="compare the null maximum with its Gumbel limit")
    cal.add_argument("--n", type=int, default=5000)
    cal.add_argument("-G", "--G", "--bandwidth", dest="G", type=int, default=250)
    cal.add_argument("--reps", type=int, default=500)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--scaling", choices=["known", "mosum-window", "score-local"], default="known")
    cal.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.05, 0.1])
    cal.add_argument("-o", "--output", default=None)
    cal.add_argument("--emit-maxima", default=None)
    cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DomainError as err:
        print(f"mosumseg: {err}", file=sys.stderr)
        return EXIT_USAGE
    except MosumError as err:
        print(f"mosumseg: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as err:
        print(f"mosumseg: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
