"""Command-line front end: ``mmapq {analyze,simulate,compare} --model FILE ...``.

Every command writes one flat table with the columns

    quantity, type_index, env_state, t, value, stderr, method

``stderr`` is empty for analytic rows.  ``compare`` writes, per quantity,
the analytic row, the simulation row and a ``z-score PASS``/``z-score FAIL``
row whose value is the z-score.  Exit status: 0 on success, 1 when a
comparison fails, 2 on invalid input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import fixtures
from .errors import MMAPQError, ValidationError
from .measures import performance_report, stationary_targets_valid
from .model import NumericSettings, ModelConfig, validate_model
from .modelio import load_model
from .simulator import compare, simulate

COLUMNS = ("quantity", "type_index", "env_state", "t", "value", "stderr", "method")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmapq", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model file, or the name of a bundled fixture")
    common.add_argument("--horizon", type=_positive(float), help="time horizon T (default: from the model)")
    common.add_argument("--step", type=_positive(float), help="grid step (default: from the model)")
    common.add_argument("--z-points", type=_floats, default=[], help="PGF arguments, comma separated")
    common.add_argument("--s-points", type=_floats, default=[], help="LST arguments, comma separated")
    common.add_argument("--output", help="output file (default: standard output)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--method", choices=("ode", "closed-form"), default="ode")
    common.add_argument("--phase-reset", choices=("keep", "reset"), default="keep")
    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--reps", type=_positive(int), default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workers", type=_positive(int), default=1)

    a = sub.add_parser("analyze", parents=[common], help="evaluate the analytic report")
    a.add_argument("--pmf", action="store_true", help="include the long-run queue-length PMF")
    sub.add_parser("simulate", parents=[common, sim], help="estimate by simulation")
    c = sub.add_parser("compare", parents=[common, sim], help="z-scores of analytic vs simulated values")
    c.add_argument("--z-threshold", type=_positive(float), default=3.0)
    return parser


def _load(args) -> ModelConfig:
    path = Path(args.model)
    if not path.exists() and args.model in fixtures.NAMES:
        config = fixtures.load_fixture(args.model)
    else:
        config = load_model(path.read_text())
    num = config.numeric
    horizon = args.horizon if args.horizon is not None else num.horizon
    step = args.step if args.step is not None else num.step
    return ModelConfig(config.mmap, config.environment, config.service_resources, config.initial_customers,
                       NumericSettings(horizon, step))


def _row(key, value, stderr, method):
    return {
        "quantity": key.quantity,
        "type_index": key.type_index,
        "env_state": key.env_state,
        "t": key.t,
        "value": float(value),
        "stderr": None if stderr is None else float(stderr),
        "method": method,
    }


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _finite(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def render(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        clean = [{c: _finite(row[c]) for c in COLUMNS} for row in rows]
        return json.dumps({"columns": list(COLUMNS), "rows": clean}, indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in COLUMNS])
    return buf.getvalue()


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    method = args.method.replace("-", "_")
    try:
        model = validate_model(_load(args))
        T = model.config.numeric.horizon
        rows = []
        status = 0
        if args.command == "analyze":
            rep = performance_report(model, T, args.z_points, args.s_points, method, args.phase_reset, pmf=args.pmf)
            for key, v in {**rep.rows(), **rep.info_rows()}.items():
                rows.append(_row(key, v, None, args.method))
        else:
            est = simulate(model, T, args.reps, args.seed, args.phase_reset, workers=args.workers)
            sim_rows = est.rows(args.z_points, args.s_points)
            if args.command == "simulate":
                for key, e in sim_rows.items():
                    rows.append(_row(key, e.value, e.stderr, "simulation"))
            else:
                rep = performance_report(model, T, args.z_points, args.s_points, method, args.phase_reset)
                analytic = rep.rows(stationary=stationary_targets_valid(model, T))
                report = compare(sim_rows, analytic, args.z_threshold)
                for r in report.rows:
                    rows.append(_row(r.key, r.analytic, None, args.method))
                    rows.append(_row(r.key, r.estimate, r.stderr, "simulation"))
                    rows.append(_row(r.key, r.z, None, "z-score PASS" if r.passed else "z-score FAIL"))
                if not report.passed:
                    status = 1
                    for r in report.failures:
                        print(f"FAIL {r.key.quantity} type={r.key.type_index} z={r.z:.3f}", file=sys.stderr)
    except ValidationError as exc:
        for err in exc.errors:
            print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except (MMAPQError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    text = render(rows, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return status


def main(argv=None) -> None:
    sys.exit(run(argv))
