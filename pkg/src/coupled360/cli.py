"""Command-line entry point: ``coupled360 {solve,simulate,trace,oracle}``.

Exit codes: 0 success, 2 usage error, 3 invalid configuration, 4 I/O error,
5 no feasible selection, 6 oracle refused (search space over budget).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

from .baselines import ALGORITHMS, run_algorithms
from .bnb import BnbConfig
from .model import qoe_breakdown
from .oracle import SearchSpaceTooLarge, count_space, enumerate_optimal
from .problem import ConfigError, ProblemInstance, check_feasible
from .relax import SmoothingParams
from .sim import ExperimentConfig, run_experiment
from .trace_io import (TraceFormat, TraceParseError, TraceValidationError, gop_average, parse_trace,
                       trace_table, write_trace)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_INFEASIBLE = 5
EXIT_BUDGET = 6

CONFIG_DIR_ENV = "COUPLED360_CONFIG_DIR"
DEFAULT_EXPERIMENT = "default_experiment.json"

log = logging.getLogger("coupled360")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- config loading ---------------------------------------------------------

def _locate(path: str | None, default_name: str | None = None) -> Path:
    """Find a config file: as given, then under $COUPLED360_CONFIG_DIR, then bundled data."""
    candidates = []
    name = path or default_name
    if name is None:
        raise CliError(EXIT_USAGE, "no config given")
    p = Path(name)
    if path is not None:
        candidates.append(p)
    env = os.environ.get(CONFIG_DIR_ENV)
    if env and not p.is_absolute():
        candidates.append(Path(env) / p)
    if not p.is_absolute() and len(p.parts) == 1:
        candidates.append(Path(str(resources.files("coupled360") / "data" / name)))
    for c in candidates:
        if c.is_file():
            return c
    raise CliError(EXIT_IO, f"config file not found: {name}")


def _read_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise CliError(EXIT_CONFIG, f"{path}: top level must be an object")
    return data


def _dataclass_from(cls, data: dict | None, section: str):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{section}.{key}", "unknown field")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from None


def load_solve_config(path: Path) -> tuple[ProblemInstance, BnbConfig, SmoothingParams, dict]:
    """Accepts a plain instance document, ``{"instance": ..., "bnb": ..., "smoothing": ...}``,
    or a result document (its embedded ``config`` is used)."""
    doc = _read_json(path)
    if "config" in doc and isinstance(doc["config"], dict):
        doc = doc["config"]
    if "instance" in doc:
        inst_doc = doc["instance"]
        if not isinstance(inst_doc, dict):
            raise ConfigError("instance", "must be an object")
    else:
        inst_doc = {k: v for k, v in doc.items() if k not in ("bnb", "smoothing", "algorithm")}
    instance = ProblemInstance.from_dict(inst_doc)
    bnb = _dataclass_from(BnbConfig, doc.get("bnb"), "bnb")
    smoothing = _dataclass_from(SmoothingParams, doc.get("smoothing"), "smoothing")
    return instance, bnb, smoothing, doc


def _resolved(instance: ProblemInstance, bnb: BnbConfig, smoothing: SmoothingParams, algorithm=None):
    out = {"instance": instance.to_dict(),
           "bnb": {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(bnb).items()},
           "smoothing": asdict(smoothing)}
    if algorithm is not None:
        out["algorithm"] = algorithm
    return out


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc.strerror}") from None


# -- commands ---------------------------------------------------------------

def cmd_solve(args) -> int:
    instance, bnb, smoothing, doc = load_solve_config(_locate(args.config))
    overrides = {}
    if args.node_limit is not None:
        overrides["node_limit"] = args.node_limit
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.rule is not None:
        overrides["rule"] = args.rule
    if overrides:
        bnb = BnbConfig(**{**asdict(bnb), **overrides})
    algorithm = args.algorithm or doc.get("algorithm", "optimal")
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"unknown algorithm {algorithm!r}")
    outcome = run_algorithms(instance, [algorithm], bnb, smoothing, warm_start=not args.no_warm_start)[algorithm]
    result = {
        "config": _resolved(instance, bnb, smoothing, algorithm),
        "algorithm": algorithm,
        "status": outcome.status,
        "objective": outcome.objective if outcome.selection is not None else None,
        "flags": outcome.flags,
        "solver": {"nodes_explored": outcome.nodes, "gap": outcome.gap},
    }
    if outcome.selection is not None:
        result["selection"] = outcome.selection.to_dict()
        result["breakdown"] = qoe_breakdown(instance, outcome.selection)
        result["feasibility"] = check_feasible(instance, outcome.selection).to_dict()
    _emit(result, args.out)
    if outcome.selection is None or outcome.status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_oracle(args) -> int:
    instance, bnb, smoothing, _ = load_solve_config(_locate(args.config))
    try:
        res = enumerate_optimal(instance, budget=args.budget)
    except SearchSpaceTooLarge as exc:
        _emit({"status": "refused", "count_space": exc.count, "budget": exc.budget}, args.out)
        print(f"refused: search space has {exc.count} assignments (budget {exc.budget})",
              file=sys.stderr)
        return EXIT_BUDGET
    result = {"config": _resolved(instance, bnb, smoothing), "count_space": count_space(instance),
              "evaluated": res.evaluated,
              "status": "optimal" if res.feasible else "infeasible",
              "objective": res.objective if res.feasible else None}
    if res.feasible:
        result["selection"] = res.selection.to_dict()
        result["breakdown"] = qoe_breakdown(instance, res.selection)
    _emit(result, args.out)
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    path = _locate(args.config, DEFAULT_EXPERIMENT)
    data = _read_json(path)
    if "config" in data and "rows" in data:      # a previous report
        data = data["config"]
    if args.seed is not None:
        data["seed"] = args.seed
    if args.knowledge:
        data["knowledge"] = list(dict.fromkeys(args.knowledge))
    if args.timing:
        data["record_timing"] = True
    config = ExperimentConfig.from_dict(data, base_dir=path.parent.resolve())
    try:
        report = run_experiment(config, workers=args.threads)
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except (TraceParseError, TraceValidationError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    if args.out is None:
        sys.stdout.write(report.to_csv())
        return EXIT_OK
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "report.csv").write_text(report.to_csv())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc.strerror}") from None
    return EXIT_OK


def _trace_format(args) -> TraceFormat:
    spec = {}
    if args.format_file:
        spec.update(_read_json(Path(args.format_file)))
    if args.preset:
        spec["preset"] = args.preset
    for key in ("delimiter", "time_unit", "value_unit", "interval_unit"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    for key in ("time_col", "value_col", "interval_col"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    if args.interval_s is not None:
        spec["interval_s"] = args.interval_s
    if spec.get("delimiter") == "whitespace":
        spec["delimiter"] = None
    try:
        return TraceFormat.from_dict(spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("format", str(exc)) from None


def cmd_trace(args) -> int:
    fmt = _trace_format(args)
    src = Path(args.input)
    if not src.is_file():
        raise CliError(EXIT_IO, f"trace file not found: {src}")
    try:
        trace = parse_trace(src, fmt)
    except (TraceParseError, TraceValidationError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    if args.trace_cmd == "convert":
        if args.out is None:
            sys.stdout.write("t_seconds,mbps\n")
            for t, v in zip(trace.times, trace.mbps):
                sys.stdout.write(f"{float(t)!r},{float(v)!r}\n")
        else:
            try:
                write_trace(trace, args.out)
            except OSError as exc:
                raise CliError(EXIT_IO, f"cannot write {args.out}: {exc.strerror}") from None
        return EXIT_OK
    # gops
    if args.gop_duration <= 0:
        raise CliError(EXIT_USAGE, "--gop-duration must be positive")
    count = args.count
    if count is None:
        count = max(1, int(trace.duration // args.gop_duration))
    if count < 1:
        raise CliError(EXIT_USAGE, "--count must be at least 1")
    res = gop_average(trace, args.gop_duration, count, start=args.start,
                      interpolation=args.interpolation)
    if res.extended:
        print("warning: GOP window extends past the trace; last value held", file=sys.stderr)
    table = trace_table(res.values, args.gop_duration)
    if args.out is None:
        sys.stdout.write(table)
    else:
        try:
            Path(args.out).write_text(table)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {args.out}: {exc.strerror}") from None
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coupled360",
                                description="Joint uplink/downlink rate selection for multi-camera 360 video.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("config")
    s.add_argument("--algorithm", choices=ALGORITHMS)
    s.add_argument("--out")
    s.add_argument("--node-limit", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--rule", choices=["most_fractional", "epsilon_threshold"])
    s.add_argument("--no-warm-start", action="store_true",
                   help="do not seed the search with the baselines' answers")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("simulate", help="run the trace-driven comparison")
    m.add_argument("config", nargs="?", help=f"experiment config (default: {DEFAULT_EXPERIMENT})")
    m.add_argument("--seed", type=int)
    m.add_argument("--knowledge", action="append", choices=["perfect", "predicted"])
    m.add_argument("--out", help="directory for report.json and report.csv")
    m.add_argument("--threads", type=int, default=1, help="worker processes")
    m.add_argument("--timing", action="store_true", help="record runtimes (breaks byte-identical replay)")
    m.set_defaults(func=cmd_simulate)

    t = sub.add_parser("trace", help="trace utilities")
    tsub = t.add_subparsers(dest="trace_cmd", required=True)
    for name in ("convert", "gops"):
        c = tsub.add_parser(name)
        c.add_argument("input")
        c.add_argument("--out")
        c.add_argument("--preset", choices=["normalized", "lte_log"])
        c.add_argument("--format-file", help="JSON file with TraceFormat fields")
        c.add_argument("--delimiter", help="field separator, or 'whitespace'")
        c.add_argument("--time-col", type=int)
        c.add_argument("--value-col", type=int)
        c.add_argument("--interval-col", type=int)
        c.add_argument("--time-unit", choices=["s", "ms"])
        c.add_argument("--value-unit", choices=["bps", "kbps", "mbps", "bytes"])
        c.add_argument("--interval-unit", choices=["s", "ms"])
        c.add_argument("--interval-s", type=float)
        if name == "gops":
            c.add_argument("--gop-duration", type=float, default=1.0)
            c.add_argument("--count", type=int)
            c.add_argument("--start", type=float, default=0.0)
            c.add_argument("--interpolation", choices=["hold", "linear"], default="hold")
        c.set_defaults(func=cmd_trace)

    o = sub.add_parser("oracle", help="exhaustive optimum of a small instance")
    o.add_argument("config")
    o.add_argument("--budget", type=int, default=10**5)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
