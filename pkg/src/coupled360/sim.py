"""Trace-driven experiment: random viewers, bandwidth traces, prediction error.

For every trace a population of viewers is drawn (FOV, start offset into
the trace, bandwidth scale).  Each algorithm is run with the true per-GOP
bandwidth ("perfect") and with a noisy forecast ("predicted"); in both cases
the chosen selection is scored against the true bandwidth.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import ALGORITHMS, run_algorithms
from .bnb import BnbConfig, BranchRule
from .model import FovWindow, GopTimeline, QoEParams, QualityLadder, TileGrid, fov_tiles, qoe_breakdown
from .problem import ConfigError, CouplingMode, DownlinkBudget, ProblemInstance, User, check_feasible
from .relax import SmoothingParams
from .trace_io import BandwidthTrace, TraceFormat, gop_average, parse_trace

__all__ = ["sample_fov", "fov_tiles", "PredictionModel", "predict_trace", "UserPopulation",
           "ExperimentConfig", "ExperimentReport", "run_experiment"]

KNOWLEDGE = ("perfect", "predicted")


def sample_fov(rng: np.random.Generator, grid: TileGrid | None = None,
               width_deg: float = 120.0, height_deg: float = 90.0) -> FovWindow:
    """Uniform yaw; pitch uniform over the range that keeps the window on the sphere."""
    yaw = float(rng.uniform(0.0, 360.0))
    reach = 90.0 - height_deg / 2.0
    pitch = float(rng.uniform(-reach, reach)) if reach > 0 else 0.0
    return FovWindow(yaw, pitch, width_deg, height_deg)


@dataclass(frozen=True)
class PredictionModel:
    """Multiplicative (``relative``) or additive (``absolute``) Gaussian forecast error."""

    noise_scale: float = 0.3
    floor: float = 0.01
    mode: str = "relative"
    seed: int = 0

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if self.floor <= 0:
            raise ValueError("floor must be positive")
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"unknown noise mode {self.mode!r}")


def predict_trace(values: Sequence[float], model: PredictionModel,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    b = np.asarray(values, dtype=float)
    if np.any(b < 0):
        raise ValueError("bandwidth must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(model.seed)
    xi = rng.standard_normal(b.shape)
    if model.mode == "relative":
        pred = b * (1.0 + model.noise_scale * xi)
    else:
        pred = b + model.noise_scale * xi
    return np.maximum(pred, model.floor)


@dataclass
class UserPopulation:
    fovs: list[FovWindow]
    traces: list[int]          # index into the trace pool
    offsets_s: list[float]
    scales: list[float]
    seed: int = 0

    def __len__(self) -> int:
        return len(self.fovs)

    @classmethod
    def sample(cls, n: int, pool: Sequence[BandwidthTrace], horizon_s: float,
               rng: np.random.Generator, grid: TileGrid, fov_size=(120.0, 90.0),
               scale_range=(1.0, 1.0), seed: int = 0) -> "UserPopulation":
        fovs, traces, offsets, scales = [], [], [], []
        for i in range(n):
            fovs.append(sample_fov(rng, grid, *fov_size))
            j = i % len(pool)
            traces.append(j)
            slack = max(pool[j].duration - horizon_s, 0.0)
            offsets.append(float(pool[j].times[0] + rng.uniform(0.0, slack)))
            scales.append(float(rng.uniform(*scale_range)))
        return cls(fovs, traces, offsets, scales, seed)

    def bandwidth(self, pool: Sequence[BandwidthTrace], gop_duration: float, gops: int) -> list[np.ndarray]:
        out = []
        for j, off, sc in zip(self.traces, self.offsets_s, self.scales):
            out.append(gop_average(pool[j], gop_duration, gops, start=off).values * sc)
        return out


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceSpec:
    name: str
    path: str
    format: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings; ``to_dict`` round-trips through ``from_dict``."""

    traces: tuple[TraceSpec, ...]
    users: int = 10
    gops: int = 10
    gop_duration_s: float = 1.0
    cameras: int = 6
    ul_ladder_mbps: tuple[float, ...] = (1.5, 2.0, 2.5, 3.0)
    dl_ladder_mbps: tuple[float, ...] = (0.2, 0.6, 1.0, 1.4)
    ul_bandwidth_mbps: float = 12.0
    grid_columns: int = 4
    grid_rows: int = 4
    fov_width_deg: float = 120.0
    fov_height_deg: float = 90.0
    alpha: float = 1.0
    beta: float = 1.0
    q_scale_mbps: float = 1.0
    eval_stall_mode: str = "aggregate"
    coupling: str = "per_gop_bitrate"
    dl_budget: str = "per_gop"
    user_scale: tuple[float, float] = (0.2, 0.35)
    assignment: str = "per_trace"
    seed: int = 1
    noise_scale: float = 0.3
    noise_floor_mbps: float = 0.01
    noise_mode: str = "relative"
    noise_seeds: int = 10
    algorithms: tuple[str, ...] = ALGORITHMS
    knowledge: tuple[str, ...] = KNOWLEDGE
    node_limit: int = 100
    sub_node_limit: int = 5
    branch_rule: str = "most_fractional"
    gap_tol: float = 1e-10
    warm_start: bool = True
    smoothing_epsilon: float = 0.05
    record_timing: bool = False
    base_dir: str = "."

    def __post_init__(self):
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError("algorithms", f"unknown algorithm {a!r}")
        for k in self.knowledge:
            if k not in KNOWLEDGE:
                raise ConfigError("knowledge", f"unknown knowledge mode {k!r}")
        if self.assignment not in ("per_trace", "round_robin"):
            raise ConfigError("assignment", "must be per_trace or round_robin")
        if not self.traces and self.users:
            raise ConfigError("traces", "at least one trace is needed")
        if self.users < 0:
            raise ConfigError("users", "must be non-negative")
        if self.gops < 1:
            raise ConfigError("gops", "must be at least 1")
        if self.gop_duration_s <= 0:
            raise ConfigError("gop_duration_s", "must be positive")
        if self.noise_seeds < 1:
            raise ConfigError("noise_seeds", "must be at least 1")
        lo, hi = self.user_scale
        if not 0 < lo <= hi:
            raise ConfigError("user_scale", "need 0 < low <= high")
        if self.eval_stall_mode not in ("per_tile", "aggregate"):
            raise ConfigError("eval_stall_mode", "must be per_tile or aggregate")
        for name, enum_cls in (("coupling", CouplingMode), ("dl_budget", DownlinkBudget),
                               ("branch_rule", BranchRule)):
            try:
                enum_cls(getattr(self, name))
            except ValueError:
                raise ConfigError(name, f"invalid value {getattr(self, name)!r}") from None

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        raw_traces = data.pop("traces", [])
        if not isinstance(raw_traces, list):
            raise ConfigError("traces", "must be a list")
        traces = []
        for i, t in enumerate(raw_traces):
            if not isinstance(t, dict) or "path" not in t:
                raise ConfigError(f"traces[{i}].path", "missing required field")
            traces.append(TraceSpec(str(t.get("name", Path(t["path"]).stem)), str(t["path"]),
                                    dict(t.get("format", {}))))
        kwargs = {}
        defaults = {f.name: f.default for f in cls.__dataclass_fields__.values()}
        for key, value in data.items():
            default = defaults[key]
            try:
                if isinstance(default, bool):
                    if not isinstance(value, bool):
                        raise TypeError("expected true/false")
                    kwargs[key] = value
                elif isinstance(default, tuple):
                    kwargs[key] = tuple(type(default[0])(v) for v in value)
                elif isinstance(default, int):
                    if isinstance(value, bool) or int(value) != value:
                        raise TypeError("expected an integer")
                    kwargs[key] = int(value)
                elif isinstance(default, float):
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = str(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from None
        kwargs.setdefault("base_dir", str(base_dir))
        return cls(traces=tuple(traces), **kwargs)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if name == "traces":
                value = [{"name": t.name, "path": t.path, "format": dict(t.format)} for t in value]
            elif isinstance(value, tuple):
                value = list(value)
            out[name] = value
        return out

    def resolve_path(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def bnb_config(self, seed: int = 0) -> BnbConfig:
        return BnbConfig(rule=BranchRule(self.branch_rule), node_limit=self.node_limit,
                         sub_node_limit=self.sub_node_limit, gap_tol=self.gap_tol, seed=seed)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

ROW_FIELDS = ("trace", "knowledge", "noise_seed", "algorithm", "total_qoe", "quality",
              "stall_s", "switch", "planned_qoe", "feasible_on_true", "status", "nodes", "flags")


@dataclass
class ExperimentReport:
    config: dict
    rows: list[dict]
    summary: list[dict]

    def cell(self, algorithm: str, trace: str, knowledge: str, noise_seed=None) -> dict:
        for r in self.rows:
            if (r["algorithm"], r["trace"], r["knowledge"]) == (algorithm, trace, knowledge) \
                    and (noise_seed is None or r["noise_seed"] == noise_seed):
                return r
        raise KeyError((algorithm, trace, knowledge, noise_seed))

    def mean_qoe(self, algorithm: str, trace: str, knowledge: str) -> float:
        for s in self.summary:
            if (s["algorithm"], s["trace"], s["knowledge"]) == (algorithm, trace, knowledge):
                return s["mean_total_qoe"]
        raise KeyError((algorithm, trace, knowledge))

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": self.rows, "summary": self.summary}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Flat table: one line per (trace, knowledge, algorithm) with mean QoE."""
        buf = io.StringIO()
        fields = ["trace", "knowledge", "algorithm", "runs", "mean_total_qoe", "mean_quality",
                  "mean_stall_s", "mean_switch"]
        if any("mean_runtime_s" in s for s in self.summary):
            fields.append("mean_runtime_s")
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for s in self.summary:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in s.items()})
        return buf.getvalue()


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _load_pool(config: ExperimentConfig) -> list[BandwidthTrace]:
    pool = []
    for spec in config.traces:
        path = config.resolve_path(spec.path)
        if not path.exists():
            raise FileNotFoundError(f"trace file not found: {path}")
        pool.append(parse_trace(path, TraceFormat.from_dict(spec.format), name=spec.name))
    return pool


def _instance(config: ExperimentConfig, fovs, bandwidth, stall_mode: str) -> ProblemInstance:
    grid = TileGrid(config.grid_columns, config.grid_rows)
    users = tuple(User(GopTimeline.uniform(b, config.gop_duration_s), fov=f)
                  for f, b in zip(fovs, bandwidth))
    return ProblemInstance(
        cameras=config.cameras, ul_ladder=QualityLadder(config.ul_ladder_mbps),
        ul_bandwidth=config.ul_bandwidth_mbps, grid=grid,
        dl_ladder=QualityLadder(config.dl_ladder_mbps), users=users,
        qoe=QoEParams(config.alpha, config.beta, config.q_scale_mbps, stall_mode),
        coupling=CouplingMode(config.coupling), dl_budget=DownlinkBudget(config.dl_budget))


def _plannable(config: ExperimentConfig, fovs, bandwidth) -> list[np.ndarray]:
    """Raise each budget to what the lowest level on every viewed tile needs.

    Without this a deep fade makes the hard downlink budget unsatisfiable; the
    shortfall still shows up as a stall when scored against true bandwidth.
    """
    grid = TileGrid(config.grid_columns, config.grid_rows)
    floor = min(config.dl_ladder_mbps)
    out = []
    for f, b in zip(fovs, bandwidth):
        need = len(fov_tiles(f, grid)) * floor
        b = np.asarray(b, dtype=float)
        if config.dl_budget == DownlinkBudget.PER_GOP.value:
            b = np.maximum(b, need)
        elif b.sum() < need * b.size:
            b = b * (need * b.size / b.sum()) if b.sum() > 0 else np.full(b.size, need)
        out.append(b)
    return out


def _cells(config: ExperimentConfig, pool):
    """(cell name, trace pool for the cell, cell index)."""
    if config.assignment == "round_robin":
        return [("pool", pool, 0)]
    return [(spec.name, [trace], i) for i, (spec, trace) in enumerate(zip(config.traces, pool))]


def run_experiment(config: ExperimentConfig, on_row=None, workers: int = 1) -> ExperimentReport:
    """Run every (trace, knowledge, noise seed) cell.

    ``workers > 1`` solves cells in separate processes; rows are still emitted
    in the serial order, so the report does not depend on scheduling.
    """
    pool = _load_pool(config) if config.users else []
    horizon = config.gops * config.gop_duration_s
    grid = TileGrid(config.grid_columns, config.grid_rows)
    cells = _cells(config, pool) if pool else [(s.name, [], i) for i, s in enumerate(config.traces)]
    tasks = []          # (trace name, knowledge, noise seed, planning instance, evaluation instance)
    for name, cell_pool, index in cells:
        rng = np.random.default_rng([config.seed, index])
        if config.users:
            pop = UserPopulation.sample(config.users, cell_pool, horizon, rng, grid,
                                        (config.fov_width_deg, config.fov_height_deg),
                                        config.user_scale, seed=config.seed)
            true_bw = pop.bandwidth(cell_pool, config.gop_duration_s, config.gops)
            fovs = pop.fovs
        else:
            true_bw, fovs = [], []
        evaluation = _instance(config, fovs, true_bw, config.eval_stall_mode)
        runs = []
        if "perfect" in config.knowledge:
            runs.append(("perfect", None, true_bw))
        if "predicted" in config.knowledge:
            for s in range(config.noise_seeds):
                model = PredictionModel(config.noise_scale, config.noise_floor_mbps, config.noise_mode, s)
                noise_rng = np.random.default_rng([config.seed, index, 1_000 + s])
                runs.append(("predicted", s, [predict_trace(b, model, noise_rng) for b in true_bw]))
        for knowledge, noise_seed, bw in runs:
            planning = _instance(config, fovs, _plannable(config, fovs, bw), "per_tile")
            tasks.append((name, knowledge, noise_seed, planning, evaluation))

    jobs = [(config, t[3]) for t in tasks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = ex.map(_run_job, jobs)
            outcomes = list(results)
    else:
        outcomes = map(_run_job, jobs)
    rows = []
    for (name, knowledge, noise_seed, _, evaluation), outcome in zip(tasks, outcomes):
        for algorithm in config.algorithms:
            row = _row(config, name, knowledge, noise_seed, algorithm, outcome.get(algorithm),
                       evaluation)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return ExperimentReport(config.to_dict(), rows, _summarize(rows, config))


def _run_job(job):
    config, planning = job
    if not planning.users:
        return {}
    smoothing = SmoothingParams(epsilon=config.smoothing_epsilon)
    return run_algorithms(planning, config.algorithms, config.bnb_config(config.seed), smoothing,
                          warm_start=config.warm_start)


def _row(config, trace, knowledge, noise_seed, algorithm, outcome, evaluation) -> dict:
    row = {"trace": trace, "knowledge": knowledge, "noise_seed": noise_seed, "algorithm": algorithm}
    if outcome is None:      # no viewers
        row.update(total_qoe=0.0, quality=0.0, stall_s=0.0, switch=0.0, planned_qoe=0.0,
                   feasible_on_true=True, status="optimal", nodes=0, flags=[])
    elif outcome.selection is None:
        row.update(total_qoe=None, quality=None, stall_s=None, switch=None, planned_qoe=None,
                   feasible_on_true=False, status=outcome.status, nodes=outcome.nodes,
                   flags=outcome.flags)
    else:
        b = qoe_breakdown(evaluation, outcome.selection)
        row.update(total_qoe=b["total"], quality=b["quality"], stall_s=b["stall_s"],
                   switch=b["switch"], planned_qoe=outcome.objective,
                   feasible_on_true=check_feasible(evaluation, outcome.selection).feasible,
                   status=outcome.status, nodes=outcome.nodes, flags=list(outcome.flags))
    if config.record_timing:
        row["runtime_s"] = outcome.runtime_s if outcome is not None else 0.0
    return row


def _summarize(rows: list[dict], config: ExperimentConfig) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["trace"], r["knowledge"], r["algorithm"]), []).append(r)
    out = []
    for (trace, knowledge, algorithm), members in groups.items():
        scored = [m for m in members if m["total_qoe"] is not None]
        entry = {"trace": trace, "knowledge": knowledge, "algorithm": algorithm,
                 "runs": len(members), "scored_runs": len(scored)}
        for key in ("total_qoe", "quality", "stall_s", "switch"):
            entry[f"mean_{key}"] = float(np.mean([m[key] for m in scored])) if scored else None
        if config.record_timing:
            entry["mean_runtime_s"] = float(np.mean([m["runtime_s"] for m in members]))
        out.append(entry)
    return out
