"""Problem instances, tile-to-camera mapping, coupling caps and feasibility."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import (FovWindow, GopTimeline, QoEParams, QualityLadder, Selection,
                    TileGrid, fov_tiles)

FEAS_TOL = 1e-9


class CouplingMode(str, enum.Enum):
    """How a tile's downlink rate is tied to its camera's uplink rate.

    PER_GOP_BITRATE caps each GOP's tile bitrate at uplink / (T / C).
    LITERAL_AGGREGATE caps the tile's bitrate summed over all GOPs at uplink / T.
    LEVEL_INDEX caps the downlink level index at the uploaded level index.
    """

    PER_GOP_BITRATE = "per_gop_bitrate"
    LITERAL_AGGREGATE = "literal_aggregate"
    LEVEL_INDEX = "level_index"


class DownlinkBudget(str, enum.Enum):
    AGGREGATE = "aggregate"   # sum over the horizon on both sides
    PER_GOP = "per_gop"       # every GOP on its own


@dataclass(frozen=True, eq=False)
class User:
    timeline: GopTimeline
    fov: FovWindow | None = None
    tiles: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.tiles is None and self.fov is None:
            raise ValueError("a user needs a FOV window or an explicit tile set")
        if self.tiles is not None:
            object.__setattr__(self, "tiles", tuple(sorted(set(int(t) for t in self.tiles))))


def tile_camera_map(grid: TileGrid, cameras: int) -> tuple[int, ...]:
    """Camera index per tile: angularly nearest camera sector center.

    Cameras sit at azimuths 360*c/C; ties go to the lower camera index.
    """
    if cameras < 1:
        raise ValueError("need at least one camera")
    centers = 360.0 * np.arange(cameras) / cameras
    per_column = []
    for col in range(grid.columns):
        az = grid.column_center_deg(col)
        d = np.abs(az - centers) % 360.0
        d = np.minimum(d, 360.0 - d)
        # argmin returns the first minimum -> lower index on ties
        per_column.append(int(np.argmin(np.round(d, 9))))
    return tuple(per_column[t % grid.columns] for t in range(grid.count))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    cameras: int
    ul_ladder: QualityLadder
    ul_bandwidth: float
    grid: TileGrid
    dl_ladder: QualityLadder
    users: tuple[User, ...]
    qoe: QoEParams = field(default_factory=QoEParams)
    coupling: CouplingMode = CouplingMode.PER_GOP_BITRATE
    dl_budget: DownlinkBudget = DownlinkBudget.AGGREGATE
    tile_camera: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.cameras < 1:
            raise ValueError("need at least one camera")
        if self.ul_bandwidth <= 0:
            raise ValueError("uplink bandwidth must be positive")
        object.__setattr__(self, "coupling", CouplingMode(self.coupling))
        object.__setattr__(self, "dl_budget", DownlinkBudget(self.dl_budget))
        mapping = self.tile_camera
        if mapping is None:
            mapping = tile_camera_map(self.grid, self.cameras)
        mapping = tuple(int(c) for c in mapping)
        if len(mapping) != self.grid.count or any(not 0 <= c < self.cameras for c in mapping):
            raise ValueError("tile_camera must give a valid camera for every tile")
        object.__setattr__(self, "tile_camera", mapping)
        users = []
        for u in self.users:
            if u.tiles is None:
                u = replace(u, tiles=fov_tiles(u.fov, self.grid))
            if any(not 0 <= t < self.grid.count for t in u.tiles):
                raise ValueError("user tile outside the grid")
            users.append(u)
        object.__setattr__(self, "users", tuple(users))
        if users:
            gops = {u.timeline.gops for u in users}
            if len(gops) != 1:
                raise ValueError("all users must share the same number of GOPs")

    @property
    def gops(self) -> int:
        return self.users[0].timeline.gops if self.users else 0

    @property
    def tau(self) -> float:
        """Tiles per camera, T / C, as a real number."""
        return self.grid.count / self.cameras

    def with_users(self, users: Sequence[User]) -> "ProblemInstance":
        return replace(self, users=tuple(users))

    def with_bandwidth(self, ul_factor: float = 1.0, dl_factor: float = 1.0) -> "ProblemInstance":
        users = [replace(u, timeline=GopTimeline(u.timeline.durations,
                                                 u.timeline.dl_bandwidth * dl_factor))
                 for u in self.users]
        return replace(self, ul_bandwidth=self.ul_bandwidth * ul_factor, users=tuple(users))

    def to_dict(self) -> dict:
        users = []
        for u in self.users:
            entry = {"tiles": list(u.tiles),
                     "gop_durations_s": u.timeline.durations.tolist(),
                     "dl_bandwidth_mbps": u.timeline.dl_bandwidth.tolist()}
            if u.fov is not None:
                entry["fov"] = {"yaw_deg": u.fov.yaw_center, "pitch_deg": u.fov.pitch_center,
                                "width_deg": u.fov.width_deg, "height_deg": u.fov.height_deg}
            users.append(entry)
        return {
            "cameras": self.cameras,
            "ul_ladder_mbps": self.ul_ladder.bitrates.tolist(),
            "ul_bandwidth_mbps": self.ul_bandwidth,
            "grid": {"columns": self.grid.columns, "rows": self.grid.rows},
            "dl_ladder_mbps": self.dl_ladder.bitrates.tolist(),
            "qoe": {"alpha": self.qoe.alpha, "beta": self.qoe.beta,
                    "q_scale_mbps": self.qoe.q_scale, "stall_mode": self.qoe.stall_mode},
            "coupling": self.coupling.value,
            "dl_budget": self.dl_budget.value,
            "tile_camera": list(self.tile_camera),
            "users": users,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemInstance":
        """Build an instance from a config mapping; raises ConfigError with a field path."""
        return _instance_from_dict(data)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _instance_from_dict(data: dict) -> ProblemInstance:
    def get(key, default=None, required=False):
        if key not in data:
            if required:
                raise ConfigError(key, "missing required field")
            return default
        return data[key]

    def wrap(path, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(path, str(exc)) from exc

    grid_cfg = get("grid", {})
    grid = wrap("grid", TileGrid, int(grid_cfg.get("columns", 4)), int(grid_cfg.get("rows", 4)))
    qoe_cfg = get("qoe", {})
    qoe = wrap("qoe", QoEParams, float(qoe_cfg.get("alpha", 1.0)), float(qoe_cfg.get("beta", 1.0)),
               float(qoe_cfg.get("q_scale_mbps", 1.0)), qoe_cfg.get("stall_mode", "per_tile"))
    users = []
    for i, u in enumerate(get("users", [])):
        path = f"users[{i}]"
        if "dl_bandwidth_mbps" not in u:
            raise ConfigError(f"{path}.dl_bandwidth_mbps", "missing required field")
        bw = u["dl_bandwidth_mbps"]
        durations = u.get("gop_durations_s", [1.0] * len(bw))
        timeline = wrap(path, GopTimeline, durations, bw)
        fov = None
        if "fov" in u:
            f = u["fov"]
            fov = wrap(f"{path}.fov", FovWindow, float(f["yaw_deg"]), float(f["pitch_deg"]),
                       float(f.get("width_deg", 120.0)), float(f.get("height_deg", 90.0)))
        users.append(wrap(path, User, timeline, fov, u.get("tiles")))
    return wrap("instance", ProblemInstance,
                cameras=int(get("cameras", 6)),
                ul_ladder=wrap("ul_ladder_mbps", QualityLadder, get("ul_ladder_mbps", [1.5, 2.0, 2.5, 3.0])),
                ul_bandwidth=float(get("ul_bandwidth_mbps", required=True)),
                grid=grid,
                dl_ladder=wrap("dl_ladder_mbps", QualityLadder, get("dl_ladder_mbps", [0.2, 0.6, 1.0, 1.4])),
                users=tuple(users),
                qoe=qoe,
                coupling=wrap("coupling", CouplingMode, get("coupling", "per_gop_bitrate")),
                dl_budget=wrap("dl_budget", DownlinkBudget, get("dl_budget", "aggregate")),
                tile_camera=get("tile_camera"))


def coupling_cap(instance: ProblemInstance, ul_levels: Sequence[int], tile: int, gop: int | None = None):
    """Largest downlink value permitted for a tile given the uplink choice.

    Returns a bitrate for the bitrate modes (per GOP, or summed over all GOPs
    for LITERAL_AGGREGATE) and a level index for LEVEL_INDEX.
    """
    if not 0 <= tile < instance.grid.count:
        raise IndexError(f"tile {tile} outside grid of {instance.grid.count}")
    level = int(ul_levels[instance.tile_camera[tile]])
    if instance.coupling is CouplingMode.LEVEL_INDEX:
        return level
    up = float(instance.ul_ladder.bitrates[level])
    if instance.coupling is CouplingMode.LITERAL_AGGREGATE:
        return up / instance.grid.count
    return up / instance.tau


def max_admissible_level(instance: ProblemInstance, ul_levels: Sequence[int], tile: int) -> int | None:
    """Highest downlink level a single GOP may use under the coupling cap."""
    cap = coupling_cap(instance, ul_levels, tile)
    if instance.coupling is CouplingMode.LEVEL_INDEX:
        return min(cap, len(instance.dl_ladder) - 1)
    if instance.coupling is CouplingMode.LITERAL_AGGREGATE:
        # the other GOPs take at least the lowest rate
        cap = cap - (instance.gops - 1) * instance.dl_ladder.bitrates[0]
    return instance.dl_ladder.highest_at_most(cap)


@dataclass
class ConstraintCheck:
    name: str
    passed: bool
    min_slack: float
    violations: list[dict] = field(default_factory=list)


@dataclass
class FeasibilityReport:
    checks: dict[str, ConstraintCheck]

    @property
    def feasible(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"feasible": self.feasible,
                "constraints": {k: {"passed": c.passed, "min_slack": c.min_slack,
                                    "violations": c.violations}
                                for k, c in self.checks.items()}}


def _check(name: str, slacks: list[tuple[dict, float]]) -> ConstraintCheck:
    if not slacks:
        return ConstraintCheck(name, True, float("inf"))
    bad = [dict(where, slack=s) for where, s in slacks if s < -FEAS_TOL]
    return ConstraintCheck(name, not bad, min(s for _, s in slacks), bad)


def check_feasible(instance: ProblemInstance, selection: Selection) -> FeasibilityReport:
    """Slack of every constraint family; never raises for well-formed selections."""
    ul = np.asarray(selection.uplink, dtype=np.int64)
    if ul.size != instance.cameras:
        raise ValueError(f"selection has {ul.size} uplink levels for {instance.cameras} cameras")
    checks = {
        "uplink_one_level": ConstraintCheck("uplink_one_level", True, 0.0),
        "downlink_one_level": ConstraintCheck("downlink_one_level", True, 0.0),
    }
    ul_rate = instance.ul_ladder.bitrates[ul]
    checks["uplink_budget"] = _check("uplink_budget", [({}, instance.ul_bandwidth - float(ul_rate.sum()))])

    budget, couple = [], []
    ladder = instance.dl_ladder.bitrates
    for n, user in enumerate(instance.users):
        if not user.tiles:
            continue
        levels = selection.downlink[n]
        rates = ladder[levels]
        bw = user.timeline.dl_bandwidth
        if instance.dl_budget is DownlinkBudget.PER_GOP:
            for k in range(user.timeline.gops):
                budget.append(({"user": n, "gop": k}, float(bw[k] - rates[:, k].sum())))
        else:
            budget.append(({"user": n}, float(bw.sum() - rates.sum())))
        for i, t in enumerate(user.tiles):
            cap = coupling_cap(instance, ul, t)
            if instance.coupling is CouplingMode.LEVEL_INDEX:
                for k in range(levels.shape[1]):
                    couple.append(({"user": n, "tile": t, "gop": k}, float(cap - levels[i, k])))
            elif instance.coupling is CouplingMode.LITERAL_AGGREGATE:
                couple.append(({"user": n, "tile": t}, float(cap - rates[i].sum())))
            else:
                for k in range(levels.shape[1]):
                    couple.append(({"user": n, "tile": t, "gop": k}, float(cap - rates[i, k])))
    checks["downlink_budget"] = _check("downlink_budget", budget)
    checks["coupling"] = _check("coupling", couple)
    return FeasibilityReport(checks)
