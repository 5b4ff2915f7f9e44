"""Domain types and exact QoE evaluation on integral selections.

Bitrates are in Mbps, durations in seconds, angles in degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class IncompleteSelectionError(ValueError):
    """A downlink assignment is missing for an in-FOV tile."""


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QualityLadder:
    bitrates: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.bitrates)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("a ladder needs at least one bitrate")
        if np.any(arr <= 0):
            raise ValueError("ladder bitrates must be positive")
        if np.any(np.diff(arr) <= 0):
            raise ValueError("ladder bitrates must be strictly increasing")
        object.__setattr__(self, "bitrates", arr)

    def __len__(self) -> int:
        return self.bitrates.size

    def __getitem__(self, level):
        return self.bitrates[level]

    def highest_at_most(self, cap: float) -> int | None:
        """Index of the highest level with bitrate <= cap, or None."""
        idx = int(np.searchsorted(self.bitrates, cap + 1e-12, side="right")) - 1
        return idx if idx >= 0 else None


@dataclass(frozen=True)
class TileGrid:
    columns: int = 4
    rows: int = 4

    def __post_init__(self):
        if self.columns < 1 or self.rows < 1:
            raise ValueError("grid needs at least one row and one column")

    @property
    def tile_width_deg(self) -> float:
        return 360.0 / self.columns

    @property
    def tile_height_deg(self) -> float:
        return 180.0 / self.rows

    @property
    def count(self) -> int:
        return self.columns * self.rows

    def tile_index(self, row: int, column: int) -> int:
        return row * self.columns + column

    def tile_position(self, tile: int) -> tuple[int, int]:
        """(row, column) of a tile; row 0 is the top band (pitch +90)."""
        if not 0 <= tile < self.count:
            raise IndexError(f"tile {tile} outside grid of {self.count}")
        return divmod(tile, self.columns)

    def column_center_deg(self, column: int) -> float:
        return (column + 0.5) * self.tile_width_deg


@dataclass(frozen=True, eq=False)
class GopTimeline:
    durations: np.ndarray
    dl_bandwidth: np.ndarray

    def __post_init__(self):
        durations = _frozen(self.durations)
        bandwidth = _frozen(self.dl_bandwidth)
        if durations.ndim != 1 or durations.size < 1:
            raise ValueError("timeline needs at least one GOP")
        if durations.shape != bandwidth.shape:
            raise ValueError("durations and bandwidths must have the same length")
        if np.any(durations <= 0):
            raise ValueError("GOP durations must be positive")
        if np.any(bandwidth < 0):
            raise ValueError("GOP bandwidths must be non-negative")
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "dl_bandwidth", bandwidth)

    @classmethod
    def uniform(cls, bandwidth: Sequence[float], gop_duration: float = 1.0) -> "GopTimeline":
        return cls(np.full(len(bandwidth), float(gop_duration)), bandwidth)

    @property
    def gops(self) -> int:
        return self.durations.size


@dataclass(frozen=True)
class FovWindow:
    yaw_center: float
    pitch_center: float
    width_deg: float = 120.0
    height_deg: float = 90.0

    def __post_init__(self):
        if not 0 < self.width_deg <= 360:
            raise ValueError("FOV width must be in (0, 360]")
        if not 0 < self.height_deg <= 180:
            raise ValueError("FOV height must be in (0, 180]")
        if not -90 <= self.pitch_center <= 90:
            raise ValueError("pitch center must be in [-90, 90]")
        object.__setattr__(self, "yaw_center", float(self.yaw_center) % 360.0)


@dataclass(frozen=True)
class QoEParams:
    """Weights of the stall and switch penalties and the quality map scale.

    ``stall_mode`` selects how stalls are detected: ``"per_tile"`` compares a
    single tile's bitrate with the GOP bandwidth, ``"aggregate"`` compares the
    user's summed in-FOV bitrate with it (one stall per GOP).
    """

    alpha: float = 1.0
    beta: float = 1.0
    q_scale: float = 1.0
    stall_mode: str = "per_tile"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.q_scale <= 0:
            raise ValueError("q_scale must be positive")
        if self.stall_mode not in ("per_tile", "aggregate"):
            raise ValueError(f"unknown stall mode {self.stall_mode!r}")


@dataclass(frozen=True, eq=False)
class Selection:
    """One uplink level per camera and one downlink level per (user, FOV tile, GOP).

    ``downlink[n]`` is an int array of shape ``(len(tiles_n), K)`` whose rows
    follow the order of ``ProblemInstance.users[n].tiles``.
    """

    uplink: tuple[int, ...]
    downlink: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "uplink", tuple(int(v) for v in self.uplink))
        dl = []
        for levels in self.downlink:
            arr = np.array(levels, dtype=np.int64)
            if arr.ndim == 1 and arr.size == 0:
                arr = arr.reshape(0, 0)
            if arr.ndim != 2:
                raise ValueError("downlink levels must be (tiles, gops) arrays")
            arr.setflags(write=False)
            dl.append(arr)
        object.__setattr__(self, "downlink", tuple(dl))

    def key(self) -> tuple:
        return (self.uplink, tuple(tuple(map(tuple, d.tolist())) for d in self.downlink))

    def __eq__(self, other):
        if not isinstance(other, Selection):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def to_dict(self) -> dict:
        return {"uplink": list(self.uplink), "downlink": [d.tolist() for d in self.downlink]}

    @classmethod
    def from_dict(cls, data: dict) -> "Selection":
        return cls(tuple(data["uplink"]), tuple(np.array(d, dtype=np.int64) for d in data["downlink"]))


def q_map(bitrate, params: QoEParams | None = None):
    """Perceived quality ln(1 + bitrate / q_scale); accepts scalars or arrays."""
    scale = params.q_scale if params is not None else 1.0
    b = np.asarray(bitrate, dtype=float)
    if np.any(b < 0):
        raise ValueError("bitrate must be non-negative")
    out = np.log1p(b / scale)
    return float(out) if out.ndim == 0 else out


def stall_term(selected_bitrate: float, bandwidth: float, duration: float) -> float:
    if duration <= 0:
        raise ValueError("GOP duration must be positive")
    return float(duration) if selected_bitrate > bandwidth else 0.0


def switch_term(qualities: Sequence[float]) -> float:
    q = np.asarray(qualities, dtype=float)
    if q.size == 0:
        raise ValueError("switch term needs at least one GOP")
    return float(np.sum(np.diff(q) ** 2))


def fov_tiles(fov: FovWindow, grid: TileGrid) -> tuple[int, ...]:
    """Tiles whose angular rectangle overlaps the FOV with positive area.

    Azimuth wraps at 360 degrees; contact along an edge does not count.
    """
    if fov.width_deg >= 360.0:
        columns = range(grid.columns)
    else:
        lo = fov.yaw_center - fov.width_deg / 2.0
        hi = fov.yaw_center + fov.width_deg / 2.0
        tw = grid.tile_width_deg
        columns = []
        for col in range(grid.columns):
            overlap = 0.0
            for shift in (-360.0, 0.0, 360.0):
                a, b = col * tw + shift, (col + 1) * tw + shift
                overlap += max(0.0, min(hi, b) - max(lo, a))
            if overlap > 1e-9:
                columns.append(col)
    top = min(90.0, fov.pitch_center + fov.height_deg / 2.0)
    bottom = max(-90.0, fov.pitch_center - fov.height_deg / 2.0)
    th = grid.tile_height_deg
    rows = []
    for row in range(grid.rows):
        row_top = 90.0 - row * th
        row_bottom = row_top - th
        if min(top, row_top) - max(bottom, row_bottom) > 1e-9:
            rows.append(row)
    return tuple(sorted(grid.tile_index(r, c) for r in rows for c in columns))


def _user_rates(instance, selection: Selection, user: int) -> np.ndarray:
    u = instance.users[user]
    if user >= len(selection.downlink):
        if not u.tiles:
            return np.zeros((0, u.timeline.gops))
        raise IncompleteSelectionError(f"no downlink assignment for user {user}")
    levels = selection.downlink[user]
    expected = (len(u.tiles), u.timeline.gops)
    if levels.shape != expected:
        if len(u.tiles) == 0:
            return np.zeros((0, u.timeline.gops))
        raise IncompleteSelectionError(
            f"user {user}: downlink shape {levels.shape}, expected {expected}")
    ladder = instance.dl_ladder.bitrates
    if levels.size and (levels.min() < 0 or levels.max() >= ladder.size):
        raise IndexError(f"user {user}: downlink level outside the ladder")
    return ladder[levels]


def qoe_terms(instance, selection: Selection, user: int) -> tuple[float, float, float]:
    """(quality, stall seconds, switch) of one user; QoE = q - alpha*s - beta*w."""
    rates = _user_rates(instance, selection, user)
    timeline = instance.users[user].timeline
    if rates.shape[0] == 0:
        return 0.0, 0.0, 0.0
    q = q_map(rates, instance.qoe)
    quality = float(q.sum())
    if instance.qoe.stall_mode == "aggregate":
        stalled = rates.sum(axis=0) > timeline.dl_bandwidth
        stall = float(np.sum(timeline.durations[stalled]))
    else:
        stalled = rates > timeline.dl_bandwidth[None, :]
        stall = float(np.sum(stalled * timeline.durations[None, :]))
    switch = float(np.sum(np.diff(q, axis=1) ** 2))
    return quality, stall, switch


def qoe_user(instance, selection: Selection, user: int) -> float:
    quality, stall, switch = qoe_terms(instance, selection, user)
    return quality - instance.qoe.alpha * stall - instance.qoe.beta * switch


def qoe_total(instance, selection: Selection) -> float:
    return float(sum(qoe_user(instance, selection, n) for n in range(len(instance.users))))


def qoe_breakdown(instance, selection: Selection) -> dict[str, float]:
    """Summed quality, stall seconds and switch over all users, plus the total."""
    quality = stall = switch = 0.0
    for n in range(len(instance.users)):
        a, b, c = qoe_terms(instance, selection, n)
        quality += a
        stall += b
        switch += c
    total = quality - instance.qoe.alpha * stall - instance.qoe.beta * switch
    return {"quality": quality, "stall_s": stall, "switch": switch, "total": total}
