"""Exhaustive ground truth for small instances.

Enumerates every integral assignment in lexicographic order (uplink levels
outermost) and keeps the first maximizer among the feasible ones.  Shares
nothing with the relaxation or search code.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import Selection
from .problem import CouplingMode, DownlinkBudget, FEAS_TOL, ProblemInstance


class SearchSpaceTooLarge(ValueError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"search space has {count} assignments, budget is {budget}")
        self.count = count
        self.budget = budget


@dataclass
class OracleResult:
    selection: Selection | None
    objective: float
    evaluated: int

    @property
    def feasible(self) -> bool:
        return self.selection is not None


def count_space(instance: ProblemInstance) -> int:
    total = len(instance.ul_ladder) ** instance.cameras
    for u in instance.users:
        total *= len(instance.dl_ladder) ** (len(u.tiles) * u.timeline.gops)
    return total


def _user_table(instance: ProblemInstance, n: int, ul: tuple[int, ...]):
    """Objective and feasibility of every downlink assignment of user n."""
    user = instance.users[n]
    T, K = len(user.tiles), user.timeline.gops
    D = len(instance.dl_ladder)
    grid = np.array(list(itertools.product(range(D), repeat=T * K)), dtype=np.int64)
    grid = grid.reshape(-1, T, K)
    rates = instance.dl_ladder.bitrates[grid]                      # (S, T, K)
    quality = np.log(1.0 + rates / instance.qoe.q_scale)
    bw = user.timeline.dl_bandwidth
    dur = user.timeline.durations
    if instance.qoe.stall_mode == "aggregate":
        stall = ((rates.sum(axis=1) > bw) * dur).sum(axis=1)
    else:
        stall = ((rates > bw) * dur).sum(axis=(1, 2))
    switch = ((quality[:, :, 1:] - quality[:, :, :-1]) ** 2).sum(axis=(1, 2))
    value = quality.sum(axis=(1, 2)) - instance.qoe.alpha * stall - instance.qoe.beta * switch

    if instance.dl_budget is DownlinkBudget.PER_GOP:
        ok = np.all(rates.sum(axis=1) <= bw + FEAS_TOL, axis=1)
    else:
        ok = rates.sum(axis=(1, 2)) <= bw.sum() + FEAS_TOL
    up = instance.ul_ladder.bitrates
    for i, t in enumerate(user.tiles):
        level = ul[instance.tile_camera[t]]
        if instance.coupling is CouplingMode.LEVEL_INDEX:
            ok &= np.all(grid[:, i, :] <= level, axis=1)
        elif instance.coupling is CouplingMode.LITERAL_AGGREGATE:
            ok &= rates[:, i, :].sum(axis=1) <= up[level] / instance.grid.count + FEAS_TOL
        else:
            ok &= np.all(rates[:, i, :] <= up[level] * instance.cameras / instance.grid.count + FEAS_TOL,
                         axis=1)
    return grid, value, ok


def enumerate_optimal(instance: ProblemInstance, budget: int = 10**5) -> OracleResult:
    """Best feasible selection by brute force; ties keep the lexicographically first."""
    count = count_space(instance)
    if count > budget:
        raise SearchSpaceTooLarge(count, budget)
    users = [n for n, u in enumerate(instance.users) if u.tiles]
    best_value, best_sel, evaluated = float("-inf"), None, 0
    for ul in itertools.product(range(len(instance.ul_ladder)), repeat=instance.cameras):
        if instance.ul_ladder.bitrates[list(ul)].sum() > instance.ul_bandwidth + FEAS_TOL:
            evaluated += count // (len(instance.ul_ladder) ** instance.cameras)
            continue
        tables = [_user_table(instance, n, ul) for n in users]
        # joint enumeration over all users, lexicographic in user order
        sizes = [t[0].shape[0] for t in tables]
        if tables:
            idx = np.indices(sizes).reshape(len(sizes), -1).T
            value = np.zeros(idx.shape[0])
            ok = np.ones(idx.shape[0], dtype=bool)
            for col, (_, v, f) in enumerate(tables):
                value = value + v[idx[:, col]]
                ok &= f[idx[:, col]]
        else:
            idx = np.zeros((1, 0), dtype=np.int64)
            value = np.zeros(1)
            ok = np.ones(1, dtype=bool)
        evaluated += idx.shape[0]
        if not ok.any():
            continue
        masked = np.where(ok, value, -np.inf)
        j = int(np.argmax(masked))
        if masked[j] > best_value:
            best_value = float(masked[j])
            downlink = []
            col = 0
            for n, u in enumerate(instance.users):
                if u.tiles:
                    downlink.append(tables[col][0][idx[j, col]])
                    col += 1
                else:
                    downlink.append(np.zeros((0, u.timeline.gops), dtype=np.int64))
            best_sel = Selection(ul, tuple(downlink))
    return OracleResult(best_sel, best_value, evaluated)
