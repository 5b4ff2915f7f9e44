"""Primal heuristics: turn a relaxed point into a feasible selection.

``floor_round`` picks, per block, the highest level whose rate does not
exceed the block's expected rate; every rate budget then holds because the
relaxed point met it.  ``repair`` restores anything still violated (coupling
after the uplink was rounded down) by lowering the most expensive choice, and
``improve`` climbs by single-level raises while QoE increases.
"""
from __future__ import annotations

import numpy as np

from .model import Selection
from .problem import FEAS_TOL, CouplingMode, DownlinkBudget, ProblemInstance, coupling_cap


def floor_round(relaxation, x: np.ndarray) -> Selection:
    r = relaxation
    inst = r.instance
    ul_rates = inst.ul_ladder.bitrates
    dl_rates = inst.dl_ladder.bitrates
    chi_ul = x[:r.n_ul].reshape(r.cameras, r.n_ul_levels)
    ul = tuple(_floor_levels(chi_ul @ ul_rates, ul_rates).tolist())
    downlink = []
    for n, tiles in enumerate(r.user_tiles):
        start = r.user_var_start[n]
        chunk = x[start:start + tiles * r.gops * r.n_dl_levels].reshape(tiles, r.gops, r.n_dl_levels)
        downlink.append(_floor_levels(chunk @ dl_rates, dl_rates))
    return Selection(ul, tuple(downlink))


def _floor_levels(expected: np.ndarray, ladder: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(ladder, expected + 1e-12, side="right") - 1
    return np.clip(idx, 0, ladder.size - 1).astype(np.int64)


def _tile_caps(inst: ProblemInstance, ul, tiles) -> tuple[np.ndarray, np.ndarray]:
    """Per tile: highest level allowed in a single GOP, and the summed-rate cap."""
    top = len(inst.dl_ladder) - 1
    levels = np.full(len(tiles), top, dtype=np.int64)
    sums = np.full(len(tiles), np.inf)
    for i, t in enumerate(tiles):
        cap = coupling_cap(inst, ul, t)
        if inst.coupling is CouplingMode.LEVEL_INDEX:
            levels[i] = min(cap, top)
        elif inst.coupling is CouplingMode.LITERAL_AGGREGATE:
            sums[i] = cap
        else:
            best = inst.dl_ladder.highest_at_most(cap + FEAS_TOL)
            levels[i] = -1 if best is None else best
    return levels, sums


def repair(inst: ProblemInstance, selection: Selection) -> Selection | None:
    """Lower levels until every constraint holds; None when even the floor fails."""
    ul_ladder = inst.ul_ladder.bitrates
    ul = np.array(selection.uplink, dtype=np.int64)
    while ul_ladder[ul].sum() > inst.ul_bandwidth + FEAS_TOL:
        c = int(np.argmax(ul))
        if ul[c] == 0:
            return None
        ul[c] -= 1
    ul_t = tuple(ul.tolist())
    ladder = inst.dl_ladder.bitrates
    downlink = []
    for n, user in enumerate(inst.users):
        levels = np.array(selection.downlink[n], dtype=np.int64)
        if not user.tiles:
            downlink.append(levels)
            continue
        cap_level, cap_sum = _tile_caps(inst, ul_t, user.tiles)
        if np.any(cap_level < 0):
            return None
        levels = np.minimum(levels, cap_level[:, None])
        for i in np.flatnonzero(np.isfinite(cap_sum)):
            while ladder[levels[i]].sum() > cap_sum[i] + FEAS_TOL:
                k = int(np.argmax(levels[i]))
                if levels[i, k] == 0:
                    return None
                levels[i, k] -= 1
        bw = user.timeline.dl_bandwidth
        if inst.dl_budget is DownlinkBudget.PER_GOP:
            for k in range(levels.shape[1]):
                while ladder[levels[:, k]].sum() > bw[k] + FEAS_TOL:
                    i = int(np.argmax(levels[:, k]))
                    if levels[i, k] == 0:
                        return None
                    levels[i, k] -= 1
        else:
            while ladder[levels].sum() > bw.sum() + FEAS_TOL:
                flat = int(np.argmax(levels))
                if levels.flat[flat] == 0:
                    return None
                levels.flat[flat] -= 1
        downlink.append(levels)
    return Selection(ul_t, tuple(downlink))


def improve(inst: ProblemInstance, selection: Selection, max_moves: int = 10_000) -> Selection:
    """Best-improvement ascent over single-level downlink raises (uplink kept)."""
    ladder = inst.dl_ladder.bitrates
    qual = np.log1p(ladder / inst.qoe.q_scale)
    top = ladder.size - 1
    alpha, beta = inst.qoe.alpha, inst.qoe.beta
    aggregate_stall = inst.qoe.stall_mode == "aggregate"
    downlink = []
    for n, user in enumerate(inst.users):
        levels = np.array(selection.downlink[n], dtype=np.int64)
        if not user.tiles or levels.size == 0:
            downlink.append(levels)
            continue
        cap_level, cap_sum = _tile_caps(inst, selection.uplink, user.tiles)
        bw = user.timeline.dl_bandwidth
        dur = user.timeline.durations
        for _ in range(max_moves):
            rates = ladder[levels]
            raised = np.minimum(levels + 1, top)
            movable = (levels < top) & (raised <= cap_level[:, None])
            new_rates = ladder[raised]
            extra = new_rates - rates
            col = rates.sum(axis=0)
            if inst.dl_budget is DownlinkBudget.PER_GOP:
                movable &= col[None, :] + extra <= bw[None, :] + FEAS_TOL
            else:
                movable &= rates.sum() + extra <= bw.sum() + FEAS_TOL
            movable &= rates.sum(axis=1)[:, None] + extra <= cap_sum[:, None] + FEAS_TOL
            if not movable.any():
                break
            q_old, q_new = qual[levels], qual[raised]
            gain = q_new - q_old
            if beta and levels.shape[1] > 1:
                # (a - c)^2 - (b - c)^2 against each temporal neighbour c
                d = np.zeros_like(gain)
                span = q_new + q_old
                d[:, 1:] += gain[:, 1:] * (span[:, 1:] - 2.0 * q_old[:, :-1])
                d[:, :-1] += gain[:, :-1] * (span[:, :-1] - 2.0 * q_old[:, 1:])
                gain = gain - beta * d
            if aggregate_stall:
                before = col > bw
                after = col[None, :] + extra > bw[None, :]
                gain -= alpha * dur[None, :] * (after.astype(float) - before[None, :])
            else:
                gain -= alpha * dur[None, :] * ((new_rates > bw[None, :]).astype(float)
                                               - (rates > bw[None, :]))
            gain = np.where(movable, gain, -np.inf)
            j = int(np.argmax(gain))
            if not gain.flat[j] > 1e-12:
                break
            levels.flat[j] += 1
        downlink.append(levels)
    return Selection(selection.uplink, tuple(downlink))


def heuristic_selection(relaxation, x: np.ndarray) -> Selection | None:
    sel = repair(relaxation.instance, floor_round(relaxation, x))
    if sel is None:
        return None
    return improve(relaxation.instance, sel)
