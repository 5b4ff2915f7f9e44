"""Comparison schemes and a common entry point for all three algorithms.

* ``optimal``: joint uplink/downlink branch and bound.
* ``equal-ul-adaptive-dl``: uplink split evenly across cameras, downlink
  chosen by the same search with the uplink pinned.
* ``equal-ul-equal-dl``: uplink split evenly, each viewed tile gets an equal
  share of the GOP's downlink bandwidth.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .bnb import BnbConfig, BnbResult, Status, decomposed_downlink
from .bnb import solve as bnb_solve
from .model import Selection, qoe_total
from .problem import FEAS_TOL, CouplingMode, ProblemInstance, check_feasible, coupling_cap
from .relax import SmoothingParams


class BaselineKind(str, enum.Enum):
    EQUAL_UL_ADAPTIVE_DL = "equal-ul-adaptive-dl"
    EQUAL_UL_EQUAL_DL = "equal-ul-equal-dl"


ALGORITHMS = ("optimal", BaselineKind.EQUAL_UL_ADAPTIVE_DL.value, BaselineKind.EQUAL_UL_EQUAL_DL.value)

UPLINK_OVERCOMMIT = "uplink_overcommit"
DOWNLINK_UNDERFUNDED = "downlink_underfunded"


def equal_uplink(instance: ProblemInstance) -> tuple[tuple[int, ...], bool]:
    """Every camera at the highest level within B_UL / C; flag when none fits."""
    share = instance.ul_bandwidth / instance.cameras
    level = instance.ul_ladder.highest_at_most(share + FEAS_TOL)
    if level is None:
        return (0,) * instance.cameras, True
    return (level,) * instance.cameras, False


def adaptive_downlink(instance: ProblemInstance, ul_levels, config: BnbConfig | None = None,
                      smoothing: SmoothingParams | None = None,
                      incumbent: Selection | None = None) -> BnbResult:
    return decomposed_downlink(instance, ul_levels, config or BnbConfig(), smoothing,
                               incumbent=incumbent)


def equal_downlink(instance: ProblemInstance, ul_levels) -> tuple[Selection, bool]:
    """Equal per-tile share of each GOP's bandwidth, capped by the coupling.

    Returns the selection and whether some tile fell back to the lowest level
    because nothing fitted.
    """
    ul_levels = tuple(int(v) for v in ul_levels)
    ladder = instance.dl_ladder
    underfunded = False
    downlink = []
    for user in instance.users:
        K = user.timeline.gops
        levels = np.zeros((len(user.tiles), K), dtype=np.int64)
        if user.tiles:
            share = user.timeline.dl_bandwidth / len(user.tiles)
            for i, t in enumerate(user.tiles):
                cap = coupling_cap(instance, ul_levels, t)
                for k in range(K):
                    if instance.coupling is CouplingMode.LEVEL_INDEX:
                        best = ladder.highest_at_most(share[k] + FEAS_TOL)
                        best = None if best is None else min(best, cap)
                    else:
                        limit = cap / K if instance.coupling is CouplingMode.LITERAL_AGGREGATE else cap
                        best = ladder.highest_at_most(min(share[k], limit) + FEAS_TOL)
                    if best is None:
                        underfunded = True
                        best = 0
                    levels[i, k] = best
        downlink.append(levels)
    return Selection(ul_levels, tuple(downlink)), underfunded


@dataclass
class AlgorithmOutcome:
    algorithm: str
    selection: Selection | None
    objective: float
    status: str
    nodes: int = 0
    gap: float = 0.0
    flags: list[str] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.selection is not None


def _from_bnb(name: str, res: BnbResult, flags: list[str], runtime: float) -> AlgorithmOutcome:
    return AlgorithmOutcome(name, res.selection, res.objective, res.status.value,
                            res.nodes_explored, res.gap, flags, runtime)


def run_algorithms(instance: ProblemInstance, algorithms=ALGORITHMS, config: BnbConfig | None = None,
                   smoothing: SmoothingParams | None = None,
                   warm_start: bool = True) -> dict[str, AlgorithmOutcome]:
    """Run the requested algorithms; with ``warm_start`` each stronger one is
    seeded with the weaker one's feasible answer so the ordering is structural.
    """
    config = config or BnbConfig()
    wanted = set(algorithms)
    unknown = wanted - set(ALGORITHMS)
    if unknown:
        raise ValueError(f"unknown algorithm(s): {sorted(unknown)}")
    need_equal = BaselineKind.EQUAL_UL_EQUAL_DL.value in wanted or warm_start
    need_adaptive = BaselineKind.EQUAL_UL_ADAPTIVE_DL.value in wanted or (warm_start and "optimal" in wanted)
    out: dict[str, AlgorithmOutcome] = {}
    ul, overcommit = equal_uplink(instance)
    base_flags = [UPLINK_OVERCOMMIT] if overcommit else []

    seed_equal = None
    if need_equal:
        t0 = time.perf_counter()
        sel, under = equal_downlink(instance, ul)
        flags = base_flags + ([DOWNLINK_UNDERFUNDED] if under else [])
        feasible = check_feasible(instance, sel).feasible
        status = Status.OPTIMAL.value if feasible else "infeasible"
        out[BaselineKind.EQUAL_UL_EQUAL_DL.value] = AlgorithmOutcome(
            BaselineKind.EQUAL_UL_EQUAL_DL.value, sel, qoe_total(instance, sel), status,
            flags=flags, runtime_s=time.perf_counter() - t0)
        seed_equal = sel if feasible else None

    seed_adaptive = None
    if need_adaptive:
        t0 = time.perf_counter()
        res = adaptive_downlink(instance, ul, config, smoothing,
                                incumbent=seed_equal if warm_start else None)
        out[BaselineKind.EQUAL_UL_ADAPTIVE_DL.value] = _from_bnb(
            BaselineKind.EQUAL_UL_ADAPTIVE_DL.value, res, list(base_flags), time.perf_counter() - t0)
        if res.selection is not None and not overcommit:
            seed_adaptive = res.selection
    if "optimal" in wanted:
        t0 = time.perf_counter()
        seed = seed_adaptive if warm_start else None
        res = bnb_solve(instance, config, smoothing, incumbent=seed)
        out["optimal"] = _from_bnb("optimal", res, [], time.perf_counter() - t0)
    return {name: out[name] for name in ALGORITHMS if name in wanted}
