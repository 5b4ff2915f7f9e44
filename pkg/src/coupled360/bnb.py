"""Best-first branch and bound over the 0/1 selection variables.

Node bounds come from ``relax.Relaxation.solve`` (certified upper bounds on
the exact QoE of every integral completion).  Incumbents are always scored
with the exact, unsmoothed ``qoe_total``.

Once every camera's uplink level is pinned the downlink part separates per
user; with ``decompose`` enabled such a node is closed by solving one small
search per user (memoized on the levels of the cameras the user sees).
"""
from __future__ import annotations

import enum
import heapq
import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .model import Selection, qoe_total
from .problem import ProblemInstance, check_feasible
from .relax import (INTEGRAL_TOL, InfeasibleSubproblem, RelaxedPoint, Relaxation,
                    SmoothingParams, build_relaxation)
from .rounding import heuristic_selection

log = logging.getLogger(__name__)


class BranchRule(str, enum.Enum):
    MOST_FRACTIONAL = "most_fractional"
    EPSILON_THRESHOLD = "epsilon_threshold"


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    NODE_LIMIT = "node_limit"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class BnbConfig:
    """Search settings.

    ``epsilon_branch`` is the threshold of the epsilon rule; when None it
    is drawn once per run from ``seed``.  ``literal_initial_bound`` starts the
    incumbent value at 0 instead of -inf.  ``sub_node_limit`` caps each
    per-user search opened by the decomposition (None: ``node_limit``).
    """

    rule: BranchRule = BranchRule.MOST_FRACTIONAL
    epsilon_branch: float | None = None
    node_limit: int = 200_000
    sub_node_limit: int | None = None
    gap_tol: float = 1e-10
    seed: int = 0
    uplink_first: bool = True
    decompose: bool = True
    rounding: bool = True
    literal_initial_bound: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rule", BranchRule(self.rule))
        if self.epsilon_branch is not None and not 0 < self.epsilon_branch < 1:
            raise ValueError("epsilon_branch must lie in (0, 1)")
        if self.node_limit < 1:
            raise ValueError("node_limit must be at least 1")
        if self.sub_node_limit is not None and self.sub_node_limit < 1:
            raise ValueError("sub_node_limit must be at least 1")
        if self.gap_tol < 0:
            raise ValueError("gap_tol must be non-negative")

    def branch_epsilon(self) -> float:
        if self.epsilon_branch is not None:
            return self.epsilon_branch
        return float(np.random.default_rng(self.seed).uniform(0.05, 0.95))


@dataclass
class BnbNode:
    fixings: dict[int, int]
    bound: float
    depth: int
    point: RelaxedPoint | None = None


@dataclass
class BnbResult:
    selection: Selection | None
    objective: float
    nodes_explored: int
    gap: float
    status: Status
    lower: float = float("-inf")
    upper: float = float("inf")
    root_bound: float = float("inf")
    history: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"status": self.status.value, "objective": self.objective,
                "nodes_explored": self.nodes_explored, "gap": self.gap,
                "lower": self.lower, "upper": self.upper, "root_bound": self.root_bound,
                "selection": self.selection.to_dict() if self.selection else None}


class NoFractionalVariable(Exception):
    """The relaxed point is integral in every free coordinate."""


def select_branch_variable(point: RelaxedPoint | np.ndarray, config: BnbConfig,
                           candidates: np.ndarray | None = None,
                           epsilon: float | None = None) -> tuple[int, int]:
    """Pick the variable to branch on and the value explored first.

    ``point`` may be a RelaxedPoint or a plain vector of values.
    """
    x = point.x if isinstance(point, RelaxedPoint) else np.asarray(point, dtype=float)
    if candidates is None:
        if isinstance(point, RelaxedPoint):
            candidates = point.fractional_vars()
        else:
            candidates = np.flatnonzero((x > INTEGRAL_TOL) & (x < 1 - INTEGRAL_TOL))
    if len(candidates) == 0:
        raise NoFractionalVariable("no fractional variable")
    if config.rule is BranchRule.EPSILON_THRESHOLD:
        j = int(candidates[0])
        eps = config.branch_epsilon() if epsilon is None else epsilon
        return j, (0 if x[j] < eps else 1)
    vals = x[candidates]
    j = int(candidates[int(np.argmin(np.abs(vals - 0.5)))])
    return j, (1 if x[j] >= 0.5 else 0)


class _Search:
    def __init__(self, relaxation: Relaxation, config: BnbConfig,
                 base_fixings: dict[int, int] | None = None,
                 trace_fn: Callable[[dict], None] | None = None,
                 incumbent: Selection | None = None):
        self.r = relaxation
        self.inst = relaxation.instance
        self.config = config
        self.base = dict(base_fixings or {})
        self.trace_fn = trace_fn
        self.eps = config.branch_epsilon()
        self.lower = 0.0 if config.literal_initial_bound else float("-inf")
        self.best: Selection | None = None
        self.nodes = 0
        self.counter = itertools.count()
        self.heap: list = []
        self.pending_upper = float("-inf")
        self.history: list[tuple[float, float]] = []
        self.sub_limited = False
        self._memo: dict = {}
        self._sub_relax: dict[int, Relaxation] = {}
        if incumbent is not None:
            self._offer(incumbent)

    # -- bookkeeping --------------------------------------------------
    def _trace(self, action: str, node: BnbNode, **extra):
        if self.trace_fn is None:
            return
        rec = {"action": action, "depth": node.depth, "fixings": len(node.fixings),
               "bound": node.bound, "L": self.lower, "U": self.upper()}
        rec.update(extra)
        self.trace_fn(rec)

    def upper(self) -> float:
        top = -self.heap[0][0] if self.heap else float("-inf")
        return max(self.lower, top, self.pending_upper)

    def _offer(self, selection: Selection, value: float | None = None) -> bool:
        if not check_feasible(self.inst, selection).feasible:
            return False
        if any(selection_var_conflict(self.r, selection, self.base)):
            return False
        if value is None:
            value = qoe_total(self.inst, selection)
        if value > self.lower or self.best is None and value >= self.lower:
            self.lower = value
            self.best = selection
            return True
        return False

    def _make_node(self, fixings: dict[int, int], depth: int, parent_bound: float) -> BnbNode | None:
        self.nodes += 1
        try:
            point = self.r.solve(fixings)
        except InfeasibleSubproblem:
            return None
        node = BnbNode(point.fixings, min(point.bound, parent_bound), depth, point)
        if point.is_integral():
            sel = point.to_selection()
            if self._offer(sel):
                self._trace("incumbent", node, value=self.lower)
        elif self.config.rounding:
            sel = heuristic_selection(self.r, point.x)
            if sel is not None and self._offer(sel):
                self._trace("incumbent", node, value=self.lower)
        return node

    def _push(self, node: BnbNode):
        heapq.heappush(self.heap, (-node.bound, -node.depth, next(self.counter), node))

    # -- branching ----------------------------------------------------
    def _ul_pinned(self, fixings: dict[int, int]) -> bool:
        per_block = self.r.n_ul_levels
        ones = [j for j, v in fixings.items() if v == 1 and j < self.r.n_ul]
        return len({j // per_block for j in ones}) == self.r.cameras

    def _choose(self, node: BnbNode) -> tuple[int, int] | None:
        point = node.point
        frac = point.fractional_vars()
        if self.config.uplink_first:
            ul_frac = frac[frac < self.r.n_ul]
            if ul_frac.size:
                return select_branch_variable(point, self.config, ul_frac, self.eps)
            if self._decomposable() and not self._ul_pinned(node.fixings):
                open_ones = [j for j in range(self.r.n_ul)
                             if j not in node.fixings and point.x[j] > 1 - INTEGRAL_TOL]
                if open_ones:
                    return open_ones[0], 1
        if frac.size:
            return select_branch_variable(point, self.config, frac, self.eps)
        # integral relaxed point; split further only where smoothing leaves slack
        value = qoe_total(self.inst, point.to_selection())
        if node.bound - value <= self.config.gap_tol:
            return None
        gap = self.r.stall_gap
        open_ones = [j for j in np.flatnonzero(point.x > 1 - INTEGRAL_TOL)
                     if j not in node.fixings and gap[j] > 0]
        if not open_ones:
            return None
        j = max(open_ones, key=lambda v: (gap[v], -v))
        return int(j), 1

    def _sub_incumbent(self, ul: tuple[int, ...]) -> Selection | None:
        if self.best is None or tuple(self.best.uplink) != ul:
            return None
        return self.best

    def _decomposable(self) -> bool:
        return self.config.decompose and sum(1 for u in self.inst.users if u.tiles) > 1

    # -- per-user decomposition ----------------------------------------
    def _solve_leaf(self, node: BnbNode):
        ul = tuple(j % self.r.n_ul_levels for j, v in sorted(node.fixings.items())
                   if v == 1 and j < self.r.n_ul)
        result = decomposed_downlink(self.inst, ul, self.config, self.r.params,
                                     memo=self._memo, sub_relax=self._sub_relax,
                                     incumbent=self._sub_incumbent(ul))
        self.nodes += result.nodes_explored
        if result.status is Status.INFEASIBLE:
            self._trace("infeasible", node)
            return
        if result.status is Status.NODE_LIMIT:
            self.sub_limited = True
            self.pending_upper = max(self.pending_upper, result.upper)
        if self._offer(result.selection, result.objective):
            self._trace("incumbent", node, value=self.lower)

    # -- main loop ----------------------------------------------------
    def run(self) -> BnbResult:
        root = self._make_node(dict(self.base), 0, float("inf"))
        if root is None:
            return BnbResult(None, float("-inf"), self.nodes, float("inf"), Status.INFEASIBLE)
        root_bound = root.bound
        self._push(root)
        status = Status.OPTIMAL
        tol = self.config.gap_tol
        while self.heap:
            upper = self.upper()
            self.history.append((self.lower, upper))
            if self.best is not None and upper - self.lower <= tol:
                break
            if self.nodes >= self.config.node_limit:
                status = Status.NODE_LIMIT
                break
            _, _, _, node = heapq.heappop(self.heap)
            if node.bound <= self.lower + tol and self.best is not None:
                self._trace("prune", node)
                continue
            if self._decomposable() and self._ul_pinned(node.fixings):
                self._solve_leaf(node)
                continue
            choice = self._choose(node)
            if choice is None:
                self._trace("leaf", node)
                continue
            var, first = choice
            self._trace("branch", node, var=var, first=first)
            for value in (first, 1 - first):
                child = self._make_node({**node.fixings, var: value}, node.depth + 1, node.bound)
                if child is None:
                    continue
                if child.bound <= self.lower + tol and self.best is not None:
                    self._trace("prune", child)
                    continue
                self._push(child)
        upper = self.upper() if self.heap or self.pending_upper > float("-inf") else self.lower
        if status is Status.OPTIMAL and self.sub_limited:
            status = Status.NODE_LIMIT
        if self.best is None:
            if status is Status.OPTIMAL:
                return BnbResult(None, float("-inf"), self.nodes, float("inf"), Status.INFEASIBLE,
                                 root_bound=root_bound, history=self.history)
            return BnbResult(None, float("-inf"), self.nodes, float("inf"), status,
                             upper=upper, root_bound=root_bound, history=self.history)
        upper = max(upper, self.lower)
        self.history.append((self.lower, upper))
        return BnbResult(self.best, self.lower, self.nodes, upper - self.lower, status,
                         self.lower, upper, root_bound, self.history)


def selection_var_conflict(relaxation: Relaxation, selection: Selection, fixings: dict[int, int]):
    """Yield variables where ``selection`` contradicts ``fixings``."""
    if not fixings:
        return
    x = relaxation.x_from_selection(selection)
    for j, v in fixings.items():
        if int(round(x[j])) != v:
            yield j


def decomposed_downlink(instance: ProblemInstance, ul_levels, config: BnbConfig,
                        smoothing: SmoothingParams | None = None, memo: dict | None = None,
                        sub_relax: dict | None = None,
                        incumbent: Selection | None = None) -> BnbResult:
    """Best downlink per user for a fixed uplink choice, composed into one selection.

    ``incumbent`` (same uplink levels) seeds each per-user search with its
    downlink rows.
    """
    memo = {} if memo is None else memo
    sub_relax = {} if sub_relax is None else sub_relax
    ul_levels = tuple(int(v) for v in ul_levels)
    n_levels = len(instance.ul_ladder)
    base = {c * n_levels + d: int(d == ul_levels[c])
            for c in range(instance.cameras) for d in range(n_levels)}
    sub_config = replace(config, decompose=False,
                         node_limit=config.sub_node_limit or config.node_limit)
    if incumbent is not None and tuple(incumbent.uplink) != ul_levels:
        raise ValueError("incumbent uses different uplink levels")
    downlink, total, upper, nodes = [], 0.0, 0.0, 0
    status = Status.OPTIMAL
    for n, user in enumerate(instance.users):
        if not user.tiles:
            downlink.append(np.zeros((0, instance.gops), dtype=np.int64))
            continue
        cams = sorted({instance.tile_camera[t] for t in user.tiles})
        key = (n, tuple(ul_levels[c] for c in cams))
        if key not in memo:
            if n not in sub_relax:
                sub_relax[n] = Relaxation(instance.with_users([user]), smoothing)
            seed = None
            if incumbent is not None:
                seed = Selection(ul_levels, (incumbent.downlink[n],))
            res = _Search(sub_relax[n], sub_config, base, incumbent=seed).run()
            memo[key] = res
            nodes += res.nodes_explored
        res = memo[key]
        if res.status is Status.INFEASIBLE or res.selection is None:
            return BnbResult(None, float("-inf"), nodes, float("inf"), Status.INFEASIBLE)
        if res.status is Status.NODE_LIMIT:
            status = Status.NODE_LIMIT
        downlink.append(res.selection.downlink[0])
        total += res.objective
        upper += res.upper
    selection = Selection(ul_levels, tuple(downlink))
    objective = qoe_total(instance, selection)
    return BnbResult(selection, objective, nodes, max(upper - objective, 0.0), status,
                     objective, max(upper, objective))


def solve(instance: ProblemInstance, config: BnbConfig | None = None,
          smoothing: SmoothingParams | None = None, *, fixed: dict[int, int] | None = None,
          trace_fn: Callable[[dict], None] | None = None,
          incumbent: Selection | None = None) -> BnbResult:
    """Maximize total QoE over all feasible integral selections."""
    config = config or BnbConfig()
    relaxation = build_relaxation(instance, smoothing)
    return _Search(relaxation, config, fixed, trace_fn, incumbent).run()
