"""Continuous relaxation of the joint rate-selection problem and its KKT solver.

The 0/1 selection variables are relaxed to the product of simplices.  The
relaxed objective is

    sum_{n,t,k} [ sum_d chi * (q(rate_d) - alpha * T_k * s(rate_d, B_k)) ]
        - beta * sum_{n,t,k} (Qbar_{t,k+1} - Qbar_{t,k})^2

with ``s`` the logistic surrogate of the stall indicator applied per
representation and ``Qbar`` the expected quality of a tile in a GOP.  It is
concave, the constraints are linear, so every KKT point is a global maximum
of the relaxation.  The solver is a Mehrotra predictor-corrector primal-dual
interior point method on the KKT system; afterwards near-zero coordinates are
snapped so active bounds hold exactly.

Variable layout: uplink variables first, camera-major (``c * D' + d'``), then
downlink variables user-major, tile, GOP, level.  Every camera and every
(user, tile, GOP) triple owns one contiguous simplex block.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import linprog
from scipy.sparse.linalg import splu
from scipy.special import expit

from .model import Selection
from .problem import CouplingMode, DownlinkBudget, ProblemInstance

log = logging.getLogger(__name__)

SNAP_TOL = 1e-6
INTEGRAL_TOL = 1e-6
_DENSE_LIMIT = 700


def smooth_indicator(x, bandwidth, epsilon):
    """Logistic surrogate of 1(x > bandwidth) with sharpness ``epsilon`` (Mbps)."""
    if np.any(np.asarray(epsilon) <= 0):
        raise ValueError("epsilon must be positive")
    out = expit((np.asarray(x, dtype=float) - bandwidth) / epsilon)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SmoothingParams:
    """Surrogate sharpness and solver tolerances.

    The surrogate width for GOP k is ``max(epsilon * B_k, min_epsilon)``.
    """

    epsilon: float = 0.05
    min_epsilon: float = 1e-3
    tol_kkt: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if self.epsilon <= 0 or self.min_epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.tol_kkt <= 0:
            raise ValueError("tol_kkt must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


class InfeasibleSubproblem(Exception):
    """The fixings leave no point satisfying the relaxed constraints."""


@dataclass
class KKTResidual:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)

    def as_dict(self) -> dict:
        return {"stationarity": self.stationarity, "primal": self.primal,
                "dual": self.dual, "complementarity": self.complementarity}


@dataclass
class RelaxedPoint:
    """Relaxed selection variables with their multipliers.

    ``lam`` holds one multiplier per simplex block (uplink blocks first) and
    ``mu`` one per inequality row, see ``Relaxation.row_kind``.  ``objective``
    is the smoothed objective at ``x``; ``bound`` is a certified upper bound
    on the exact QoE of every integral point honoring ``fixings``.
    """

    relaxation: "Relaxation"
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    fixings: dict[int, int] = field(default_factory=dict)
    objective: float = float("nan")
    bound: float = float("inf")
    residual: KKTResidual | None = None
    status: str = "unsolved"
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "kkt"

    @property
    def chi_ul(self) -> np.ndarray:
        r = self.relaxation
        return self.x[: r.n_ul].reshape(r.cameras, r.n_ul_levels)

    @property
    def chi_dl(self) -> list[np.ndarray]:
        r = self.relaxation
        out = []
        for n, (start, tiles) in enumerate(zip(r.user_var_start, r.user_tiles)):
            size = tiles * r.gops * r.n_dl_levels
            out.append(self.x[start:start + size].reshape(tiles, r.gops, r.n_dl_levels))
        return out

    @property
    def lambda_ul(self) -> np.ndarray:
        return self.lam[: self.relaxation.cameras]

    @property
    def lambda_dl(self) -> np.ndarray:
        return self.lam[self.relaxation.cameras:]

    @property
    def mu_ul(self) -> float:
        return float(self.mu[self.relaxation.row_kind == 0].sum())

    @property
    def mu_dl(self) -> np.ndarray:
        return self.mu[self.relaxation.row_kind == 1]

    @property
    def mu_couple(self) -> np.ndarray:
        return self.mu[self.relaxation.row_kind == 2]

    def fractional_vars(self, tol: float = INTEGRAL_TOL) -> np.ndarray:
        free = np.ones(self.x.size, dtype=bool)
        if self.fixings:
            free[list(self.fixings)] = False
        frac = (self.x > tol) & (self.x < 1 - tol) & free
        return np.flatnonzero(frac)

    def is_integral(self, tol: float = INTEGRAL_TOL) -> bool:
        return self.fractional_vars(tol).size == 0

    def to_selection(self) -> Selection:
        return self.relaxation.selection_from_x(self.x)


class Relaxation:
    """Relaxed problem data for one instance (built once, reused per node)."""

    ROW_KINDS = ("uplink_budget", "downlink_budget", "coupling")

    def __init__(self, instance: ProblemInstance, params: SmoothingParams | None = None):
        if instance.qoe.stall_mode != "per_tile":
            raise ValueError("the relaxation supports the per-tile stall model only")
        self.instance = instance
        self.params = params or SmoothingParams()
        self.cameras = instance.cameras
        self.n_ul_levels = len(instance.ul_ladder)
        self.n_dl_levels = len(instance.dl_ladder)
        self.gops = instance.gops
        self.n_ul = self.cameras * self.n_ul_levels
        self.user_tiles = [len(u.tiles) for u in instance.users]
        self.user_var_start = []
        self.user_block_start = []
        var, block = self.n_ul, self.cameras
        for tiles in self.user_tiles:
            self.user_var_start.append(var)
            self.user_block_start.append(block)
            var += tiles * self.gops * self.n_dl_levels
            block += tiles * self.gops
        self.n_vars = var
        self.n_blocks = block
        self.block_start = np.concatenate([
            np.arange(self.cameras) * self.n_ul_levels,
            self.n_ul + np.arange(block - self.cameras) * self.n_dl_levels]).astype(np.int64)
        self.block_size = np.array([self.n_ul_levels] * self.cameras
                                   + [self.n_dl_levels] * (block - self.cameras), dtype=np.int64)
        self.block_of = np.repeat(np.arange(block), self.block_size)
        self.level_of = np.arange(self.n_vars) - self.block_start[self.block_of]
        # downlink block -> (user, tile slot, gop, camera)
        self.dl_user = np.empty(block - self.cameras, dtype=np.int64)
        self.dl_tile = np.empty_like(self.dl_user)
        self.dl_gop = np.empty_like(self.dl_user)
        self.dl_camera = np.empty_like(self.dl_user)
        for n, u in enumerate(instance.users):
            b0 = self.user_block_start[n] - self.cameras
            for i, t in enumerate(u.tiles):
                for k in range(self.gops):
                    b = b0 + i * self.gops + k
                    self.dl_user[b], self.dl_tile[b], self.dl_gop[b] = n, i, k
                    self.dl_camera[b] = instance.tile_camera[t]
        self._build_objective()
        self._build_constraints()

    # -- construction -------------------------------------------------
    def _build_objective(self):
        inst, p = self.instance, self.params
        ladder = inst.dl_ladder.bitrates
        qual = np.log1p(ladder / inst.qoe.q_scale)
        c = np.zeros(self.n_vars)
        gap = np.zeros(self.n_vars)
        rows, cols, vals = [], [], []
        pair = 0
        for n, u in enumerate(inst.users):
            bw = u.timeline.dl_bandwidth
            eps = np.maximum(p.epsilon * bw, p.min_epsilon)
            surrogate = smooth_indicator(ladder[None, :], bw[:, None], eps[:, None])   # (K, D)
            indicator = (ladder[None, :] > bw[:, None]).astype(float)
            weight = inst.qoe.alpha * u.timeline.durations[:, None]
            coef = qual[None, :] - weight * surrogate
            slack = weight * np.maximum(surrogate - indicator, 0.0)
            start = self.user_var_start[n]
            for i in range(len(u.tiles)):
                for k in range(self.gops):
                    v0 = start + (i * self.gops + k) * self.n_dl_levels
                    c[v0:v0 + self.n_dl_levels] = coef[k]
                    gap[v0:v0 + self.n_dl_levels] = slack[k]
                    if k + 1 < self.gops:
                        nxt = v0 + self.n_dl_levels
                        rows += [pair] * (2 * self.n_dl_levels)
                        cols += list(range(nxt, nxt + self.n_dl_levels)) + list(range(v0, v0 + self.n_dl_levels))
                        vals += list(qual) + list(-qual)
                        pair += 1
        self.c = c
        self.stall_gap = gap
        self.beta = inst.qoe.beta
        self.M = sp.csr_matrix((vals, (rows, cols)), shape=(pair, self.n_vars))

    def _build_constraints(self):
        inst = self.instance
        ul = inst.ul_ladder.bitrates
        dl = inst.dl_ladder.bitrates
        rows, cols, vals, rhs, kind, meta = [], [], [], [], [], []

        def add(entries, bound, k, info):
            r = len(rhs)
            for col, val in entries:
                rows.append(r)
                cols.append(col)
                vals.append(val)
            rhs.append(bound)
            kind.append(k)
            meta.append(info)

        add([(c * self.n_ul_levels + d, ul[d]) for c in range(self.cameras)
             for d in range(self.n_ul_levels)], inst.ul_bandwidth, 0, {})

        for n, u in enumerate(inst.users):
            if not u.tiles:
                continue
            start = self.user_var_start[n]
            bw = u.timeline.dl_bandwidth
            if inst.dl_budget is DownlinkBudget.PER_GOP:
                for k in range(self.gops):
                    entries = [(start + (i * self.gops + k) * self.n_dl_levels + d, dl[d])
                               for i in range(len(u.tiles)) for d in range(self.n_dl_levels)]
                    add(entries, float(bw[k]), 1, {"user": n, "gop": k})
            else:
                entries = [(start + j, dl[j % self.n_dl_levels])
                           for j in range(len(u.tiles) * self.gops * self.n_dl_levels)]
                add(entries, float(bw.sum()), 1, {"user": n})

        if inst.coupling is CouplingMode.LEVEL_INDEX:
            a_dl = np.arange(self.n_dl_levels, dtype=float)
            a_ul = np.arange(self.n_ul_levels, dtype=float)
        elif inst.coupling is CouplingMode.LITERAL_AGGREGATE:
            a_dl, a_ul = dl, ul / inst.grid.count
        else:
            a_dl, a_ul = dl, ul / inst.tau
        for n, u in enumerate(inst.users):
            start = self.user_var_start[n]
            for i, t in enumerate(u.tiles):
                cam = inst.tile_camera[t]
                up = [(cam * self.n_ul_levels + d, -a_ul[d]) for d in range(self.n_ul_levels)]
                if inst.coupling is CouplingMode.LITERAL_AGGREGATE:
                    entries = [(start + (i * self.gops + k) * self.n_dl_levels + d, a_dl[d])
                               for k in range(self.gops) for d in range(self.n_dl_levels)]
                    add(entries + up, 0.0, 2, {"user": n, "tile": t})
                else:
                    for k in range(self.gops):
                        v0 = start + (i * self.gops + k) * self.n_dl_levels
                        entries = [(v0 + d, a_dl[d]) for d in range(self.n_dl_levels)]
                        add(entries + up, 0.0, 2, {"user": n, "tile": t, "gop": k})
        self.G = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), self.n_vars))
        self.Gc = self.G.tocsc()
        self.h = np.array(rhs, dtype=float)
        self.row_kind = np.array(kind, dtype=np.int64)
        self.row_meta = meta
        self.E = sp.csr_matrix((np.ones(self.n_vars), (self.block_of, np.arange(self.n_vars))),
                               shape=(self.n_blocks, self.n_vars))
        self._coupling_ul = a_ul
        self._coupling_dl = a_dl
        # entries of G grouped by (row, block) for the quick infeasibility test
        coo = self.G.tocoo()
        order = np.lexsort((self.block_of[coo.col], coo.row))
        r, cidx, v = coo.row[order], coo.col[order], coo.data[order]
        b = self.block_of[cidx]
        new_group = np.ones(r.size, dtype=bool)
        new_group[1:] = (r[1:] != r[:-1]) | (b[1:] != b[:-1])
        self._qi_cols, self._qi_vals = cidx, v
        self._qi_groups = np.flatnonzero(new_group)
        group_row = r[self._qi_groups]
        new_row = np.ones(group_row.size, dtype=bool)
        new_row[1:] = group_row[1:] != group_row[:-1]
        self._qi_rows = np.flatnonzero(new_row)
        self._qi_row_ids = group_row[self._qi_rows]

    # -- indexing -----------------------------------------------------
    def ul_var(self, camera: int, level: int) -> int:
        return camera * self.n_ul_levels + level

    def dl_var(self, user: int, slot: int, gop: int, level: int) -> int:
        return self.user_var_start[user] + (slot * self.gops + gop) * self.n_dl_levels + level

    def is_uplink(self, var: int) -> bool:
        return var < self.n_ul

    def block_vars(self, block: int) -> np.ndarray:
        s = self.block_start[block]
        return np.arange(s, s + self.block_size[block])

    def selection_from_x(self, x: np.ndarray) -> Selection:
        """Round each block to its largest coordinate."""
        ul = tuple(int(np.argmax(x[c * self.n_ul_levels:(c + 1) * self.n_ul_levels]))
                   for c in range(self.cameras))
        dl = []
        for n, tiles in enumerate(self.user_tiles):
            chunk = x[self.user_var_start[n]:self.user_var_start[n] + tiles * self.gops * self.n_dl_levels]
            dl.append(np.argmax(chunk.reshape(tiles, self.gops, self.n_dl_levels), axis=2)
                      if tiles else np.zeros((0, self.gops), dtype=np.int64))
        return Selection(ul, tuple(dl))

    def x_from_selection(self, selection: Selection) -> np.ndarray:
        x = np.zeros(self.n_vars)
        for c, d in enumerate(selection.uplink):
            x[self.ul_var(c, d)] = 1.0
        for n, levels in enumerate(selection.downlink):
            for i in range(levels.shape[0]):
                for k in range(levels.shape[1]):
                    x[self.dl_var(n, i, k, int(levels[i, k]))] = 1.0
        return x

    def fixings_from_selection(self, selection: Selection) -> dict[int, int]:
        x = self.x_from_selection(selection)
        return {j: int(round(v)) for j, v in enumerate(x)}

    def point(self, x, lam=None, mu=None, fixings=None) -> RelaxedPoint:
        lam = np.zeros(self.n_blocks) if lam is None else np.asarray(lam, dtype=float)
        mu = np.zeros(self.h.size) if mu is None else np.asarray(mu, dtype=float)
        x = np.asarray(x, dtype=float)
        return RelaxedPoint(self, x, lam, mu, dict(fixings or {}), objective=self.objective(x))

    # -- evaluation ---------------------------------------------------
    def objective(self, x: np.ndarray) -> float:
        diff = self.M @ x
        return float(self.c @ x - self.beta * diff @ diff)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.c - 2.0 * self.beta * (self.M.T @ (self.M @ x))

    def equality(self, x: np.ndarray) -> np.ndarray:
        return self.E @ x - 1.0

    def inequality(self, x: np.ndarray) -> np.ndarray:
        return self.G @ x - self.h

    def lagrangian(self, point: RelaxedPoint) -> float:
        x = point.x
        return (-self.objective(x) + float(point.lam @ self.equality(x))
                + float(point.mu @ self.inequality(x)))

    def lagrangian_grad(self, point: RelaxedPoint) -> np.ndarray:
        return -self.gradient(point.x) + self.E.T @ point.lam + self.G.T @ point.mu

    def kkt_residual(self, point: RelaxedPoint) -> KKTResidual:
        """Max-norm residuals of stationarity, primal and dual feasibility, complementarity.

        Stationarity is projected: a coordinate sitting exactly on its lower
        bound only counts a negative partial derivative.  Fixed coordinates
        are excluded.
        """
        x = point.x
        g = self.lagrangian_grad(point)
        free = np.ones(self.n_vars, dtype=bool)
        primal = 0.0
        if point.fixings:
            idx = np.fromiter(point.fixings.keys(), dtype=np.int64)
            val = np.fromiter(point.fixings.values(), dtype=float)
            free[idx] = False
            primal = float(np.max(np.abs(x[idx] - val)))
        proj = np.where(x <= 0.0, np.maximum(-g, 0.0), np.abs(g))
        stationarity = float(np.max(proj[free])) if free.any() else 0.0
        ineq = self.inequality(x)
        primal = max(primal,
                     float(np.max(np.abs(self.equality(x)))) if self.n_blocks else 0.0,
                     float(np.max(ineq, initial=0.0)),
                     float(np.max(-x, initial=0.0)), float(np.max(x - 1.0, initial=0.0)))
        dual = float(np.max(-point.mu, initial=0.0))
        comp = float(np.max(np.abs(point.mu * ineq), initial=0.0))
        return KKTResidual(stationarity, primal, dual, comp)

    def smoothing_gap(self, excluded: np.ndarray | None = None) -> float:
        """Worst-case excess of exact over smoothed QoE among integral points.

        ``excluded`` marks levels that are fixed to zero.
        """
        gap = self.stall_gap if excluded is None else np.where(excluded, 0.0, self.stall_gap)
        if self.n_vars == self.n_ul:
            return 0.0
        per_block = np.maximum.reduceat(gap[self.n_ul:], self.block_start[self.cameras:] - self.n_ul)
        return float(per_block.sum())

    # -- presolve -----------------------------------------------------
    def presolve(self, fixings: Mapping[int, int]) -> dict[int, int]:
        """Complete fixings with everything they imply; raises InfeasibleSubproblem."""
        fixed = {}
        for j, v in fixings.items():
            j, v = int(j), int(v)
            if v not in (0, 1):
                raise ValueError("fixings must be 0 or 1")
            if fixed.get(j, v) != v:
                raise ValueError(f"variable {j} fixed to both values")
            fixed[j] = v
        state = np.full(self.n_vars, -1, dtype=np.int8)
        for j, v in fixed.items():
            state[j] = v
        self._settle(state)
        # downlink levels above the best cap still open to the source camera
        a_ul, a_dl = self._coupling_ul, self._coupling_dl
        lowest_rest = 0.0
        if self.instance.coupling is CouplingMode.LITERAL_AGGREGATE:
            lowest_rest = (self.gops - 1) * a_dl[0]
        ul_open = state[:self.n_ul].reshape(self.cameras, self.n_ul_levels) != 0
        cam_cap = np.where(ul_open, a_ul[None, :], -np.inf).max(axis=1)
        dl = slice(self.n_ul, self.n_vars)
        cap = cam_cap[self.dl_camera[self.block_of[dl] - self.cameras]] - lowest_rest
        over = (a_dl[self.level_of[dl]] > cap + 1e-12) & (state[dl] == -1)
        if over.any():
            state[self.n_ul:][over] = 0
            self._settle(state)
        return {int(j): int(state[j]) for j in np.flatnonzero(state >= 0)}

    def _settle(self, state: np.ndarray) -> None:
        """Zero the rest of a block holding a one; set the last open level of a block to one."""
        nb = self.n_blocks
        ones = np.bincount(self.block_of, weights=state == 1, minlength=nb)
        if np.any(ones > 1):
            raise InfeasibleSubproblem(f"block {int(np.argmax(ones > 1))} has two levels fixed to one")
        open_ = state == -1
        state[open_ & (ones[self.block_of] == 1)] = 0
        open_ = state == -1
        free = np.bincount(self.block_of, weights=open_, minlength=nb)
        empty = (free == 0) & (ones == 0)
        if np.any(empty):
            raise InfeasibleSubproblem(f"block {int(np.argmax(empty))} has every level excluded")
        single = (free == 1) & (ones == 0)
        state[open_ & single[self.block_of]] = 1

    def _quick_infeasible(self, state: np.ndarray) -> bool:
        """Necessary feasibility test: each row at its cheapest open point."""
        coef = np.where(state[self._qi_cols] == 0, np.inf, self._qi_vals)
        per_block = np.minimum.reduceat(coef, self._qi_groups)
        lhs = np.add.reduceat(per_block, self._qi_rows) if per_block.size else np.zeros(0)
        return bool(np.any(lhs > self.h[self._qi_row_ids] + 1e-9))

    # -- solve --------------------------------------------------------
    def solve(self, fixings: Mapping[int, int] | None = None,
              log_fn: Callable[[dict], None] | None = None) -> RelaxedPoint:
        fixed = self.presolve(fixings or {})
        state = np.full(self.n_vars, -1, dtype=np.int8)
        for j, v in fixed.items():
            state[j] = v
        free = np.flatnonzero(state == -1)
        x_fix = (state == 1).astype(float)
        excluded = state == 0

        if free.size == 0:
            res = self.inequality(x_fix)
            if np.any(res > 1e-9):
                raise InfeasibleSubproblem("fully fixed point violates a constraint")
            lam = np.zeros(self.n_blocks)
            mu = np.zeros(self.h.size)
            pt = RelaxedPoint(self, x_fix, lam, mu, fixed, objective=self.objective(x_fix))
            pt.bound = pt.objective + self.smoothing_gap(excluded)
            pt.residual = self.kkt_residual(pt)
            pt.status = "kkt"
            return pt
        if self._quick_infeasible(state):
            raise InfeasibleSubproblem("a constraint cannot be met by the open levels")

        # reduced problem over the free coordinates
        Gc = self.Gc[:, free]
        keep = np.flatnonzero(np.diff(Gc.tocsr().indptr) > 0)
        h_red = self.h - self.G @ x_fix
        dropped = np.setdiff1d(np.arange(self.h.size), keep)
        if dropped.size and np.any(h_red[dropped] < -1e-9):
            raise InfeasibleSubproblem("a fully fixed constraint row is violated")
        G_red = Gc.tocsr()[keep]
        h_red = h_red[keep]
        blocks = np.unique(self.block_of[free])
        block_pos = np.searchsorted(blocks, self.block_of[free])
        A_red = sp.csr_matrix((np.ones(free.size), (block_pos, np.arange(free.size))),
                              shape=(blocks.size, free.size))
        M_free = self.M[:, free].tocsc() if self.M.shape[0] else sp.csr_matrix((0, free.size))
        m_off = self.M @ x_fix if self.M.shape[0] else np.zeros(0)
        H = (2.0 * self.beta) * (M_free.T @ M_free)
        c_red = self.c[free] - 2.0 * self.beta * (M_free.T @ m_off if m_off.size else 0.0)

        qp = _QP(H=sp.csr_matrix(H), c=np.asarray(c_red).ravel(), A=A_red,
                 b=np.ones(blocks.size), G=G_red, h=h_red, block_pos=block_pos, n_blocks=blocks.size)
        def assemble(xr, wr, yr, zr, iterations=0) -> RelaxedPoint:
            x = x_fix.copy()
            x[free] = xr
            # snap bound-active coordinates and restore the simplex sums
            snap = np.zeros(self.n_vars, dtype=bool)
            snap[free] = (xr < SNAP_TOL) & (xr < wr)
            x[snap] = 0.0
            touched = np.zeros(self.n_blocks, dtype=bool)
            touched[self.block_of[snap]] = True
            sums = np.bincount(self.block_of, weights=x, minlength=self.n_blocks)
            rescale = touched[self.block_of]
            x[rescale] /= sums[self.block_of[rescale]]
            lam = np.zeros(self.n_blocks)
            lam[blocks] = yr
            mu = np.zeros(self.h.size)
            mu[keep] = zr
            pt = RelaxedPoint(self, x, lam, mu, fixed, objective=self.objective(x),
                              iterations=iterations)
            pt.residual = self.kkt_residual(pt)
            return pt

        def accept(xr, wr, yr, zr) -> bool:
            return assemble(xr, wr, yr, zr).residual.max <= 0.1 * self.params.tol_kkt

        sol = _solve_qp(qp, self.params.max_iter, log_fn, accept)
        if not sol.ok and _lp_infeasible(qp):
            raise InfeasibleSubproblem("relaxed constraints are infeasible")
        pt = assemble(sol.x, sol.w, sol.y, sol.z, sol.iterations)
        pt.status = "kkt" if pt.residual.max <= self.params.tol_kkt else "max_iter"
        # certified bound: reduced dual bound shifted back to the full objective
        red_const = float(self.c @ x_fix - self.beta * (m_off @ m_off)) if m_off.size else float(self.c @ x_fix)
        pt.bound = sol.dual_bound + red_const + self.smoothing_gap(excluded)
        if pt.status != "kkt":
            log.debug("relaxation stopped after %d iterations, residual %.3g",
                      sol.iterations, pt.residual.max)
        return pt


# ---------------------------------------------------------------------------
# interior point method for   max c'x - 1/2 x'Hx   s.t.  Ax = b, Gx <= h, x >= 0
# ---------------------------------------------------------------------------

@dataclass
class _QP:
    H: sp.csr_matrix
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    block_pos: np.ndarray
    n_blocks: int


@dataclass
class _QPSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    iterations: int
    ok: bool
    dual_bound: float


def _step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


class _KKTSystem:
    """Augmented KKT matrix with a fixed pattern; only the two diagonals change."""

    def __init__(self, qp: _QP):
        self.qp = qp
        n, p, m = qp.c.size, qp.b.size, qp.h.size
        self.n, self.p, self.m = n, p, m
        self.dense = (n + p + m) <= _DENSE_LIMIT
        eye_x = sp.eye(n, format="csr")
        eye_z = sp.eye(m, format="csr")
        # unit diagonals mark where the barrier terms go
        base = sp.bmat([[qp.H + eye_x, qp.A.T, qp.G.T],
                        [qp.A, None, None],
                        [qp.G, None, -eye_z]], format="csc")
        if self.dense:
            self.base = base.toarray()
            self.base[np.arange(n), np.arange(n)] -= 1.0
            self.base[np.arange(n + p, n + p + m), np.arange(n + p, n + p + m)] += 1.0
            return
        base.sort_indices()
        self.K = base
        self.pos_x = np.array([self._find(base, j, j) for j in range(n)], dtype=np.int64)
        self.pos_z = np.array([self._find(base, j, j) for j in range(n + p, n + p + m)],
                              dtype=np.int64)
        self.base_data = base.data.copy()
        self.base_data[self.pos_x] -= 1.0
        self.base_data[self.pos_z] += 1.0

    @staticmethod
    def _find(mat, row, col) -> int:
        lo, hi = mat.indptr[col], mat.indptr[col + 1]
        return int(lo + np.searchsorted(mat.indices[lo:hi], row))

    def factor(self, dx, dz):
        n, p, m = self.n, self.p, self.m
        if self.dense:
            K = self.base.copy()
            K[np.arange(n), np.arange(n)] += dx
            K[np.arange(n + p, n + p + m), np.arange(n + p, n + p + m)] -= dz
            self._lu = lu_factor(K, overwrite_a=True, check_finite=False)
            return
        data = self.base_data.copy()
        data[self.pos_x] += dx
        data[self.pos_z] -= dz
        self.K.data = data
        self._lu = splu(self.K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)

    def solve(self, rhs):
        if self.dense:
            return lu_solve(self._lu, rhs, check_finite=False)
        return self._lu.solve(rhs)


def _solve_qp(qp: _QP, max_iter: int, log_fn=None, accept=None) -> _QPSolution:
    """Mehrotra predictor-corrector; ``accept`` may end the run early once the
    iterate is nearly optimal."""
    n, p, m = qp.c.size, qp.b.size, qp.h.size
    # start: block barycenters, unit duals
    counts = np.bincount(qp.block_pos, minlength=qp.n_blocks).astype(float)
    x = 1.0 / counts[qp.block_pos]
    w = np.ones(n)
    y = np.zeros(p)
    s = np.maximum(qp.h - qp.G @ x, 1.0)
    z = np.ones(m)
    system = _KKTSystem(qp)
    scale = 1.0 + max(np.max(np.abs(qp.c), initial=0.0), np.max(np.abs(qp.h), initial=0.0))
    ok = False
    it = 0
    for it in range(1, max_iter + 1):
        rd = qp.H @ x - qp.c + qp.A.T @ y + qp.G.T @ z - w
        rp = qp.A @ x - qp.b
        rg = qp.G @ x + s - qp.h
        mu = (x @ w + s @ z) / (n + m)
        res = max(np.max(np.abs(rd)), np.max(np.abs(rp), initial=0.0), np.max(np.abs(rg), initial=0.0))
        if log_fn is not None:
            log_fn({"iter": it, "objective": float(qp.c @ x - 0.5 * x @ (qp.H @ x)),
                    "residual": float(res), "mu": float(mu)})
        if res <= 1e-11 * scale and mu <= 1e-15:
            ok = True
            break
        if accept is not None and mu <= 1e-9 and res <= 1e-8 * scale and accept(x, w, y, z):
            ok = True
            break
        if not (np.all(np.isfinite(x)) and np.max(np.abs(y), initial=0) < 1e12
                and np.max(z, initial=0) < 1e12):
            break
        try:
            system.factor(w / x, s / z if m else np.zeros(0))
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            break

        def direction(r_xw, r_sz):
            rhs = np.concatenate([-rd + r_xw / x, -rp, -rg - r_sz / z if m else np.zeros(0)])
            sol = system.solve(rhs)
            dx, dy, dz = sol[:n], sol[n:n + p], sol[n + p:]
            dw = (r_xw - w * dx) / x
            ds = -rg - qp.G @ dx
            return dx, dy, dz, dw, ds

        # predictor
        dx, dy, dz, dw, ds = direction(-x * w, -s * z)
        a_p = min(_step(x, dx), _step(s, ds) if m else 1.0)
        a_d = min(_step(w, dw), _step(z, dz) if m else 1.0)
        mu_aff = ((x + a_p * dx) @ (w + a_d * dw) + (s + a_p * ds) @ (z + a_d * dz)) / (n + m)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, dy, dz, dw, ds = direction(-x * w + sigma * mu - dx * dw,
                                       -s * z + sigma * mu - ds * dz)
        a_p = 0.995 * min(_step(x, dx), _step(s, ds) if m else 1.0)
        a_d = 0.995 * min(_step(w, dw), _step(z, dz) if m else 1.0)
        a_p, a_d = min(a_p, 1.0), min(a_d, 1.0)
        x = x + a_p * dx
        s = s + a_p * ds
        y = y + a_d * dy
        z = z + a_d * dz
        w = w + a_d * dw
        x = np.maximum(x, 1e-300)
        s = np.maximum(s, 1e-300) if m else s
    else:
        it = max_iter

    dual_bound = _dual_bound(qp, x, y, z, w, s)
    return _QPSolution(x, y, z, w, it, ok, dual_bound)


def _dual_bound(qp: _QP, x, y, z, w, s) -> float:
    """Upper bound on the reduced QP maximum from any (y, z >= 0, w >= 0).

    Uses concavity of the Lagrangian in x and that feasible points lie in a
    product of simplices.
    """
    rd = qp.H @ x - qp.c + qp.A.T @ y + qp.G.T @ z - w
    rp = qp.A @ x - qp.b
    rg = qp.G @ x + s - qp.h
    f = float(qp.c @ x - 0.5 * x @ (qp.H @ x))
    worst = np.zeros(qp.n_blocks)
    np.maximum.at(worst, qp.block_pos, np.maximum(-rd, 0.0))
    bound = (f - y @ rp + z @ s - z @ rg + w @ x + rd @ x + worst.sum())
    return float(bound)


def _lp_infeasible(qp: _QP) -> bool:
    res = linprog(np.zeros(qp.c.size), A_ub=qp.G if qp.h.size else None,
                  b_ub=qp.h if qp.h.size else None, A_eq=qp.A, b_eq=qp.b,
                  bounds=(0, None), method="highs")
    return res.status == 2


# ---------------------------------------------------------------------------
# module-level API on instances
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def build_relaxation(instance: ProblemInstance, params: SmoothingParams | None = None) -> Relaxation:
    return Relaxation(instance, params)


def _relaxation_of(instance, point: RelaxedPoint | None = None) -> Relaxation:
    if point is not None and point.relaxation.instance is instance:
        return point.relaxation
    return build_relaxation(instance)


def smoothed_objective(instance: ProblemInstance, point: RelaxedPoint) -> float:
    return _relaxation_of(instance, point).objective(point.x)


def lagrangian(instance: ProblemInstance, point: RelaxedPoint) -> float:
    return _relaxation_of(instance, point).lagrangian(point)


def lagrangian_grad(instance: ProblemInstance, point: RelaxedPoint) -> np.ndarray:
    return _relaxation_of(instance, point).lagrangian_grad(point)


def kkt_residual(instance: ProblemInstance, point: RelaxedPoint) -> KKTResidual:
    return _relaxation_of(instance, point).kkt_residual(point)


def solve_relaxation(instance: ProblemInstance, fixed: Mapping[int, int] | None = None,
                     params: SmoothingParams | None = None, log_fn=None) -> RelaxedPoint:
    return build_relaxation(instance, params).solve(fixed, log_fn)


def jsonl_logger(stream) -> Callable[[dict], None]:
    """Iteration-log sink writing one JSON object per line."""
    def emit(record: dict):
        stream.write(json.dumps(record, sort_keys=True) + "\n")
    return emit
