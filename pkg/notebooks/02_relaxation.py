# %% [markdown]
# # The continuous relaxation
#
# The stall indicator is replaced by a logistic surrogate whose error is known,
# so the relaxation's optimum plus that error is an upper bound on every
# integral assignment.  This script compares bound, relaxed point and oracle on
# a few random instances.

# %%
import numpy as np

from coupled360.model import GopTimeline, QoEParams, QualityLadder, TileGrid
from coupled360.oracle import enumerate_optimal
from coupled360.problem import ProblemInstance, User
from coupled360.relax import InfeasibleSubproblem, smooth_indicator, solve_relaxation

# %% [markdown]
# The surrogate near the threshold for a few smoothing widths.

# %%
gap = np.linspace(-0.2, 0.2, 5)
for eps in (0.01, 0.05, 0.1):
    print(f"eps={eps:<5}", np.round(smooth_indicator(gap, 0.0, eps), 3))

# %% [markdown]
# Random two-camera instances: the relaxation bound must sit above the oracle.

# %%
rng = np.random.default_rng(0)
for trial in range(6):
    bw = rng.uniform(0.5, 3.0, size=2).round(2).tolist()
    users = (User(GopTimeline.uniform(bw), tiles=(0, 1)),)
    inst = ProblemInstance(2, QualityLadder([1.5, 3.0]), 4.5, TileGrid(4, 1),
                           QualityLadder([0.2, 0.6, 1.0, 1.4]), users, QoEParams(1.0, 1.0))
    oracle = enumerate_optimal(inst)
    try:
        pt = solve_relaxation(inst)
    except InfeasibleSubproblem:
        print(trial, bw, "relaxation infeasible; oracle feasible:", oracle.feasible)
        continue
    print(f"{trial} B={bw} bound={pt.bound:8.4f} oracle={oracle.objective:8.4f} "
          f"kkt={pt.residual.max:.1e}")
