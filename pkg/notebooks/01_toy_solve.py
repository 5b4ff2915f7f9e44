# %% [markdown]
# # Solving a two-camera toy instance
#
# Load the bundled toy instance, solve it with branch-and-bound, then confirm
# the answer by exhaustive enumeration.  Run with `python3 notebooks/01_toy_solve.py`.

# %%
import json
from importlib import resources

from coupled360.baselines import run_algorithms
from coupled360.bnb import solve
from coupled360.model import qoe_breakdown
from coupled360.oracle import count_space, enumerate_optimal
from coupled360.problem import ProblemInstance

doc = json.loads((resources.files("coupled360") / "data" / "toy_solve.json").read_text())
inst = ProblemInstance.from_dict(doc)
print("assignments in the search space:", count_space(inst))

# %% [markdown]
# Branch-and-bound with the default configuration.  The trace callback gets one
# record per node action.

# %%
records = []
res = solve(inst, trace_fn=records.append)
print(f"status={res.status.value} objective={res.objective:.6f} nodes={res.nodes_explored}")
print("uplink levels:", res.selection.uplink)
print("downlink levels (tiles x GOPs):\n", res.selection.downlink[0])
print("breakdown:", {k: round(v, 4) for k, v in qoe_breakdown(inst, res.selection).items()})
for r in records[:5]:
    print("  ", r["action"], "bound", round(r["bound"], 4), "L", round(r["L"], 4))

# %%
oracle = enumerate_optimal(inst)
print(f"oracle objective {oracle.objective:.6f} after {oracle.evaluated} assignments")
assert abs(oracle.objective - res.objective) <= 1e-9

# %% [markdown]
# The two baselines fix the uplink split evenly.  They cannot beat the joint optimum.

# %%
for name, outcome in run_algorithms(inst).items():
    print(f"{name:22s} {outcome.objective:.6f} {outcome.flags}")
