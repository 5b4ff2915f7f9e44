# %% [markdown]
# # A small trace-driven comparison
#
# The bundled experiment has ten users and ten GOPs per trace and takes a few
# minutes.  This script shrinks it so it finishes in seconds and prints the
# mean QoE table.  `coupled360 simulate` runs the full version.

# %%
import json
from importlib import resources

from coupled360.sim import ExperimentConfig, run_experiment

data = resources.files("coupled360") / "data"
doc = json.loads((data / "default_experiment.json").read_text())
doc.update(users=3, gops=4, noise_seeds=3)
config = ExperimentConfig.from_dict(doc, base_dir=str(data))

# %%
report = run_experiment(config)
print(f"{'trace':8s} {'knowledge':10s} {'algorithm':22s} {'QoE':>9s} {'stall s':>8s}")
for s in report.summary:
    print(f"{s['trace']:8s} {s['knowledge']:10s} {s['algorithm']:22s} "
          f"{s['mean_total_qoe']:9.3f} {s['mean_stall_s']:8.2f}")

# %% [markdown]
# With so few users the ordering can wobble.  Stalls are planned per tile but
# scored against the aggregate true bandwidth.
