"""
One mission, start to finish
============================

Three robots sweep the arena in formation, then switch to active sensing:
each robot scores nearby candidate points by expected information gain and
the team goes wherever the best proposal points.  Here the mission is
shortened so the demo runs in well under a minute.
"""
import numpy as np

from swarmsense.experiment import format_table
from swarmsense.scenarios import lab_scenario
from swarmsense.simulation import MissionConfig, run_mission

cfg = MissionConfig(mode="cpp-as", n_particles=300, cell_size=6.3, time_limit=900.0)
rec = run_mission(lab_scenario(seed=1), cfg)

for t, old, new, why in rec.mode_changes:
    print(f"t = {t:7.1f} s  {old} -> {new}  ({why})")
print(f"{rec.epochs} measurement epochs, {len(rec.collisions)} collisions, "
      f"closest approach {rec.min_gap:.2f} m")

times = np.arange(0, rec.end_time + 1, 150.0)
curve = rec.mse_curve(times)
print(format_table(("t", "mse"), list(zip(times, curve))), end="")
print(format_table(("metric", "value"), sorted(rec.summary.items())), end="")
