"""
Planning a coverage tour
========================

The arena is cut into square cells, cells are grouped into blocks, a
minimum spanning tree joins the blocks and the tour walks around that tree.
Coarser cells give shorter tours; the budget search picks the finest cell
size whose predicted traversal time still fits.
"""
import numpy as np

from swarmsense.coverage import cell_size_ladder, plan_coverage, select_cell_size
from swarmsense.scenarios import lab_scenario

scenario = lab_scenario()
plan = plan_coverage(scenario, 3.15)

# The occupancy grid: 1 marks cells touched by an obstacle.
print(plan.grid.to_text())
print(f"{len(plan.blocks)} blocks, {len(plan.waypoints)} waypoints, "
      f"tour {plan.length:.1f} m, predicted {plan.predicted_time:.0f} s at 0.16 m/s")

# Finer cells cost more time.
for cs in cell_size_ladder(scenario.arena)[:6]:
    p = plan_coverage(scenario, cs, max_block_cells=1)
    print(f"cell {cs:5.2f} m -> {p.predicted_time:7.0f} s")

# Ask for a budget and let the search choose.
for budget in (800.0, 1500.0, 4000.0):
    cs, p, over = select_cell_size(scenario, budget)
    print(f"budget {budget:6.0f} s: cell {cs:.2f} m, predicted {p.predicted_time:.0f} s, over budget {over}")

np.set_printoptions(precision=2, suppress=True)
print("first waypoints:\n", plan.waypoints[:6])
