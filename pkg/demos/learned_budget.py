"""
Learning how many tokens to keep
================================

Twenty strong tokens hide among eighty noise tokens.  A router learns to
score them while a single continuous budget ``k`` is pulled down by a
linear per-token cost and up by the signal it would lose.  ``k`` starts at
50 and settles near the number of strong tokens.
"""

from pathlib import Path

from shiva.experiments.budget_dynamics import run_budget_dynamics
from shiva.experiments.config import BudgetDynamicsConfig

report = run_budget_dynamics(BudgetDynamicsConfig(seed=0))
k = report.series["k"]
acc = report.series["accuracy"]

# the budget is frozen during router warmup, then adapts
for step in (0, 99, 150, 200, 300, 400, 600, len(k) - 1):
    print(f"step {step:4d}   k = {k[step]:6.2f}   strong tokens in top 20 = {acc[step]:.2f}")

print("summary:", {key: round(v, 3) for key, v in report.summary.items()})

out = report.write(Path("runs") / "demo_learned_budget")
print("trajectory written to", out / "series.csv", "and", out / "plot.svg")
