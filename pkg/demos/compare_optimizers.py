"""Freeze-thaw BO against random search and Hyperband on a few tasks.

Each optimiser gets 100 unit steps on three prior-generated tasks with three
seeds.  Regret is normalised per task between the best and worst values any
run observed; ranks are averaged over (task, seed) cells.
"""

import numpy as np

from freezethaw import engine, evalkit
from freezethaw.tasks import sample_task

BUDGET = 100
algos = ("ifbo", "rs", "hyperband")
traces = {}
for k in range(3):
    oracle = engine.TabularOracle.from_task(sample_task(200 + k, 40, (1, 5), (20, 20), task_id=f"t{k}"))
    for seed in range(3):
        for a in algos:
            traces[(f"t{k}", seed, a)] = engine.run_algorithm(a, oracle, BUDGET, seed)
    print(f"task t{k} done")

table = evalkit.regret_table(traces, BUDGET)
ranks = evalkit.average_rank(table)
print("\nstep   " + "".join(f"{a:>24s}" for a in algos))
for step in (10, 25, 50, 100):
    cells = []
    for a in algos:
        r = np.mean([v[step - 1] for key, v in table.items() if key[2] == a])
        cells.append(f"regret {r:.3f} rank {ranks[a][step - 1]:.2f}")
    print(f"{step:>4d}   " + "".join(f"{c:>24s}" for c in cells))
