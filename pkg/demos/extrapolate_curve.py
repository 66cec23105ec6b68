"""Extrapolating a partially observed curve.

We watch one configuration for a few steps, condition the surrogate on those
steps (plus short prefixes of a few neighbours) and compare its predictive
median and 90% interval at later steps with what the task actually does.
The interval narrows as more of the curve is revealed.
"""

import numpy as np

from freezethaw.surrogate import History, InferenceConfig, TaskMeta, infer, ppd_quantile
from freezethaw.tasks import sample_task

task = sample_task(7, n_configs=30, dim_range=(2, 2), b_max_range=(40, 40))
meta = TaskMeta(task.dim, task.b_max, task.configs)
cfg = InferenceConfig(n_samples=256, seed=1)
target = 0
later = [15, 20, 30, 40]

for seen in (2, 5, 10):
    entries = [(task.configs[target], b, task.observations[target, b - 1]) for b in range(1, seen + 1)]
    for j in range(1, 6):
        entries += [(task.configs[j], b, task.observations[j, b - 1]) for b in range(1, 4)]
    res = infer(History(entries), [(task.configs[target], b) for b in later], meta, cfg)
    print(f"observed steps 1..{seen}  (ESS {res.ess:.1f})")
    for b, ppd in zip(later, res.ppds):
        lo, med, hi = (ppd_quantile(ppd, q) for q in (0.05, 0.5, 0.95))
        truth = task.observations[target, b - 1]
        flag = "" if lo <= truth <= hi else "  <- outside"
        print(f"   step {b:>2d}: median {med:.3f}  90% [{lo:.3f}, {hi:.3f}]  truth {truth:.3f}{flag}")
    print()
