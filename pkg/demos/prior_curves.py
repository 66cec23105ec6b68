"""What the curve prior produces.

Draws a few synthetic tasks and prints, for each, the task latents and a
coarse view of five learning curves.  Curves start at y0, stay inside
[0, y_max] and usually rise; a negative saturation slope lets some of them
bend down after x_sat.
"""

import numpy as np

from freezethaw.tasks import sample_task

rng = np.random.default_rng(0)

for k in range(3):
    task = sample_task(rng, n_configs=50, dim_range=(2, 4), b_max_range=(20, 60), task_id=f"demo-{k}")
    lat = task.latents
    print(f"{task.task_id}: m={task.dim} b_max={task.b_max} y0={lat.y0:.3f} y_max={lat.y_max:.3f}")
    marks = np.unique(np.linspace(0, task.b_max - 1, 6).astype(int))
    print("   steps " + " ".join(f"{b + 1:>6d}" for b in marks))
    for i in range(5):
        row = task.observations[i, marks]
        print(f"   cfg {i:<2d} " + " ".join(f"{v:6.3f}" for v in row))
    best = task.observations[:, -1].argmax()
    print(f"   best final value {task.observations[best, -1]:.3f} (config {best})\n")
