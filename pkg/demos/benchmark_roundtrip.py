"""Bringing your own tabular benchmark.

Builds a small minimisation benchmark (validation loss, lower is better) in
memory, writes it as canonical JSON and as CSV plus manifest, loads it back
and runs random search on it.  Loading normalises hyperparameters to [0, 1]
(log scale where flagged) and flips the metric so larger is better.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from freezethaw import bench_io, engine

rng = np.random.default_rng(3)
lrs = 10 ** rng.uniform(-4, -1, size=12)
widths = rng.integers(16, 257, size=12)
steps = np.arange(1, 16)
loss = 2.5 * np.exp(-steps[None, :] * lrs[:, None] * 20) + 0.3 + 50 / widths[:, None] / 100
doc = {
    "name": "toy-loss",
    "b_max": len(steps),
    "direction": "minimize",
    "metric_bounds": [0.0, 3.0],
    "hps": [{"name": "lr", "low": 1e-4, "high": 1e-1, "log": True}, {"name": "width", "low": 16, "high": 256}],
    "configs": [[float(a), int(b)] for a, b in zip(lrs, widths)],
    "curves": loss.round(6).tolist(),
}

with tempfile.TemporaryDirectory() as tmp:
    src = Path(tmp) / "toy.json"
    src.write_text(json.dumps(doc))
    bench = bench_io.load_benchmark(src)
    print(f"loaded {bench.name}: {bench.n_configs} configs x {bench.b_max} steps, dim {bench.dim}")
    print("normalised configs (first 3):\n", bench.configs[:3].round(3))
    # writing rounds to 9 significant digits; from then on the files are a fixed point
    canon = bench_io.load_benchmark(bench_io.write_benchmark(bench, Path(tmp) / "canon.json"))
    print("max change from rounding:", float(np.abs(canon.curves - bench.curves).max()))
    csv_path, manifest = bench_io.write_benchmark_csv(canon, Path(tmp) / "toy.csv")
    print("CSV round trip equal:", bench_io.load_benchmark(csv_path) == canon)

    trace = engine.run_random_search(engine.TabularOracle.from_task(bench), B=60, seed=0)
    cid, step, y = trace.best()
    raw = bench.raw_curves[cid, step - 1]
    print(f"random search best: config {cid} at step {step}, score {y:.3f} (loss {raw:.3f})")
