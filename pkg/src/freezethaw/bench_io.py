"""Tabular benchmark interchange: loading, normalisation and canonical writing.

JSON layout::

    {"name": ..., "b_max": 25, "direction": "maximize" | "minimize",
     "hps": [{"name": "lr", "low": 1e-5, "high": 10, "log": true}, ...],
     "metric_bounds": [low, high],          # optional for maximize, default [0, 1]
     "configs": [[raw hp values], ...],
     "curves": [[y at step 1..b_max], ...],
     "synthetic": {...}}                    # present for generated tasks

The CSV variant keeps everything except ``curves`` in a manifest next to the
data file (``<stem>.manifest.json``); the data file has one
``config_id,step,y`` row per observation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config_prior import M_MAX

DIRECTIONS = ("maximize", "minimize")
SIG_DIGITS = 9


class BenchmarkFormatError(ValueError):
    """Parse or validation failure with the offending location."""

    def __init__(self, message: str, path=None, row: int | None = None, column=None):
        self.path, self.row, self.column = path, row, column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class HyperParam:
    name: str
    low: float
    high: float
    log: bool = False

    def normalize(self, v):
        v = np.asarray(v, dtype=float)
        if self.log:
            return (np.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)


@dataclass(eq=False)
class TabularBenchmark:
    """Normalised benchmark: configs in [0,1]^m, curves in [0,1], maximised."""

    name: str
    hps: list
    raw_configs: np.ndarray
    raw_curves: np.ndarray
    direction: str = "maximize"
    metric_bounds: tuple = (0.0, 1.0)
    meta: dict = field(default_factory=dict)
    configs: np.ndarray = field(init=False)
    curves: np.ndarray = field(init=False)

    def __post_init__(self):
        self.raw_configs = np.atleast_2d(np.asarray(self.raw_configs, dtype=float))
        self.raw_curves = np.atleast_2d(np.asarray(self.raw_curves, dtype=float))
        self.configs = np.column_stack([hp.normalize(self.raw_configs[:, j]) for j, hp in enumerate(self.hps)])
        lo, hi = self.metric_bounds
        y = (self.raw_curves - lo) / (hi - lo)
        self.curves = 1.0 - y if self.direction == "minimize" else y

    @property
    def b_max(self) -> int:
        return self.curves.shape[1]

    @property
    def n_configs(self) -> int:
        return self.curves.shape[0]

    @property
    def dim(self) -> int:
        return self.configs.shape[1]

    # duck-typing with SyntheticTask for samplers, evaluators and the engine
    @property
    def observations(self) -> np.ndarray:
        return self.curves

    @property
    def task_id(self) -> str:
        return self.name

    def __eq__(self, other):
        if not isinstance(other, TabularBenchmark):
            return NotImplemented
        return (
            self.name == other.name
            and self.hps == other.hps
            and self.direction == other.direction
            and tuple(self.metric_bounds) == tuple(other.metric_bounds)
            and self.meta == other.meta
            and np.array_equal(self.raw_configs, other.raw_configs)
            and np.array_equal(self.raw_curves, other.raw_curves)
        )


# ---------------------------------------------------------------------------
# clamping


def clamp_unbounded_losses(curves, upper: float | None = None) -> np.ndarray:
    """Replace non-finite entries and entries above ``upper`` by ``upper``.

    The default ``upper`` is the median over configurations of the step-1
    values (non-finite ones ignored).
    """
    c = np.array(curves, dtype=float)
    if upper is None:
        first = c[:, 0]
        first = first[np.isfinite(first)]
        if first.size == 0:
            raise ValueError("no finite step-1 values to take the median of")
        upper = float(np.median(first))
    if not math.isfinite(upper):
        raise ValueError("upper must be finite")
    bad = ~np.isfinite(c) | (c > upper)
    c[bad] = upper
    return c


# ---------------------------------------------------------------------------
# loading


def _parse_header(doc: dict, path) -> tuple:
    for key in ("name", "b_max", "direction", "hps", "configs"):
        if key not in doc:
            raise BenchmarkFormatError(f"missing required field {key!r}", path)
    direction = doc["direction"]
    if direction not in DIRECTIONS:
        raise BenchmarkFormatError(f"direction must be one of {DIRECTIONS}, got {direction!r}", path, column="direction")
    hps = []
    for j, h in enumerate(doc["hps"]):
        for key in ("low", "high"):
            if key not in h or h[key] is None:
                raise BenchmarkFormatError(f"hyperparameter {h.get('name', j)!r} lacks bound {key!r}", path, column=j)
        hp = HyperParam(str(h.get("name", f"x{j}")), float(h["low"]), float(h["high"]), bool(h.get("log", False)))
        if not hp.high > hp.low or (hp.log and hp.low <= 0):
            raise BenchmarkFormatError(f"invalid bounds for {hp.name!r}: [{hp.low}, {hp.high}]", path, column=j)
        hps.append(hp)
    if not 1 <= len(hps) <= M_MAX:
        raise BenchmarkFormatError(f"need 1..{M_MAX} hyperparameters, got {len(hps)}", path, column="hps")
    bounds = doc.get("metric_bounds")
    if bounds is None:
        if direction == "minimize":
            raise BenchmarkFormatError("minimize benchmarks need metric_bounds", path, column="metric_bounds")
        bounds = (0.0, 1.0)
    bounds = (float(bounds[0]), float(bounds[1]))
    if not bounds[1] > bounds[0]:
        raise BenchmarkFormatError(f"invalid metric_bounds {bounds}", path, column="metric_bounds")
    configs = doc["configs"]
    for i, row in enumerate(configs):
        if len(row) != len(hps):
            raise BenchmarkFormatError(f"expected {len(hps)} values, got {len(row)}", path, row=i, column="configs")
        for j, (v, hp) in enumerate(zip(row, hps)):
            if not hp.low <= float(v) <= hp.high:
                raise BenchmarkFormatError(f"{hp.name}={v} outside [{hp.low}, {hp.high}]", path, row=i, column=j)
    return direction, hps, bounds, np.array(configs, dtype=float).reshape(len(configs), len(hps))


def _check_curves(curves: np.ndarray, bounds, path, clamp) -> np.ndarray:
    if clamp is not None:
        curves = clamp_unbounded_losses(curves, None if clamp == "auto" else float(clamp))
    lo, hi = bounds
    bad = np.argwhere(~np.isfinite(curves) | (curves < lo) | (curves > hi))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise BenchmarkFormatError(f"value {curves[i, j]} outside metric bounds [{lo}, {hi}]", path, row=i, column=j + 1)
    return curves


def _from_doc(doc: dict, curves, path, clamp) -> TabularBenchmark:
    direction, hps, bounds, configs = _parse_header(doc, path)
    b_max = int(doc["b_max"])
    if curves.shape != (configs.shape[0], b_max):
        raise BenchmarkFormatError(f"curve matrix {curves.shape} != ({configs.shape[0]}, {b_max})", path)
    curves = _check_curves(curves, bounds, path, clamp)
    meta = {k: doc[k] for k in ("synthetic",) if k in doc}
    return TabularBenchmark(str(doc["name"]), hps, configs, curves, direction, bounds, meta)


def _load_json(path: Path, clamp) -> TabularBenchmark:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BenchmarkFormatError(exc.msg, path, row=exc.lineno, column=exc.colno) from exc
    if "curves" not in doc:
        raise BenchmarkFormatError("missing required field 'curves'", path)
    rows = doc["curves"]
    width = int(doc.get("b_max", 0))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise BenchmarkFormatError(f"non-rectangular curves: {len(r)} values, b_max={width}", path, row=i)
    curves = np.array([[np.nan if v is None else float(v) for v in r] for r in rows], dtype=float)
    return _from_doc(doc, curves.reshape(len(rows), width), path, clamp)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _load_csv(path: Path, clamp) -> TabularBenchmark:
    mpath = manifest_path(path)
    if not mpath.exists():
        raise BenchmarkFormatError(f"manifest {mpath.name} not found", path)
    doc = json.loads(mpath.read_text())
    n = len(doc.get("configs", []))
    b_max = int(doc.get("b_max", 0))
    curves = np.full((n, b_max), np.nan)
    seen = np.zeros((n, b_max), dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["config_id", "step", "y"]:
            raise BenchmarkFormatError("header must be config_id,step,y", path, row=1)
        for lineno, r in enumerate(reader, start=2):
            if len(r) != 3:
                raise BenchmarkFormatError(f"expected 3 fields, got {len(r)}", path, row=lineno)
            try:
                i, b, y = int(r[0]), int(r[1]), float(r[2])
            except ValueError as exc:
                raise BenchmarkFormatError(str(exc), path, row=lineno) from exc
            if not 0 <= i < n:
                raise BenchmarkFormatError(f"config_id {i} outside 0..{n - 1}", path, row=lineno, column="config_id")
            if not 1 <= b <= b_max:
                raise BenchmarkFormatError(f"step {b} outside 1..{b_max}", path, row=lineno, column="step")
            if seen[i, b - 1]:
                raise BenchmarkFormatError(f"duplicate entry for config {i} step {b}", path, row=lineno)
            seen[i, b - 1] = True
            curves[i, b - 1] = y
    if not seen.all():
        i, b = (int(v) for v in np.argwhere(~seen)[0])
        raise BenchmarkFormatError(f"non-rectangular data: config {i} lacks step {b + 1}", path)
    return _from_doc(doc, curves, path, clamp)


def load_benchmark(path, schema: str | None = None, clamp=None) -> TabularBenchmark:
    """Load a JSON or CSV benchmark; ``schema`` defaults to the file suffix.

    ``clamp`` applies :func:`clamp_unbounded_losses` to the raw curves before
    validation: ``"auto"`` uses the step-1 median, a number is the bound.
    """
    path = Path(path)
    schema = schema or path.suffix.lstrip(".").lower()
    if schema == "json":
        return _load_json(path, clamp)
    if schema == "csv":
        return _load_csv(path, clamp)
    raise BenchmarkFormatError(f"unknown schema {schema!r}; use json or csv", path)


# ---------------------------------------------------------------------------
# writing


def _round(x):
    """Recursively round floats to ``SIG_DIGITS`` significant digits."""
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, np.ndarray):
        return _round(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not math.isfinite(x) else float(f"{x:.{SIG_DIGITS}g}")
    return x


def synthetic_meta(task) -> dict:
    lat = task.latents
    return {
        "task_id": task.task_id,
        "seed": task.seed,
        "generator": task.generator,
        "latents": {"u1": lat.u1, "u2": lat.u2, "u3": lat.u3, "b_max": lat.b_max, "y0": lat.y0, "y_max": lat.y_max},
    }


def _doc(obj) -> dict:
    if isinstance(obj, TabularBenchmark):
        doc = {
            "name": obj.name,
            "b_max": obj.b_max,
            "direction": obj.direction,
            "hps": [{"name": h.name, "low": h.low, "high": h.high, "log": h.log} for h in obj.hps],
            "metric_bounds": list(obj.metric_bounds),
            "configs": obj.raw_configs,
            "curves": obj.raw_curves,
        }
        doc.update(obj.meta)
        return doc
    # SyntheticTask: the optimiser-facing noisy curves on the unit cube
    return {
        "name": obj.task_id,
        "b_max": obj.b_max,
        "direction": "maximize",
        "hps": [{"name": f"x{j}", "low": 0.0, "high": 1.0, "log": False} for j in range(obj.dim)],
        "metric_bounds": [0.0, 1.0],
        "configs": obj.configs,
        "curves": obj.observations,
        "synthetic": synthetic_meta(obj),
    }


def dumps_benchmark(obj) -> str:
    return json.dumps(_round(_doc(obj)), sort_keys=True, separators=(",", ":")) + "\n"


def write_benchmark(obj, path) -> Path:
    """Write canonical JSON (sorted keys, 9 significant digits)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_benchmark(obj))
    return path


def write_benchmark_csv(obj, path) -> tuple:
    """CSV variant: ``config_id,step,y`` rows plus the manifest."""
    doc = _round(_doc(obj))
    curves = doc.pop("curves")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mpath = manifest_path(path)
    mpath.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_id", "step", "y"])
        for i, row in enumerate(curves):
            for b, y in enumerate(row, start=1):
                w.writerow([i, b, repr(y)])
    return path, mpath


def regenerate_task(bench: TabularBenchmark):
    """Rebuild the :class:`SyntheticTask` a generated benchmark came from."""
    from .tasks import sample_task

    syn = bench.meta.get("synthetic")
    if not syn or syn.get("seed") is None:
        raise ValueError("benchmark carries no synthetic seed")
    g = syn["generator"]
    return sample_task(
        syn["seed"],
        g["n_configs"],
        tuple(g["dim_range"]),
        tuple(g["b_max_range"]),
        task_id=syn["task_id"],
        rho=g["rho"],
        no_hps=g["no_hps"],
        extra_cal=g["extra_cal"],
    )
