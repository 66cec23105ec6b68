"""Evaluation protocols: predictive quality against context size, and HPO regret and ranks."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .surrogate import History, InferenceConfig, TaskMeta, infer, ppd_log_likelihood, ppd_mean
from .tasks import sample_context_split

log = logging.getLogger(__name__)

PREDICTION_HEADER = ("task", "context", "loglik_median", "mse_median", "wall_ms")
REGRET_HEADER = ("step", "algorithm", "mean_regret", "average_rank")


@dataclass(frozen=True)
class PredictionRow:
    task: str
    context: int
    loglik_median: float
    mse_median: float
    wall_ms: float


@dataclass
class PredictionReport:
    rows: list
    skipped: int = 0

    def summary(self) -> dict:
        """Median over tasks of the per-task medians, per context size."""
        out = {}
        for ctx in sorted({r.context for r in self.rows}):
            rs = [r for r in self.rows if r.context == ctx]
            out[ctx] = (
                float(np.median([r.loglik_median for r in rs])),
                float(np.median([r.mse_median for r in rs])),
            )
        return out


def _mc_predictor(cfg: InferenceConfig):
    def predict(history, queries, meta):
        return infer(history, queries, meta, cfg).ppds

    return predict


def eval_prediction_quality(
    tasks, surrogate, context_sizes, rng: np.random.Generator, test_size: int = 50
) -> PredictionReport:
    """Score predictive log-likelihood and squared error of the mean.

    ``surrogate`` is an :class:`InferenceConfig` or a callable
    ``(history, queries, task_meta) -> list of Ppd``.  Every task gets a fresh
    context split per size; the task's own noisy observation is the target.
    """
    predict = _mc_predictor(surrogate) if isinstance(surrogate, InferenceConfig) else surrogate
    rows, skipped = [], 0
    for task in tasks:
        for ctx in context_sizes:
            try:
                split = sample_context_split(task, int(ctx), test_size, rng)
            except ValueError as exc:
                log.warning("skipping task %s at context %s: %s", task.task_id, ctx, exc)
                skipped += 1
                continue
            history = History([(task.configs[i], b, y) for i, b, y in split.train])
            queries = [(task.configs[i], b) for i, b in split.test]
            meta = TaskMeta(task.dim, task.b_max, task.configs)
            t0 = time.perf_counter()
            ppds = predict(history, queries, meta)
            wall = (time.perf_counter() - t0) * 1000.0
            truth = np.array([task.observations[i, b - 1] for i, b in split.test])
            ll = [ppd_log_likelihood(p, y) for p, y in zip(ppds, truth)]
            se = [(ppd_mean(p) - y) ** 2 for p, y in zip(ppds, truth)]
            rows.append(PredictionRow(str(task.task_id), int(ctx), float(np.median(ll)), float(np.median(se)), wall))
    return PredictionReport(rows, skipped)


def write_prediction_report(report: PredictionReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for r in report.rows:
            w.writerow([r.task, r.context, f"{r.loglik_median:.9g}", f"{r.mse_median:.9g}", f"{r.wall_ms:.3f}"])
    return path


# ---------------------------------------------------------------------------
# HPO metrics


def _incumbent_errors(trace) -> np.ndarray:
    return 1.0 - np.array([s.incumbent for s in trace.steps])


def reference_errors(traces) -> tuple:
    """Best (lowest) and worst (highest) error observed by any of ``traces``."""
    errs = np.concatenate([1.0 - np.array([s.y for s in t.steps]) for t in traces])
    return float(errs.min()), float(errs.max())


def normalized_regret(trace, best_ref: float, worst_ref: float) -> np.ndarray:
    """Incumbent error rescaled so ``best_ref`` maps to 0 and ``worst_ref`` to 1.

    References are errors (``1 - y``); the series is clipped to [0, 1].
    """
    if not worst_ref > best_ref:
        raise ValueError(f"need worst_ref > best_ref, got {worst_ref} <= {best_ref}")
    r = (_incumbent_errors(trace) - best_ref) / (worst_ref - best_ref)
    return np.clip(r, 0.0, 1.0)


def regret_table(traces: dict, budget: int | None = None) -> dict:
    """Normalised regret per ``(task, seed, algorithm)`` key.

    References are pooled per task over all algorithms and seeds.  Series
    shorter than ``budget`` (truncated runs) are padded with their last value.
    """
    by_task: dict = {}
    for (task, seed, algo), tr in traces.items():
        by_task.setdefault(task, []).append(tr)
    refs = {task: reference_errors(trs) for task, trs in by_task.items()}
    out = {}
    for (task, seed, algo), tr in traces.items():
        best, worst = refs[task]
        if worst > best:
            r = normalized_regret(tr, best, worst)
        else:
            r = np.zeros(len(tr.steps))
        if budget is not None and len(r) < budget:
            r = np.concatenate([r, np.full(budget - len(r), r[-1] if len(r) else 1.0)])
        out[(task, seed, algo)] = r[:budget] if budget else r
    return out


def average_rank(table: dict) -> dict:
    """Mean fractional rank per algorithm and step (rank 1 = lowest value).

    ``table`` maps ``(task, seed, algorithm)`` to equal-length series.
    """
    tasks = sorted({k[0] for k in table})
    seeds = sorted({k[1] for k in table})
    algos = sorted({k[2] for k in table})
    missing = [(t, s, a) for t in tasks for s in seeds for a in algos if (t, s, a) not in table]
    if missing:
        raise ValueError(f"missing (task, seed, algorithm) cells: {missing}")
    n_steps = min(len(v) for v in table.values())
    ranks = np.zeros((len(algos), n_steps))
    cells = 0
    for t in tasks:
        for s in seeds:
            block = np.stack([np.asarray(table[(t, s, a)][:n_steps], dtype=float) for a in algos])
            ranks += stats.rankdata(block, method="average", axis=0)
            cells += 1
    return {a: ranks[i] / cells for i, a in enumerate(algos)}


def write_regret_report(table: dict, path) -> Path:
    """Per step and algorithm: mean normalised regret and average rank."""
    ranks = average_rank(table)
    algos = sorted(ranks)
    n_steps = len(next(iter(ranks.values())))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGRET_HEADER)
        for step in range(n_steps):
            for a in algos:
                vals = [v[step] for k, v in table.items() if k[2] == a]
                w.writerow([step + 1, a, f"{np.mean(vals):.9g}", f"{ranks[a][step]:.9g}"])
    return path
