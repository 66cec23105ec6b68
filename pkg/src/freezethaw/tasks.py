"""Synthetic tasks and train/test context splits drawn from the curve prior."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import config_prior as cp
from .curves import ConfigurationError, TaskLatents, curve_matrix

MAX_CONFIGS = 1000
LOG10_ALPHA_RANGE = (-4.0, -1.0)


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """A fully materialised task: configs, noiseless curves and one noisy run each.

    ``curves[i, b - 1]`` is the noiseless value of config ``i`` after ``b``
    steps and ``observations`` the clipped noisy realisation the optimiser
    sees.  The metric is always maximised.
    """

    task_id: str
    seed: int | None
    prior: cp.TaskPrior
    configs: np.ndarray
    curves: np.ndarray
    observations: np.ndarray
    params: np.ndarray = field(repr=False)
    generator: dict = field(default_factory=dict, repr=False)  # sample_task arguments

    @property
    def latents(self) -> TaskLatents:
        return self.prior.latents

    @property
    def network(self):
        return self.prior.network

    @property
    def n_configs(self) -> int:
        return self.configs.shape[0]

    @property
    def dim(self) -> int:
        return self.configs.shape[1]

    @property
    def b_max(self) -> int:
        return self.curves.shape[1]

    direction = "maximize"


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng, None
    return np.random.default_rng(seed_or_rng), int(seed_or_rng)


def sample_task(
    rng,
    n_configs: int = 50,
    dim_range=(1, cp.M_MAX),
    b_max_range=(1, 1000),
    *,
    task_id: str = "task",
    rho: float = cp.DEFAULT_RHO,
    no_hps: bool = False,
    extra_cal: int = cp.DEFAULT_EXTRA_CAL,
) -> SyntheticTask:
    """Draw a task.  ``rng`` may be an integer seed or a Generator."""
    rng, seed = _rng(rng)
    if not 1 <= n_configs <= MAX_CONFIGS:
        raise ConfigurationError(f"n_configs must be in 1..{MAX_CONFIGS}, got {n_configs}")
    lo, hi = (int(d) for d in dim_range)
    if lo > hi or lo < 1 or hi > cp.M_MAX:
        raise ConfigurationError(f"dimension range must lie within 1..{cp.M_MAX}, got {dim_range}")
    m = int(rng.integers(lo, hi + 1))
    prior = cp.sample_task_prior(rng, m, b_max_range, extra_cal=extra_cal, rho=rho, no_hps=no_hps)
    configs = rng.uniform(size=(n_configs, m))
    params = cp.curve_params(prior, configs)
    b_max = prior.latents.b_max
    t = np.arange(1, b_max + 1) / b_max
    curves = curve_matrix(params, prior.latents.y0, t)
    noise = rng.standard_normal(curves.shape)
    obs = np.clip(curves + params[:, :1] * noise, 0.0, 1.0)
    gen = {"n_configs": n_configs, "dim_range": [lo, hi], "b_max_range": [int(v) for v in b_max_range]}
    gen.update(rho=rho, no_hps=no_hps, extra_cal=extra_cal)
    return SyntheticTask(task_id, seed, prior, configs, curves, obs, params, gen)


def allocate_budgets(weights, draws: int, rng: np.random.Generator, cap: int | None = None) -> np.ndarray:
    """Multinomial allocation of ``draws`` over ``weights``, capped per entry.

    Counts above ``cap`` are cut back and the overflow is redrawn among the
    entries still below the cap (uniformly if those carry no weight).
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
        raise ValueError("weights must be a nonnegative vector summing to 1")
    draws = int(draws)
    if draws < 0:
        raise ValueError("draws must be nonnegative")
    if cap is not None and draws > w.size * cap:
        raise ValueError(f"infeasible allocation: {draws} draws > {w.size} x cap {cap}")
    counts = rng.multinomial(draws, w / w.sum())
    if cap is None:
        return counts
    while True:
        over = np.maximum(counts - cap, 0)
        extra = int(over.sum())
        if extra == 0:
            return counts
        counts = counts - over
        open_ = counts < cap
        p = np.where(open_, w, 0.0)
        if p.sum() <= 0:
            p = open_.astype(float)
        counts = counts + rng.multinomial(extra, p / p.sum())


def dirichlet_weights(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet(alpha) draw that stays finite for tiny ``alpha``.

    Uses ``G_alpha = G_{alpha+1} U^{1/alpha}`` in log space.
    """
    logg = np.log(rng.gamma(alpha + 1.0, size=n)) + np.log(rng.uniform(size=n)) / alpha
    logg -= logg.max()
    g = np.exp(logg)
    return g / g.sum()


@dataclass(frozen=True)
class ContextSplit:
    train: list  # (config index, step, y)
    test: list  # (config index, step)
    dirichlet_alpha: float

    def frontiers(self, n_configs: int) -> np.ndarray:
        b = np.zeros(n_configs, dtype=int)
        for i, step, _ in self.train:
            b[i] = max(b[i], step)
        return b


def sample_context_split(
    task: SyntheticTask,
    train_size: int,
    test_size: int,
    rng: np.random.Generator,
    alpha: float | None = None,
) -> ContextSplit:
    """Train prefixes and extrapolation targets for one evaluation context.

    Both bags use the same Dirichlet weights over configurations.  A target
    for a config trained to ``b`` is uniform on ``{max(b, 1), ..., b_max}``.
    """
    n, b_max = task.n_configs, task.b_max
    if train_size < 0 or test_size < 0:
        raise ValueError("sizes must be nonnegative")
    if train_size + test_size > n * b_max:
        raise ValueError(f"infeasible split: {train_size}+{test_size} > {n}x{b_max}")
    if alpha is None:
        alpha = float(10 ** rng.uniform(*LOG10_ALPHA_RANGE))
    w = dirichlet_weights(n, alpha, rng)
    budgets = allocate_budgets(w, train_size, rng, cap=b_max)
    train = [(i, b, float(task.observations[i, b - 1])) for i in range(n) for b in range(1, budgets[i] + 1)]
    counts = rng.multinomial(test_size, w)
    test = []
    for i in np.flatnonzero(counts):
        lo = max(int(budgets[i]), 1)
        steps = rng.integers(lo, b_max + 1, size=counts[i])
        test.extend((int(i), int(b)) for b in steps)
    return ContextSplit(train, test, alpha)
