"""Multi-fidelity acquisition functions.

Every variant scores each candidate ``(lambda, b_lambda)`` by the surrogate's
predictive distribution at a future step ``min(b_lambda + h, b_max)`` and
picks the argmax (lowest index on ties).  Variants differ in the base score
(probability or expected improvement), in how ``h`` is chosen and in the
improvement threshold.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .surrogate import History, ppd_exceedance, ppd_expected_improvement

BASES = ("PI", "EI")
HORIZONS = ("one-step", "at-max", "fixed", "random")
THRESHOLDS = ("incumbent", "random-scaled", "fixed")
LOG10_TAU_RANGE = (-4.0, -1.0)


@dataclass(frozen=True)
class AcquisitionSpec:
    base: str = "PI"
    horizon: str = "random"
    threshold: str = "random-scaled"
    h: int | None = None  # for horizon="fixed"
    tau: float | None = None  # for threshold="fixed"
    name: str = ""

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"base must be one of {BASES}")
        if self.horizon not in HORIZONS:
            raise ValueError(f"horizon must be one of {HORIZONS}")
        if self.threshold not in THRESHOLDS:
            raise ValueError(f"threshold must be one of {THRESHOLDS}")
        if self.horizon == "fixed" and (self.h is None or self.h < 1):
            raise ValueError("fixed horizon needs h >= 1")
        if self.threshold == "fixed" and self.tau is None:
            raise ValueError("fixed threshold needs tau")


_NAMED = {
    "mfpi-random": AcquisitionSpec("PI", "random", "random-scaled", name="mfpi-random"),
    "ei-one-step": AcquisitionSpec("EI", "one-step", "incumbent", name="ei-one-step"),
    "ei-max": AcquisitionSpec("EI", "at-max", "incumbent", name="ei-max"),
    "pi-max": AcquisitionSpec("PI", "at-max", "incumbent", name="pi-max"),
    "pi-random-horizon": AcquisitionSpec("PI", "random", "incumbent", name="pi-random-horizon"),
    "pi-max-random-t": AcquisitionSpec("PI", "at-max", "random-scaled", name="pi-max-random-t"),
}

# the seven-variant portfolio; the fixed-horizon MFPI uses one step
PORTFOLIO = ("mfpi-random", "ei-one-step", "ei-max", "pi-max", "mfpi-h1", "pi-random-horizon", "pi-max-random-t")


def acquisition_names() -> list[str]:
    return [*_NAMED, "mfpi-h<k>"]


def get_spec(name: str) -> AcquisitionSpec:
    """Look up a variant by name (``mfpi-h<k>`` for any positive ``k``)."""
    if name in _NAMED:
        return _NAMED[name]
    m = re.fullmatch(r"mfpi-h(\d+)", name)
    if m and int(m.group(1)) >= 1:
        return AcquisitionSpec("PI", "fixed", "incumbent", h=int(m.group(1)), name=name)
    raise KeyError(f"unknown acquisition {name!r}; known: {', '.join(acquisition_names())}")


def mfpi_threshold(f_best: float, tau: float) -> float:
    """``f_best + 10^tau (1 - f_best)``."""
    return f_best + 10.0**tau * (1.0 - f_best)


def query_step(b_lambda: int, h: int, b_max: int) -> int:
    return min(b_lambda + h, b_max)


def draw_horizon(rng: np.random.Generator, b_max: int) -> int:
    return int(rng.integers(1, b_max + 1))


def draw_tau(rng: np.random.Generator) -> float:
    return float(rng.uniform(*LOG10_TAU_RANGE))


def _resolve(spec: AcquisitionSpec, f_best: float, b_max: int, rng):
    """Horizon (None means 'query at b_max') and threshold for one call."""
    if spec.horizon == "one-step":
        h = 1
    elif spec.horizon == "fixed":
        h = spec.h
    elif spec.horizon == "random":
        h = draw_horizon(rng, b_max)
    else:
        h = None
    if spec.threshold == "incumbent":
        T = f_best
    elif spec.threshold == "fixed":
        T = mfpi_threshold(f_best, spec.tau)
    else:
        T = mfpi_threshold(f_best, draw_tau(rng))
    return h, T


def _check(candidates, b_max):
    if not candidates:
        raise ValueError("no candidates to choose from")
    for _, b in candidates:
        if not 0 <= b < b_max:
            raise ValueError(f"candidate frontier {b} must lie in [0, b_max)")


def score_candidates(spec: AcquisitionSpec, candidates, surrogate, history, b_max: int, h, T) -> np.ndarray:
    """Scores for fixed ``h`` (None for ``b_max``) and threshold ``T``."""
    steps = [b_max if h is None else query_step(b, h, b_max) for _, b in candidates]
    ppds = surrogate(history, [(lam, s) for (lam, _), s in zip(candidates, steps)])
    if spec.base == "PI":
        return np.array([ppd_exceedance(p, T) for p in ppds])
    return np.array([ppd_expected_improvement(p, T) for p in ppds])


def generalized_af(spec: AcquisitionSpec, candidates, surrogate, history, b_max: int, rng) -> int:
    """Index of the candidate maximising the acquisition ``spec``.

    ``surrogate(history, queries)`` must return one predictive distribution
    per ``(lambda, step)`` query.  Random horizon and threshold are drawn
    once per call.
    """
    _check(candidates, b_max)
    history = history if isinstance(history, History) else History(history)
    h, T = _resolve(spec, history.best(), b_max, rng)
    scores = score_candidates(spec, candidates, surrogate, history, b_max, h, T)
    return int(np.argmax(scores))


def mfpi_random(candidates, surrogate, history, b_max: int, rng) -> int:
    """MFPI-random: probability of beating a randomly scaled threshold at a random horizon."""
    return generalized_af(_NAMED["mfpi-random"], candidates, surrogate, history, b_max, rng)
