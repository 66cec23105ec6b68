"""Parametric learning-curve model.

A curve is ``y0 + (y_inf - y0) * sum_k w_k f_k(x_k(t))`` where each ``f_k`` is a
bounded monotone growth function on a piecewise-linear time axis that may bend
(saturate) or fold back (diverge) after ``x_sat``.  Observations add Gaussian
noise clipped to ``[0, 1]``.

All functions broadcast over numpy arrays so the surrogate can evaluate many
prior samples at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

K = 4
BASIS_NAMES = ("pow", "weibull", "logpow", "hill")

SIGMA_MIN = 1e-6
SIGMA_MAX = 0.25

# rate solve is undefined at the corners of the anchor square
_X_EPS = 1e-6
_Y_EPS = 1e-9


class ConfigurationError(ValueError):
    """Raised for invalid sampler or model configuration."""


@dataclass(frozen=True)
class BasisParams:
    alpha: float
    x_sat: float
    y_sat: float
    r_sat: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.x_sat <= 1.0:
            raise ConfigurationError(f"x_sat must lie in [0, 1], got {self.x_sat}")
        if not 0.0 <= self.y_sat <= 1.0:
            raise ConfigurationError(f"y_sat must lie in [0, 1], got {self.y_sat}")
        if not np.isfinite(self.r_sat):
            raise ConfigurationError("r_sat must be finite")


@dataclass(frozen=True)
class CurveConfig:
    """Per-configuration curve parameters plus observation noise."""

    y_inf: float
    weights: tuple
    basis: tuple
    sigma: float

    def __post_init__(self):
        if len(self.weights) != K or len(self.basis) != K:
            raise ConfigurationError(f"expected {K} basis curves")
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) < 0:
            raise ConfigurationError("weights must be nonnegative and sum to 1")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")

    def as_array(self) -> np.ndarray:
        """Flatten to the 22-vector layout used by :mod:`freezethaw.config_prior`."""
        out = [self.sigma, self.y_inf, *self.weights]
        for p in self.basis:
            out.extend([p.alpha, p.x_sat, p.y_sat, p.r_sat])
        return np.asarray(out, dtype=float)

    @classmethod
    def from_array(cls, vec) -> "CurveConfig":
        vec = np.asarray(vec, dtype=float)
        basis = tuple(BasisParams(*map(float, vec[6 + 4 * k : 10 + 4 * k])) for k in range(K))
        return cls(
            y_inf=float(vec[1]),
            weights=tuple(float(w) for w in vec[2:6]),
            basis=basis,
            sigma=float(vec[0]),
        )


@dataclass(frozen=True)
class TaskLatents:
    u1: float
    u2: float
    u3: float
    b_max: int
    y0: float = field(init=False)
    y_max: float = field(init=False)

    def __post_init__(self):
        y0, y_max = latent_bounds(self.u1, self.u2, self.u3)
        object.__setattr__(self, "y0", float(y0))
        object.__setattr__(self, "y_max", float(y_max))
        if self.b_max < 1:
            raise ConfigurationError("b_max must be >= 1")


def latent_bounds(u1, u2, u3):
    """Map the three task uniforms to ``(y0, y_max)``."""
    u1, u2, u3 = np.asarray(u1), np.asarray(u2), np.asarray(u3)
    y0 = np.minimum(u1, u2)
    y_max = np.where(u3 <= 0.25, np.maximum(u1, u2), 1.0)
    return y0, y_max


def sample_log_uniform_int(rng: np.random.Generator, low: int, high: int) -> int:
    if low > high:
        raise ConfigurationError(f"empty integer range [{low}, {high}]")
    if low < 1:
        raise ConfigurationError("log-uniform range must start at >= 1")
    v = np.exp(rng.uniform(np.log(low), np.log(high)))
    return int(min(max(round(v), low), high))


def sample_task_latents(rng: np.random.Generator, b_max_range=(1, 1000)) -> TaskLatents:
    lo, hi = (int(b) for b in b_max_range)
    if lo > hi:
        raise ConfigurationError(f"empty b_max range [{lo}, {hi}]")
    if lo < 1 or hi > 1000:
        raise ConfigurationError("b_max range must lie within [1, 1000]")
    u1, u2, u3 = rng.uniform(size=3)
    return TaskLatents(float(u1), float(u2), float(u3), sample_log_uniform_int(rng, lo, hi))


def saturation_transform(t, x_sat, r_sat):
    """Time axis that switches to slope ``r_sat`` after ``x_sat``."""
    t = np.asarray(t, dtype=float)
    out = np.where(t <= x_sat, t, r_sat * (t - x_sat) + x_sat)
    return out if out.ndim else float(out)


def _log_expm1(z):
    """``log(exp(z) - 1)`` for ``z > 0`` without overflow."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(z > 1.0, z + np.log1p(-np.exp(-np.maximum(z, 1.0))), np.log(np.expm1(np.minimum(z, 1.0))))


def basis_log_rate(k: int, alpha, x_sat, y_sat):
    """Log of the rate that makes family ``k`` pass through ``(x_sat, y_sat)``.

    Working with the log keeps the anchor exact where the rate itself would
    overflow (small ``alpha`` with ``y_sat`` near 1).
    """
    alpha = np.asarray(alpha, dtype=float)
    lxs = np.log(np.maximum(np.asarray(x_sat, dtype=float), _X_EPS))
    ys = np.clip(np.asarray(y_sat, dtype=float), _Y_EPS, 1.0 - _Y_EPS)
    L = -np.log1p(-ys)
    if k == 0:
        # 1 - (1 + b x)^-a
        return _log_expm1(L / alpha) - lxs
    if k == 1:
        # 1 - exp(-b x^a)
        return np.log(L) - alpha * lxs
    if k == 2:
        # 1 - (1 + log(1 + b x))^-a
        with np.errstate(over="ignore"):
            return _log_expm1(np.expm1(L / alpha)) - lxs
    if k == 3:
        # (b x)^a / (1 + (b x)^a)
        return (np.log(ys) - np.log1p(-ys)) / alpha - lxs
    raise IndexError(f"basis index must be in 0..{K - 1}, got {k}")


def basis_rate(k: int, alpha, x_sat, y_sat):
    """Rate that makes family ``k`` pass through ``(x_sat, y_sat)`` (may be inf)."""
    with np.errstate(over="ignore"):
        return np.exp(basis_log_rate(k, alpha, x_sat, y_sat))


def growth(k: int, x, alpha, log_rate):
    """Closed-form growth function of family ``k``; 0 for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        lx = np.log(np.where(x > 0, x, 1.0))
        if k == 0:
            v = -np.expm1(-alpha * np.logaddexp(0.0, log_rate + lx))
        elif k == 1:
            v = -np.expm1(-np.exp(log_rate + alpha * lx))
        elif k == 2:
            v = -np.expm1(-alpha * np.log1p(np.logaddexp(0.0, log_rate + lx)))
        elif k == 3:
            v = special.expit(alpha * (log_rate + lx))
        else:
            raise IndexError(f"basis index must be in 0..{K - 1}, got {k}")
    v = np.where(x > 0, v, 0.0)
    v = np.nan_to_num(v, nan=0.0)
    out = np.clip(v, 0.0, 1.0)
    return out if out.ndim else float(out)


def basis_value(k: int, x, params: BasisParams | None = None, *, alpha=None, x_sat=None, y_sat=None):
    """Value of basis family ``k`` at the (already transformed) coordinate ``x``.

    Families, with rate ``b`` solved so that ``f(x_sat) = y_sat``:

    ====  =========  ================================
    k     name       f(x)
    ====  =========  ================================
    0     pow        1 - (1 + b x)^-alpha
    1     weibull    1 - exp(-b x^alpha)
    2     logpow     1 - (1 + log(1 + b x))^-alpha
    3     hill       (b x)^alpha / (1 + (b x)^alpha)
    ====  =========  ================================
    """
    if params is not None:
        alpha, x_sat, y_sat = params.alpha, params.x_sat, params.y_sat
    return growth(k, x, alpha, basis_log_rate(k, alpha, x_sat, y_sat))


def curve_mean_array(t, y0, y_inf, weights, alpha, x_sat, y_sat, r_sat):
    """Vectorised noiseless curve.

    ``weights``, ``alpha``, ``x_sat``, ``y_sat`` and ``r_sat`` carry the basis
    index on their last axis (length ``K``); every other argument broadcasts
    against their leading axes.
    """
    t = np.asarray(t, dtype=float)[..., None]
    x = np.where(t <= x_sat, t, r_sat * (t - x_sat) + x_sat)
    total = 0.0
    for k in range(K):
        log_rate = basis_log_rate(k, alpha[..., k], x_sat[..., k], y_sat[..., k])
        total = total + weights[..., k] * growth(k, x[..., k], alpha[..., k], log_rate)
    return np.clip(y0 + (y_inf - y0) * total, 0.0, 1.0)


def curve_matrix(params, y0, t):
    """Noiseless curves for rows of 22-vectors ``params`` at times ``t``.

    Returns ``(n, len(t))``.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    b = params[:, 6:].reshape(-1, 1, K, 4)
    w = params[:, None, 2:6]
    t = np.asarray(t, dtype=float)[None, :]
    return curve_mean_array(t, y0, params[:, 1:2], w, b[..., 0], b[..., 1], b[..., 2], b[..., 3])


def curve_mean(t, cfg: CurveConfig, y0: float):
    """Noiseless curve value at normalised time ``t`` in [0, 1]."""
    vec = cfg.as_array()
    b = vec[6:].reshape(K, 4)
    out = curve_mean_array(t, y0, vec[1], vec[2:6], b[:, 0], b[:, 1], b[:, 2], b[:, 3])
    return out if np.ndim(out) else float(out)


def sample_observation(t, cfg: CurveConfig, y0: float, rng: np.random.Generator):
    """Draw from ``N(curve_mean, sigma^2)`` clipped to [0, 1]."""
    mu = curve_mean(t, cfg, y0)
    return clipped_normal_sample(mu, cfg.sigma, rng)


def clipped_normal_sample(mu, sigma, rng: np.random.Generator):
    mu = np.asarray(mu, dtype=float)
    out = np.clip(mu + sigma * rng.standard_normal(mu.shape), 0.0, 1.0)
    return out if out.ndim else float(out)


_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


def clipped_normal_logpdf(y, mu, sigma):
    """Log density of the clipped-Gaussian observation model.

    Interior values use the Gaussian density; exact 0 and 1 use the point mass
    of the clipped tail.
    """
    y = np.asarray(y, dtype=float)
    z = (y - mu) / sigma
    interior = -0.5 * z * z - np.log(sigma) - _LOG_SQRT_2PI
    lower = special.log_ndtr(z)
    upper = special.log_ndtr(-z)
    return np.where(y <= 0.0, lower, np.where(y >= 1.0, upper, interior))
