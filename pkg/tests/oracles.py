"""Independent reference computations used by the tests."""

from __future__ import annotations

import itertools

import numpy as np
from scipy import integrate, special, stats

from freezethaw.curves import clipped_normal_logpdf
from freezethaw.surrogate import Ppd, cp

ALL_BITS = np.array(list(itertools.product((0, 1), repeat=6)))  # (64, 6)


def grid_bit_logprob(prior, lam) -> np.ndarray:
    """log p(bits | lambda) for every one of the 64 bit patterns."""
    p = prior.p_high(lam)
    return (ALL_BITS * np.log(p) + (1 - ALL_BITS) * np.log1p(-p)).sum(-1)


def grid_exact_ppd(prior, history, lam_q, step, b_max) -> Ppd:
    """Posterior predictive of the grid prior by full enumeration.

    Given y0, configurations are independent, so the posterior factorises as
    p(y0 | D) p(bits_q | y0, D_q).
    """
    y0s = np.asarray(prior.y0_grid, dtype=float)
    log_y0 = np.full(len(y0s), -np.log(len(y0s)))
    per_config = {}  # key -> (len(y0), 64) log joint of bits and data
    for lam, y in history.items():
        lb = grid_bit_logprob(prior, lam)
        p = prior.params(lam, ALL_BITS)
        t = np.arange(1, len(y) + 1) / b_max
        rows = []
        for y0 in y0s:
            mu = prior.mean(t[:, None], y0, {k: v[None] for k, v in p.items()})
            rows.append(lb + clipped_normal_logpdf(y[:, None], mu, p["sigma"][None]).sum(0))
        rows = np.array(rows)
        per_config[lam.tobytes()] = rows
        log_y0 = log_y0 + special.logsumexp(rows, axis=1)
    lam_q = np.asarray(lam_q, dtype=float)
    if lam_q.tobytes() in per_config:
        joint = per_config[lam_q.tobytes()]
        joint = joint - special.logsumexp(joint, axis=1, keepdims=True)
    else:
        joint = np.tile(grid_bit_logprob(prior, lam_q), (len(y0s), 1))
    logw = log_y0[:, None] + joint
    w = np.exp(logw - special.logsumexp(logw))
    p = prior.params(lam_q, ALL_BITS)
    mu = np.stack([prior.mean(np.asarray(step / b_max), y0, p) for y0 in y0s])
    sig = np.broadcast_to(p["sigma"], mu.shape)
    return Ppd.from_mixture(w.ravel(), np.clip(mu, 0, 1).ravel(), sig.ravel())


def sample_grid_history(prior, rng, n_obs, m, b_max, n_configs=3):
    """Draw a history of ``n_obs`` observations from the grid prior itself."""
    from freezethaw.curves import clipped_normal_sample

    configs = rng.uniform(size=(n_configs, m))
    y0 = prior.y0_grid[rng.integers(len(prior.y0_grid))]
    counts = np.zeros(n_configs, dtype=int)
    for i in rng.integers(n_configs, size=n_obs):
        counts[i] += 1
    counts = np.minimum(counts, b_max)
    entries = []
    for lam, n in zip(configs, counts):
        bits = (rng.uniform(size=6) < prior.p_high(lam)).astype(int)
        p = prior.params(lam, bits)
        for b in range(1, n + 1):
            mu = float(prior.mean(np.asarray(b / b_max), y0, p))
            entries.append((lam, b, float(clipped_normal_sample(mu, float(p["sigma"]), rng))))
    return configs, entries


def tv_distance(p: Ppd, q: Ppd) -> float:
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def evidence_quadrature(y, g, y0, D, mu_l, sd_l, zy, rho):
    """Marginal likelihood of inner observations over log-sigma and the scale.

    ``y_i ~ N(y0 + v D g_i, sigma^2)``, ``log sigma ~ N(mu_l, sd_l^2)`` and ``v``
    has the Gaussian-copula density centred at ``rho * zy``.
    """
    s = np.sqrt(1 - rho * rho)

    def integrand(v, ls):
        sig = np.exp(ls)
        z = special.ndtri(v)
        dens_v = stats.norm.pdf((z - rho * zy) / s) / (s * stats.norm.pdf(z))
        lik = np.prod(stats.norm.pdf(y, y0 + v * D * g, sig))
        return lik * dens_v * stats.norm.pdf(ls, mu_l, sd_l)

    val, _ = integrate.dblquad(integrand, mu_l - 8 * sd_l, mu_l + 8 * sd_l, 0.0, 1.0, epsabs=1e-10, epsrel=1e-6)
    return val
