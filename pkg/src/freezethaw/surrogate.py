"""Monte-Carlo posterior predictive for partially observed learning curves.

The surrogate conditions the curve prior on a history of partial curves and
returns, for each query ``(lambda, b)``, a 1000-bin predictive distribution.
Inference is self-normalised importance sampling with two levels:

* outer hypotheses ``(network, y0, y_max)``.  ``y0`` is proposed near the
  smallest first observation and reweighted against its Beta(1, 2) prior;
* inner draws of each observed configuration's curve shape.  The scale
  ``y_inf - y0`` is integrated in closed form (the likelihood is Gaussian in
  it) and ``log sigma`` comes from a Student-t fitted to its conditional
  posterior.  Each configuration's evidence is the mean of its inner weights.

The outer weight is the product of per-config evidence estimates, so the
estimator targets exactly the posterior of the full hierarchical model while
avoiding the collapse of plain joint sampling, where one lucky draw has to
fit every observed curve at once.

Everything is a pure function of ``(history, queries, task meta, config)``;
the caches below only memoise prior draws keyed by seed.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from . import config_prior as cp
from .curves import SIGMA_MAX, SIGMA_MIN, clipped_normal_logpdf, curve_mean_array

N_BINS = 1000
EDGES = np.linspace(0.0, 1.0, N_BINS + 1)
MIDPOINTS = (EDGES[:-1] + EDGES[1:]) / 2
LOG_FLOOR = np.log(1e-12)
_LOG_2PI = np.log(2 * np.pi)

# y0 proposal: defensive prior share and asymmetric Laplace scales around the
# smallest first observation
Q_PRIOR = 0.25
A_LO, A_HI = 0.02, 0.005
# log-sigma proposal
T_DF = 5.0
T_INFLATE = 1.2
NEWTON_ITERS = 8


# ---------------------------------------------------------------------------
# history


def _key(lam) -> bytes:
    return np.ascontiguousarray(lam, dtype=np.float64).tobytes()


class History:
    """Observed partial curves ``(lambda, b, y)``.

    Steps of each configuration must form the prefix ``1..b_lambda``.
    Configurations are identified by exact equality of their vectors.
    """

    def __init__(self, entries=()):
        curves: dict = {}
        vecs: dict = {}
        for lam, b, y in entries:
            lam = np.asarray(lam, dtype=float).ravel()
            y = float(y)
            if not 0.0 <= y <= 1.0:
                raise ValueError(f"observation {y} outside [0, 1]")
            if int(b) != b or b < 1:
                raise ValueError(f"step must be a positive integer, got {b}")
            k = _key(lam)
            vecs.setdefault(k, lam)
            curves.setdefault(k, {})
            if int(b) in curves[k]:
                raise ValueError(f"duplicate observation at step {b}")
            curves[k][int(b)] = y
        self._vecs = vecs
        self._curves = {}
        for k, obs in curves.items():
            steps = sorted(obs)
            if steps != list(range(1, len(steps) + 1)):
                raise ValueError(f"steps {steps} do not form a prefix 1..b")
            self._curves[k] = np.array([obs[s] for s in steps])

    def __len__(self):
        return sum(len(v) for v in self._curves.values())

    @property
    def n_configs(self) -> int:
        return len(self._curves)

    def configs(self) -> list:
        return [self._vecs[k] for k in self._curves]

    def curve(self, lam) -> np.ndarray:
        return self._curves.get(_key(lam), np.empty(0))

    def frontier(self, lam) -> int:
        return len(self.curve(lam))

    def items(self):
        for k, y in self._curves.items():
            yield self._vecs[k], y

    def entries(self) -> list:
        return [(lam, b + 1, float(v)) for lam, y in self.items() for b, v in enumerate(y)]

    def best(self) -> float:
        if not self._curves:
            return 0.0
        return float(max(y.max() for y in self._curves.values()))

    def extend(self, entries) -> "History":
        return History(self.entries() + list(entries))


# ---------------------------------------------------------------------------
# discretised predictive distribution


def _log1mexp(x):
    """``log(1 - exp(x))`` for ``x <= 0``."""
    x = np.minimum(x, -1e-300)
    return np.where(x > -np.log(2), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _mixture_edge_cdf(w, mu, sig) -> np.ndarray:
    """Mixture CDF of clipped normals at the 1001 bin edges.

    Boundary point masses land in the end bins.  A component is evaluated only
    on the edges within +-9 sigma of its mean; edges above that window count
    its full weight.
    """
    n = N_BINS
    lo = np.clip(np.floor((mu - 9 * sig) * n).astype(np.int64), 1, n)
    hi = np.clip(np.ceil((mu + 9 * sig) * n).astype(np.int64), 0, n - 1)
    full = np.cumsum(np.bincount(np.maximum(hi + 1, lo), weights=w, minlength=n + 1)[: n + 1])
    window = np.zeros(n + 1)
    width = np.maximum(hi - lo + 1, 0)
    order = np.argsort(width, kind="stable")
    block = 2048
    for start in range(0, len(order), block):
        idx = order[start : start + block]
        wmax = int(width[idx].max())
        if wmax == 0:
            continue
        j = lo[idx, None] + np.arange(wmax)[None, :]
        valid = j <= hi[idx, None]
        val = special.ndtr((j / n - mu[idx, None]) / sig[idx, None]) * w[idx, None]
        window += np.bincount(j[valid], weights=val[valid], minlength=n + 1)[: n + 1]
    F = full + window
    F[0], F[n] = 0.0, 1.0
    return np.maximum.accumulate(np.clip(F, 0.0, 1.0))


class Ppd:
    """Distribution over [0, 1] with piecewise-constant density on 1000 bins.

    Built either from bin probabilities or lazily from a mixture of clipped
    normals; in the latter case single CDF values are evaluated directly from
    the mixture without materialising all bins.
    """

    def __init__(self, probs=None, *, mixture=None):
        if probs is None and mixture is None:
            raise ValueError("need probabilities or a mixture")
        self._probs = None
        self._cdf = None
        self._mix = None
        if probs is not None:
            p = np.asarray(probs, dtype=float)
            if p.shape != (N_BINS,) or np.any(p < 0) or not np.isfinite(p).all():
                raise ValueError(f"expected {N_BINS} nonnegative probabilities")
            self._probs = p / p.sum()
        else:
            w, mu, sig = (np.asarray(a, dtype=float).ravel() for a in mixture)
            self._mix = (w / w.sum(), mu, sig)

    @classmethod
    def uniform(cls) -> "Ppd":
        return cls(np.full(N_BINS, 1.0 / N_BINS))

    @classmethod
    def point_mass(cls, y: float) -> "Ppd":
        p = np.zeros(N_BINS)
        p[_bin(y)] = 1.0
        return cls(p)

    @classmethod
    def from_mixture(cls, weights, mu, sigma) -> "Ppd":
        return cls(mixture=(weights, mu, sigma))

    @property
    def n_components(self) -> int:
        return 0 if self._mix is None else len(self._mix[0])

    @property
    def probs(self) -> np.ndarray:
        if self._probs is None:
            F = self.edge_cdf()
            p = np.diff(F)
            self._probs = p / p.sum()
        return self._probs

    def edge_cdf(self, j=None):
        """CDF at bin edge ``j`` (all 1001 edges when ``j`` is None)."""
        if j is None:
            if self._cdf is None:
                if self._probs is not None:
                    self._cdf = np.concatenate([[0.0], np.cumsum(self._probs)])
                    self._cdf[-1] = 1.0
                else:
                    self._cdf = _mixture_edge_cdf(*self._mix)
            return self._cdf
        if self._cdf is not None or self._probs is not None:
            return float(self.edge_cdf()[j])
        if j <= 0:
            return 0.0
        if j >= N_BINS:
            return 1.0
        w, mu, sig = self._mix
        return float(np.dot(w, special.ndtr((j / N_BINS - mu) / sig)))

    def cdf(self, x: float) -> float:
        """P(Y <= x) under the piecewise-constant density."""
        if x < 0:
            return 0.0
        if x >= 1:
            return 1.0
        j = min(int(np.floor(x * N_BINS)), N_BINS - 1)
        lo, hi = self.edge_cdf(j), self.edge_cdf(j + 1)
        return lo + (x * N_BINS - j) * (hi - lo)

    def mixture_moments(self):
        """Mean and variance of the underlying clipped-normal mixture."""
        if self._mix is None:
            return ppd_mean(self), float(np.dot(self.probs, (MIDPOINTS - ppd_mean(self)) ** 2))
        w, mu, sig = self._mix
        m1, m2 = _clipped_normal_moments(mu, sig)
        mean = float(np.dot(w, m1))
        return mean, float(np.dot(w, m2)) - mean * mean


def _clipped_normal_moments(mu, sig):
    """First two raw moments of ``clip(N(mu, sig^2), 0, 1)``."""
    a, b = (0 - mu) / sig, (1 - mu) / sig
    pa, pb = special.ndtr(a), special.ndtr(b)
    da, db = stats.norm.pdf(a), stats.norm.pdf(b)
    inner = pb - pa
    m1 = mu * inner + sig * (da - db) + (1 - pb)
    m2 = mu**2 * inner + 2 * mu * sig * (da - db) + sig**2 * (inner + a * da - b * db) + (1 - pb)
    return m1, m2


def _bin(y: float) -> int:
    return min(max(int(np.floor(y * N_BINS)), 0), N_BINS - 1)


def ppd_log_likelihood(ppd: Ppd, y: float) -> float:
    """Log density of ``y``, floored at ``log(1e-12)``."""
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"y={y} outside [0, 1]")
    j = _bin(y)
    p = ppd.edge_cdf(j + 1) - ppd.edge_cdf(j)
    return float(max(np.log(max(p, 0.0) * N_BINS) if p > 0 else LOG_FLOOR, LOG_FLOOR))


def ppd_cdf(ppd: Ppd, x: float) -> float:
    return ppd.cdf(x)


def ppd_exceedance(ppd: Ppd, T: float) -> float:
    """P(Y > T) with linear interpolation inside T's bin."""
    if T < 0:
        return 1.0
    if T >= 1:
        return 0.0
    return 1.0 - ppd.cdf(T)


def ppd_mean(ppd: Ppd) -> float:
    """Mean; exact for mixtures, bin midpoints otherwise."""
    if ppd._mix is not None and ppd._probs is None:
        return ppd.mixture_moments()[0]
    return float(np.dot(ppd.probs, MIDPOINTS))


def ppd_quantile(ppd: Ppd, q: float) -> float:
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    F = ppd.edge_cdf()
    j = int(np.searchsorted(F, q, side="left")) - 1
    j = min(max(j, 0), N_BINS - 1)
    p = F[j + 1] - F[j]
    frac = 0.0 if p <= 0 else (q - F[j]) / p
    return float(EDGES[j] + min(max(frac, 0.0), 1.0) / N_BINS)


def _upper_partial(z):
    # antiderivative of the normal survival function
    return z * special.ndtr(-z) - np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


def ppd_expected_improvement(ppd: Ppd, incumbent: float) -> float:
    """E[max(Y - incumbent, 0)] = integral of P(Y > y) over [incumbent, 1]."""
    T = min(max(float(incumbent), 0.0), 1.0)
    shift = max(-float(incumbent), 0.0)  # incumbents below 0 add a constant
    if ppd._mix is not None and ppd._probs is None:
        w, mu, sig = ppd._mix
        val = sig * (_upper_partial((1 - mu) / sig) - _upper_partial((T - mu) / sig))
        return float(np.dot(w, val)) + shift
    # piecewise-linear CDF: trapezoids over whole bins, one partial bin
    F = ppd.edge_cdf()
    j = min(int(np.floor(T * N_BINS)), N_BINS)
    if j >= N_BINS:
        return shift
    FT = ppd.cdf(T)
    part = (EDGES[j + 1] - T) * (2.0 - FT - F[j + 1]) / 2.0
    rest = np.sum(2.0 - F[j + 1 : -1] - F[j + 2 :]) / (2.0 * N_BINS)
    return float(part + rest) + shift


def ppd_variance(ppd: Ppd) -> float:
    if ppd._mix is not None and ppd._probs is None:
        return ppd.mixture_moments()[1]
    m = ppd_mean(ppd)
    return float(np.dot(ppd.probs, (MIDPOINTS - m) ** 2))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InferenceConfig:
    """Sampling budget of the surrogate.

    ``n_samples`` outer network hypotheses are each paired with
    ``n_latent`` draws of ``(y0, y_max)``; every configuration in the history
    gets ``n_inner`` shape draws per network.
    """

    n_samples: int = 512
    extra_cal: int = cp.DEFAULT_EXTRA_CAL
    min_ess_fraction: float = 0.02
    no_hps: bool = False
    seed: int = 0
    rho: float = cp.DEFAULT_RHO
    n_latent: int = 16
    n_inner: int = 32
    max_components: int = 16384
    max_escalations: int = 3

    def __post_init__(self):
        if self.n_samples < 16:
            raise ValueError(f"n_samples must be >= 16, got {self.n_samples}")
        if not 0.0 < self.min_ess_fraction < 1.0:
            raise ValueError("min_ess_fraction must lie in (0, 1)")
        if self.n_latent < 1 or self.n_inner < 1:
            raise ValueError("n_latent and n_inner must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1) for inference")
        if self.extra_cal < 0:
            raise ValueError("extra_cal must be nonnegative")


@dataclass(frozen=True)
class TaskMeta:
    m: int
    b_max: int
    space: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def coerce(cls, meta) -> "TaskMeta":
        if isinstance(meta, TaskMeta):
            return meta
        m, b_max, *rest = meta
        return cls(int(m), int(b_max), rest[0] if rest else None)


@dataclass
class InferenceResult:
    ppds: list
    ess: float
    n_samples: int
    n_hypotheses: int
    degenerate: bool = False
    low_ess: bool = False

    def __iter__(self):
        # allows ``ppds, diag = infer(...)``
        yield self.ppds
        yield self


# ---------------------------------------------------------------------------
# generic nested importance sampling


class Posterior:
    """Output of a prior's conditioning step.

    ``log_w`` holds unnormalised outer log-weights over ``H`` hypotheses.
    ``components(key, step, rows)`` returns, for the hypotheses in ``rows``,
    inner log-weights normalised over the last axis together with predictive
    means and noise levels, all ``(len(rows), R)``.
    """

    log_w: np.ndarray
    # finite parameter grids repeat (mu, sigma) pairs; worth merging before resampling
    discrete = False

    def components(self, key: bytes, step: int, rows: np.ndarray):
        raise NotImplementedError


def _normalise(log_w):
    finite = np.isfinite(log_w)
    if not finite.any():
        return None
    w = np.exp(log_w - log_w[finite].max())
    w[~finite] = 0.0
    return w / w.sum()


def _compress(w, mu, sig, max_components, seed, merge=False):
    """Drop negligible components, then resample if still too many."""
    if len(w) <= max_components:
        return w, mu, sig
    keep = w > w.max() * 1e-12
    w, mu, sig = w[keep], mu[keep], sig[keep]
    if merge and len(w) > max_components:
        # merge exact duplicates
        order = np.lexsort((sig, mu))
        m_s, s_s = mu[order], sig[order]
        new = np.ones(len(order), dtype=bool)
        new[1:] = (m_s[1:] != m_s[:-1]) | (s_s[1:] != s_s[:-1])
        if not new.all():
            group = np.cumsum(new) - 1
            w = np.bincount(group, weights=w[order])
            mu, sig = m_s[new], s_s[new]
    if len(w) > max_components:
        # systematic resampling keeps the mixture unbiased
        u = (np.random.default_rng(seed).uniform() + np.arange(max_components)) / max_components
        idx = np.searchsorted(np.cumsum(w / w.sum()), u)
        idx = np.minimum(idx, len(w) - 1)
        w, mu, sig = np.full(max_components, 1.0 / max_components), mu[idx], sig[idx]
    return w, mu, sig


def _mixture_ppds(post: Posterior, W, queries, keys, b_max, cfg: InferenceConfig):
    # hypotheses with negligible weight cannot move any bin probability
    alive = np.flatnonzero(W > W.max() * 1e-12)
    Wa = W[alive, None]
    out = []
    for (lam, step), k in zip(queries, keys):
        lw_in, mu, sig = post.components(k, int(step), alive)
        wt, mu, sig = _compress(
            (Wa * np.exp(lw_in)).ravel(),
            mu.ravel(),
            sig.ravel(),
            cfg.max_components,
            [cfg.seed, 4, *_words(k), int(step)],
            post.discrete,
        )
        out.append(Ppd.from_mixture(wt, mu, sig))
    return out


_T_CONST = special.gammaln((T_DF + 1) / 2) - special.gammaln(T_DF / 2) - 0.5 * np.log(T_DF * np.pi)


def _t_logpdf(t):
    return _T_CONST - 0.5 * (T_DF + 1) * np.log1p(t * t / T_DF)


def _logsumexp(x, axis=-1):
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(x - mx), axis=axis)) + np.squeeze(mx, axis=axis)


def _words(key: bytes) -> tuple:
    h = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(h[:4], "little"), int.from_bytes(h[4:], "little")


def _check_queries(queries, meta: TaskMeta):
    out = []
    for lam, step in queries:
        lam = np.asarray(lam, dtype=float).ravel()
        if lam.shape[0] != meta.m:
            raise ValueError(f"query has dimension {lam.shape[0]}, expected {meta.m}")
        if int(step) != step or not 1 <= step <= meta.b_max:
            raise ValueError(f"query step {step} outside 1..{meta.b_max}")
        out.append((lam, int(step)))
    return out


def infer(history: History, queries, task_meta, cfg: InferenceConfig = InferenceConfig(), prior=None):
    """Posterior predictive for each query ``(lambda, b)`` given ``history``.

    Returns an :class:`InferenceResult` (unpacks as ``ppds, diagnostics``).
    When every hypothesis has zero weight the sample count is doubled up to
    ``cfg.max_escalations`` times before falling back to the prior predictive
    with ``degenerate=True``.
    """
    meta = TaskMeta.coerce(task_meta)
    if not isinstance(history, History):
        history = History(history)
    queries = _check_queries(queries, meta)
    for lam, y in history.items():
        if lam.shape[0] != meta.m:
            raise ValueError(f"history config has dimension {lam.shape[0]}, expected {meta.m}")
        if len(y) > meta.b_max:
            raise ValueError(f"history runs past b_max={meta.b_max}")
    prior = HierarchicalPrior() if prior is None else prior
    keys = [_key(lam) for lam, _ in queries]
    run_cfg = cfg
    for _ in range(cfg.max_escalations + 1):
        post = prior.condition(history, queries, meta, run_cfg)
        W = _normalise(post.log_w)
        if W is not None:
            ess = float(1.0 / np.sum(W * W))
            ppds = _mixture_ppds(post, W, queries, keys, meta.b_max, run_cfg)
            low = ess < cfg.min_ess_fraction * len(W)
            return InferenceResult(ppds, ess, run_cfg.n_samples, len(W), False, low)
        run_cfg = replace(run_cfg, n_samples=run_cfg.n_samples * 2)
    post = prior.condition(History(), queries, meta, cfg)
    W = _normalise(post.log_w)
    ppds = _mixture_ppds(post, W, queries, keys, meta.b_max, cfg)
    return InferenceResult(ppds, float(1.0 / np.sum(W * W)), cfg.n_samples, len(W), True, True)


class MCSurrogate:
    """Callable surrogate bound to one task: ``surrogate(history, queries)``."""

    def __init__(self, task_meta, cfg: InferenceConfig = InferenceConfig(), prior=None):
        self.meta = TaskMeta.coerce(task_meta)
        self.cfg = cfg
        self.prior = prior
        self.last = None

    def __call__(self, history, queries) -> list:
        self.last = infer(history, queries, self.meta, self.cfg, self.prior)
        return self.last.ppds


# ---------------------------------------------------------------------------
# hierarchical curve prior


class _LRU(OrderedDict):
    def __init__(self, size):
        super().__init__()
        self.size = size

    def get_or(self, key, make):
        if self.size == 0:
            return make()
        if key in self:
            self.move_to_end(key)
            return self[key]
        val = make()
        self[key] = val
        while len(self) > self.size:
            self.popitem(last=False)
        return val


_DRAWS = _LRU(4)


class _Shapes:
    """Inner draws for one configuration: ``(S, R)`` shape parameters."""

    def __init__(self, z, xi, rho):
        # z: (S, 22) network scores, xi: (S, R, 22)
        s = np.sqrt(1.0 - rho * rho)
        u = special.ndtr(rho * z[:, None, :] + s * xi)
        p = cp.uniforms_to_params(u)
        b = p[..., 6:].reshape(*p.shape[:-1], 4, 4)
        self.w = p[..., 2:6]
        self.alpha, self.x_sat, self.y_sat, self.r_sat = (b[..., i] for i in range(4))
        self.z_sigma = z[:, cp.SIGMA]
        self.z_y = z[:, cp.Y_INF]
        self.xi_sigma = xi[..., cp.SIGMA]
        self.v = u[..., cp.Y_INF]
        self.g_cache: dict = {}

    def g(self, steps, b_max):
        """Normalised basis mix ``sum_k w_k f_k`` at ``steps``; ``(S, R, len)``."""
        missing = [s for s in steps if s not in self.g_cache]
        if missing and self.w[..., 0].size * b_max <= 1 << 20:
            missing = [s for s in range(1, b_max + 1) if s not in self.g_cache]
        if missing:
            t = np.asarray(missing, dtype=float)[:, None, None] / b_max
            vals = curve_mean_array(
                t, 0.0, 1.0, self.w[None], self.alpha[None], self.x_sat[None], self.y_sat[None], self.r_sat[None]
            )
            for s, v in zip(missing, vals):
                self.g_cache[s] = v
        return np.stack([self.g_cache[s] for s in steps], axis=-1)


class _Draw:
    """Outer network draws for one (seed, S, pool) combination."""

    def __init__(self, cfg: InferenceConfig, m: int, pool: list):
        S = cfg.n_samples
        self.cfg = cfg
        self.index = {k: i for i, k in enumerate(pool)}
        if cfg.no_hps:
            self.z = None
            self.rho = 0.0
        else:
            self.rho = cfg.rho
            X = np.stack([np.frombuffer(k, dtype=np.float64) for k in pool]) if pool else np.empty((0, m))
            nets, fillers = [], []
            for s in range(S):
                r = np.random.default_rng([cfg.seed, 0, s])
                nets.append(cp.init_network(r, m))
                fillers.append(r.uniform(size=(cfg.extra_cal, m)))
            raw = np.empty((S, len(pool) + cfg.extra_cal, cp.N_OUTPUTS))
            # batched_forward shares inputs; fillers differ per draw, so run pool
            # and filler rows separately and rank over their union
            raw[:, : len(pool)] = cp.batched_forward(nets, X)
            for s in range(S):
                raw[s, len(pool) :] = nets[s].forward(fillers[s])
            u = cp.ecdf_uniforms(raw, axis=-2)[:, : len(pool)]
            self.z = special.ndtri(u)
        self.shapes = _LRU(4096)
        # per-config conditioning results and predictive components, keyed by
        # the data they depend on; only kept while arrays stay small
        small = S * cfg.n_latent * cfg.n_inner <= 1 << 16
        self.fits = _LRU(512 if small else 0)
        self.comps = _LRU(2048 if small else 0)

    def shape(self, key: bytes) -> _Shapes:
        def make():
            S, R = self.cfg.n_samples, self.cfg.n_inner
            xi = np.random.default_rng([self.cfg.seed, 2, *_words(key)]).standard_normal((S, R, cp.N_OUTPUTS))
            z = np.zeros((S, cp.N_OUTPUTS)) if self.z is None else self.z[:, self.index[key]]
            return _Shapes(z, xi, self.rho)

        return self.shapes.get_or(key, make)


def _pool_keys(history: History, queries, meta: TaskMeta) -> list:
    keys = {_key(lam) for lam in history.configs()}
    keys |= {_key(lam) for lam, _ in queries}
    if meta.space is not None:
        keys |= {_key(lam) for lam in np.atleast_2d(np.asarray(meta.space, dtype=float))}
    return sorted(keys)


def _draw_for(cfg: InferenceConfig, meta: TaskMeta, pool: list) -> _Draw:
    digest = hashlib.blake2b(b"".join(pool), digest_size=16).digest()
    key = (cfg.seed, cfg.n_samples, cfg.n_inner, cfg.extra_cal, cfg.no_hps, cfg.rho, meta.m, digest)
    return _DRAWS.get_or(key, lambda: _Draw(cfg, meta.m, pool))


def _log_diff_ndtr(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, stable in both tails."""
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = special.log_ndtr(hi)
    llo = special.log_ndtr(lo)
    return lhi + _log1mexp(llo - lhi), flip, lo, llo


def _truncnorm_draw(a, b, u):
    """Standard normal truncated to ``[a, b]`` by inversion; returns (draw, logZ)."""
    logz, flip, lo, llo = _log_diff_ndtr(a, b)
    # Phi(x) = Phi(lo) + u (Phi(hi) - Phi(lo)) in the non-flipped frame
    lp = np.logaddexp(llo, np.log(np.maximum(u, 1e-300)) + logz)
    x = special.ndtri_exp(np.minimum(lp, 0.0))
    x = np.where(flip, -x, x)
    return np.clip(x, a, b), logz


def _y0_log_q(y, m1):
    prior = np.log(2.0) + np.log1p(-np.minimum(y, 1 - 1e-300))
    near = np.where(y < m1, -(m1 - y) / A_LO, -(y - m1) / A_HI) - np.log(A_LO + A_HI)
    return np.logaddexp(np.log(Q_PRIOR) + prior, np.log1p(-Q_PRIOR) + near)


def sample_latents(rng: np.random.Generator, shape, m1=None):
    """Draw ``(y0, y_max)`` and the log prior/proposal ratio.

    With ``m1=None`` the draws come from the prior and the ratio is zero.
    """
    if m1 is None:
        u1, u2, u3 = rng.uniform(size=(3, *shape))
        y0 = np.minimum(u1, u2)
        y_max = np.where(u3 <= 0.25, np.maximum(u1, u2), 1.0)
        return y0, y_max, np.zeros(shape)
    use_prior = rng.uniform(size=shape) < Q_PRIOR
    y_prior = 1.0 - np.sqrt(1.0 - rng.uniform(size=shape))
    below = rng.uniform(size=shape) < A_LO / (A_LO + A_HI)
    e = rng.exponential(size=shape)
    y_near = np.where(below, m1 - A_LO * e, m1 + A_HI * e)
    y0 = np.where(use_prior, y_prior, y_near)
    valid = (y0 >= 0.0) & (y0 < 1.0)
    y0 = np.where(valid, y0, 0.5)
    log_ratio = np.where(valid, np.log(2.0) + np.log1p(-y0) - _y0_log_q(y0, m1), -np.inf)
    branch = rng.uniform(size=shape) <= 0.25
    y_max = np.where(branch, y0 + (1.0 - y0) * rng.uniform(size=shape), 1.0)
    return y0, y_max, log_ratio


class _CurvePosterior(Posterior):
    def __init__(self, prior, draw, y0, D, log_w, observed, meta, cfg, m1):
        self.m1 = m1
        self.draw = draw
        self.y0 = y0  # (S, L)
        self.D = D
        self.log_w = log_w
        self.observed = observed  # key -> (lwn, sigma, c) each (S, L, R)
        self.meta = meta
        self.cfg = cfg
        self.prior = prior

    def _base(self, key):
        """Step-independent inner weights, noise levels and scales, ``(H, R)``."""
        if key in self.observed:
            lwn, sig, c, data = self.observed[key]
        else:
            data = None

        def make():
            S, L = self.y0.shape
            R = self.cfg.n_inner
            if data is not None:
                lw_, sig_, c_ = lwn, sig, c
            else:
                sh = self.draw.shape(key)
                rho = self.draw.rho
                ls = cp.LOG_SIGMA_LOC + cp.LOG_SIGMA_SCALE * (
                    rho * sh.z_sigma[:, None] + np.sqrt(1 - rho * rho) * sh.xi_sigma
                )
                sig_ = np.broadcast_to(np.clip(np.exp(ls), SIGMA_MIN, SIGMA_MAX)[:, None, :], (S, L, R))
                c_ = self.D[..., None] * sh.v[:, None, :]
                lw_ = np.full((S, L, R), -np.log(R))
            return tuple(np.ascontiguousarray(a).reshape(S * L, R) for a in (lw_, sig_, c_))

        return self.draw.comps.get_or((key, data, self.m1), make)

    def components(self, key, step, rows):
        lwn, sig, c = self._base(key)
        L = self.y0.shape[1]
        g = self.draw.shape(key).g([step], self.meta.b_max)[..., 0]  # (S, R)
        mu = self.y0.ravel()[rows, None] + c[rows] * g[rows // L]
        return lwn[rows], np.clip(mu, 0.0, 1.0), sig[rows]


@dataclass(frozen=True)
class HierarchicalPrior:
    """The curve prior with network, latents and per-config shape draws."""

    def condition(self, history: History, queries, meta: TaskMeta, cfg: InferenceConfig) -> Posterior:
        S, L, R = cfg.n_samples, cfg.n_latent, cfg.n_inner
        draw = _draw_for(cfg, meta, _pool_keys(history, queries, meta))
        rho = draw.rho
        s_rho = np.sqrt(1.0 - rho * rho)
        m1 = min((float(y[0]) for _, y in history.items()), default=None)
        y0, y_max, log_w = sample_latents(np.random.default_rng([cfg.seed, 1]), (S, L), m1)
        D = np.maximum(y_max - y0, 1e-12)
        observed = {}
        for lam, y in history.items():
            key = _key(lam)

            def fit():
                lw, sig, c = self._config_weights(draw, key, y, y0, D, meta, cfg, rho, s_rho)
                lz = _logsumexp(lw)
                return lw - lz[..., None], lz - np.log(R), sig, c

            lwn, lz, sig, c = draw.fits.get_or((key, y.tobytes(), m1), fit)
            log_w = log_w + lz
            observed[key] = (lwn, sig, c, y.tobytes())
        log_w = np.where(np.isnan(log_w), -np.inf, log_w)
        return _CurvePosterior(self, draw, y0, D, log_w.ravel(), observed, meta, cfg, m1)

    @staticmethod
    def _config_weights(draw, key, y, y0, D, meta, cfg, rho, s_rho):
        S, L, R = cfg.n_samples, cfg.n_latent, cfg.n_inner
        n = len(y)
        sh = draw.shape(key)
        g_all = sh.g(list(range(1, n + 1)), meta.b_max)  # (S, R, n)
        inner = (y > 0.0) & (y < 1.0)
        yi = y[inner]
        gi = g_all[..., inner]
        ni = int(inner.sum())
        Sg = gi.sum(-1)[:, None, :]
        Sgg = (gi * gi).sum(-1)[:, None, :]
        Syg0 = (gi @ yi)[:, None, :]
        y0b = y0[..., None]
        Db = D[..., None]
        Syg = Syg0 - y0b * Sg
        Syy = float(yi @ yi) - 2 * y0b * float(yi.sum()) + ni * y0b * y0b
        ok = Sgg > 1e-12
        Sgg_s = np.where(ok, Sgg, 1.0)
        chat = np.where(ok, Syg / Sgg_s, 0.0)
        rss = np.maximum(np.where(ok, Syy - chat * Syg, Syy), 0.0)
        ne = np.where(ok, ni - 1, ni)

        # conditional posterior of log sigma: Newton to the mode, t proposal
        mu_l = (cp.LOG_SIGMA_LOC + cp.LOG_SIGMA_SCALE * rho * sh.z_sigma)[:, None, None]
        sd_l = cp.LOG_SIGMA_SCALE * s_rho
        v_l = sd_l * sd_l
        with np.errstate(divide="ignore"):
            mle = 0.5 * np.log(np.where(ne > 0, rss / np.maximum(ne, 1), 0.0))
        ell = np.where((ne > 0) & np.isfinite(mle), np.clip(mle, mu_l - 4 * sd_l, mu_l + 4 * sd_l), mu_l)
        for _ in range(NEWTON_ITERS):
            e = rss * np.exp(-2 * ell)
            h1 = -ne + e - (ell - mu_l) / v_l
            h2 = -2 * e - 1 / v_l
            ell = ell - np.clip(h1 / h2, -2.0, 2.0)
        scale = T_INFLATE / np.sqrt(2 * rss * np.exp(-2 * ell) + 1 / v_l)
        rng = np.random.default_rng([cfg.seed, 3, *_words(key), n])
        t = rng.standard_t(T_DF, size=(S, L, R))
        u = rng.uniform(size=(S, L, R))
        ellp = ell + scale * t
        log_q = _t_logpdf(t) - np.log(scale)
        log_p = -0.5 * ((ellp - mu_l) / sd_l) ** 2 - np.log(sd_l) - 0.5 * _LOG_2PI
        sig = np.clip(np.exp(ellp), SIGMA_MIN, SIGMA_MAX)

        # scale c = y_inf - y0 integrated against its uniform base measure
        tau = sig / np.sqrt(Sgg_s)
        a = -chat / tau
        b = (Db - chat) / tau
        x, logz = _truncnorm_draw(a, b, u)
        c = np.where(ok, chat + tau * x, u * Db)
        c = np.clip(c, 0.0, Db)
        lci = np.where(ok, np.log(tau) + 0.5 * _LOG_2PI + logz - np.log(Db), 0.0)
        lli = -ni * np.log(sig) - 0.5 * ni * _LOG_2PI - rss / (2 * sig * sig)
        # copula density of v = c / D relative to uniform
        zv = special.ndtri(np.clip(c / Db, 1e-12, 1 - 1e-12))
        zy = (rho * sh.z_y)[:, None, None]
        log_ratio = -0.5 * ((zv - zy) / s_rho) ** 2 - np.log(s_rho) + 0.5 * zv * zv

        lw = log_p - log_q + lli + lci + log_ratio
        # clipped observations at exactly 0 or 1
        for j in np.flatnonzero(~inner):
            mu_j = y0b + c * g_all[:, None, :, j]
            if y[j] <= 0.0:
                lw = lw + special.log_ndtr(-mu_j / sig)
            else:
                lw = lw + special.log_ndtr((mu_j - 1.0) / sig)
        lw = np.where(np.isnan(lw), -np.inf, lw)
        return lw, sig, c


# ---------------------------------------------------------------------------
# discrete grid prior (exactly enumerable)


@dataclass(frozen=True)
class GridPrior:
    """A single-basis prior whose parameters live on a finite grid.

    ``y0`` is uniform on ``y0_grid``.  Each configuration's parameters are
    independent per coordinate, taking ``grid[name][1]`` with probability
    ``p_high(lambda)[name]`` and ``grid[name][0]`` otherwise, where the
    probabilities come from a fixed (non-random) map of ``lambda``.  The
    curve is ``y0 + c * f_0(x_t)`` with ``c = y_inf - y0`` on its own grid.
    """

    y0_grid: tuple = (0.1, 0.3)
    grid: dict = field(
        default_factory=lambda: {
            "c": (0.3, 0.6),
            "alpha": (0.5, 2.0),
            "x_sat": (0.3, 0.9),
            "y_sat": (0.4, 0.8),
            "r_sat": (-0.2, 0.5),
            "sigma": (0.03, 0.08),
        }
    )
    basis: int = 0

    names = ("c", "alpha", "x_sat", "y_sat", "r_sat", "sigma")

    def p_high(self, lam) -> np.ndarray:
        """Fixed map from a configuration to per-coordinate probabilities."""
        lam = np.asarray(lam, dtype=float).ravel()
        phase = np.arange(1, len(self.names) + 1)
        return 0.15 + 0.7 * (0.5 + 0.5 * np.sin(3.0 * phase * (lam.sum() + 0.3 * phase)))

    def params(self, lam, bits) -> dict:
        """Parameter values for 0/1 ``bits`` (trailing axis over names)."""
        bits = np.asarray(bits)
        return {n: np.where(bits[..., i] > 0, self.grid[n][1], self.grid[n][0]) for i, n in enumerate(self.names)}

    def mean(self, t, y0, p) -> np.ndarray:
        one = np.ones_like(p["alpha"], dtype=float)
        w = np.zeros(one.shape + (4,))
        w[..., self.basis] = 1.0
        stack = lambda v: np.broadcast_to(np.asarray(v, dtype=float)[..., None], one.shape + (4,))
        return curve_mean_array(
            t, 0.0, 1.0, w, stack(p["alpha"]), stack(p["x_sat"]), stack(p["y_sat"]), stack(p["r_sat"])
        ) * p["c"] + y0

    def condition(self, history: History, queries, meta: TaskMeta, cfg: InferenceConfig) -> Posterior:
        S, R = cfg.n_samples, cfg.n_inner
        rng = np.random.default_rng([cfg.seed, 1])
        y0 = np.asarray(self.y0_grid)[rng.integers(len(self.y0_grid), size=S)]
        log_w = np.zeros(S)
        inner = {}
        keys = {_key(lam): lam for lam in history.configs()} | {_key(lam): lam for lam, _ in queries}
        for key, lam in keys.items():
            r = np.random.default_rng([cfg.seed, 2, *_words(key)])
            bits = (r.uniform(size=(S, R, len(self.names))) < self.p_high(lam)).astype(int)
            p = self.params(lam, bits)
            y = history.curve(lam)
            lw = np.zeros((S, R))
            if len(y):
                t = np.arange(1, len(y) + 1) / meta.b_max
                mu = self.mean(t[:, None, None], y0[None, :, None], {k: v[None] for k, v in p.items()})
                lw = clipped_normal_logpdf(y[:, None, None], mu, p["sigma"][None]).sum(0)
                lz = special.logsumexp(lw, axis=-1)
                log_w = log_w + lz - np.log(R)
                lw = lw - lz[:, None]
            else:
                lw = lw - np.log(R)
            inner[key] = (lw, p)
        return _GridPosterior(self, y0, log_w, inner, meta)


class _GridPosterior(Posterior):
    discrete = True

    def __init__(self, prior, y0, log_w, inner, meta):
        self.prior, self.y0, self.log_w, self.inner, self.meta = prior, y0, log_w, inner, meta

    def components(self, key, step, rows):
        lw, p = self.inner[key]
        p = {k: v[rows] for k, v in p.items()}
        mu = self.prior.mean(np.asarray(step / self.meta.b_max), self.y0[rows, None], p)
        return lw[rows], mu, p["sigma"]
