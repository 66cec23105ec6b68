"""Random network prior mapping hyperparameters to curve parameters.

The network is never trained.  Its 22 raw outputs are pushed through an
empirical-CDF rank transform over a pool of configurations and then through
the inverse CDF of each parameter's target marginal, so every parameter has
its prescribed distribution while configurations that are close in
hyperparameter space keep similar curves.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .curves import (
    K,
    SIGMA_MAX,
    SIGMA_MIN,
    ConfigurationError,
    CurveConfig,
    TaskLatents,
    sample_task_latents,
)

N_OUTPUTS = 22
M_MAX = 10

DEPTHS = (2, 3)
WIDTHS = (16, 32, 64)
ACTIVATIONS = ("tanh", "sine", "leaky")
GAIN_RANGE = (0.5, 4.0)
LEAKY_SLOPE = 0.1
DEFAULT_EXTRA_CAL = 128

# column layout of the 22-vector
SIGMA, Y_INF = 0, 1
WEIGHTS = slice(2, 2 + K)
ALPHA = [6 + 4 * k for k in range(K)]
X_SAT = [7 + 4 * k for k in range(K)]
Y_SAT = [8 + 4 * k for k in range(K)]
R_SAT = [9 + 4 * k for k in range(K)]

LOG_SIGMA_LOC, LOG_SIGMA_SCALE = -5.0, 1.0
LOG_ALPHA_SCALE = 0.5
R_SAT_RANGE = (-0.25, 1.0)

# share of each parameter's (probit-scale) variance explained by the network
DEFAULT_RHO = 0.7


@dataclass(frozen=True)
class MarginalSpec:
    """Target marginal of one output column.

    ``kind`` is one of ``"uniform"`` (on ``[low, high]``; ``None`` bounds are
    filled from task latents for ``y_inf``), ``"lognormal"`` (``loc``/``scale``
    of the log), or ``"gamma-group"`` (Gamma(1, 1), normalised with the other
    members of the group).
    """

    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    loc: float = 0.0
    scale: float = 1.0

    def ppf(self, u, low=None, high=None):
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            lo = self.low if low is None else low
            hi = self.high if high is None else high
            return lo + (hi - lo) * u
        if self.kind == "lognormal":
            return np.exp(self.loc + self.scale * special.ndtri(u))
        if self.kind == "gamma-group":
            return -np.log1p(-u)
        raise ValueError(f"unknown marginal kind {self.kind!r}")

    def scipy_dist(self, low=None, high=None):
        """Frozen scipy distribution, used for goodness-of-fit checks."""
        if self.kind == "uniform":
            lo = self.low if low is None else low
            hi = self.high if high is None else high
            return stats.uniform(lo, hi - lo)
        if self.kind == "lognormal":
            return stats.lognorm(s=self.scale, scale=np.exp(self.loc))
        if self.kind == "gamma-group":
            return stats.gamma(1.0)
        raise ValueError(f"unknown marginal kind {self.kind!r}")


def default_marginals() -> list[MarginalSpec]:
    specs = [
        MarginalSpec("sigma", "lognormal", loc=LOG_SIGMA_LOC, scale=LOG_SIGMA_SCALE),
        MarginalSpec("y_inf", "uniform"),
    ]
    specs += [MarginalSpec(f"w{k}", "gamma-group") for k in range(K)]
    for k in range(K):
        specs += [
            MarginalSpec(f"alpha{k}", "lognormal", loc=0.0, scale=LOG_ALPHA_SCALE),
            MarginalSpec(f"x_sat{k}", "uniform", 0.0, 1.0),
            MarginalSpec(f"y_sat{k}", "uniform", 0.0, 1.0),
            MarginalSpec(f"r_sat{k}", "uniform", *R_SAT_RANGE),
        ]
    assert len(specs) == N_OUTPUTS
    return specs


MARGINALS = default_marginals()


@dataclass(frozen=True, eq=False)
class PriorNetwork:
    """A randomly initialised MLP with ``N_OUTPUTS`` linear outputs."""

    input_dim: int
    widths: tuple
    activation: str
    gain: float
    weights: tuple
    biases: tuple

    @property
    def depth(self) -> int:
        return len(self.widths)

    def forward(self, x) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = _activate(h @ w + b, self.activation)
        return h @ self.weights[-1] + self.biases[-1]

    def __eq__(self, other):
        if not isinstance(other, PriorNetwork):
            return NotImplemented
        return (
            self.input_dim == other.input_dim
            and self.widths == other.widths
            and self.activation == other.activation
            and self.gain == other.gain
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "widths": list(self.widths),
            "activation": self.activation,
            "gain": self.gain,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorNetwork":
        return cls(
            input_dim=int(d["input_dim"]),
            widths=tuple(int(w) for w in d["widths"]),
            activation=d["activation"],
            gain=float(d["gain"]),
            weights=tuple(np.asarray(w, dtype=float) for w in d["weights"]),
            biases=tuple(np.asarray(b, dtype=float) for b in d["biases"]),
        )


def _activate(z, kind: str):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sine":
        return np.sin(z)
    if kind == "leaky":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    raise ValueError(f"unknown activation {kind!r}")


def _check_dim(m: int) -> None:
    if not 1 <= m <= M_MAX:
        raise ConfigurationError(f"input dimension must be in 1..{M_MAX}, got {m}")


def init_network(rng: np.random.Generator, m: int) -> PriorNetwork:
    _check_dim(m)
    depth = DEPTHS[rng.integers(len(DEPTHS))]
    widths = tuple(int(WIDTHS[i]) for i in rng.integers(len(WIDTHS), size=depth))
    activation = ACTIVATIONS[rng.integers(len(ACTIVATIONS))]
    gain = float(np.exp(rng.uniform(*np.log(GAIN_RANGE))))
    dims = (m, *widths, N_OUTPUTS)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(rng.normal(0.0, 1.0, size=fan_out))
    return PriorNetwork(m, widths, activation, gain, tuple(weights), tuple(biases))


def batched_forward(nets: list[PriorNetwork], x) -> np.ndarray:
    """Evaluate many networks on shared inputs; returns ``(len(nets), n, 22)``.

    Networks with the same depth and activation are zero-padded to a common
    width and evaluated with one batched matmul per layer.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty((len(nets), x.shape[0], N_OUTPUTS))
    groups: dict = {}
    for i, net in enumerate(nets):
        groups.setdefault((net.depth, net.activation), []).append(i)
    wmax = max(WIDTHS)
    for (depth, act), idx in groups.items():
        g = len(idx)
        dims = [x.shape[1]] + [wmax] * depth + [N_OUTPUTS]
        Ws = [np.zeros((g, a, b)) for a, b in zip(dims[:-1], dims[1:])]
        Bs = [np.zeros((g, 1, b)) for b in dims[1:]]
        for j, i in enumerate(idx):
            for layer, (w, b) in enumerate(zip(nets[i].weights, nets[i].biases)):
                Ws[layer][j, : w.shape[0], : w.shape[1]] = w
                Bs[layer][j, 0, : b.shape[0]] = b
        h = np.broadcast_to(x, (g, *x.shape))
        for layer in range(depth):
            h = _activate(h @ Ws[layer] + Bs[layer], act)
            # padded units must stay silent: sine/tanh/leaky all map 0 -> 0
        out[idx] = h @ Ws[-1] + Bs[-1]
    return out


def ecdf_uniforms(raw, axis: int = -2) -> np.ndarray:
    """Midpoint-rank transform of ``raw`` to (0, 1) along ``axis``.

    Ties share their average rank; a constant column maps to 0.5 everywhere.
    """
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[axis]
    ranks = stats.rankdata(raw, method="average", axis=axis)
    return (ranks - 0.5) / n


def calibrate_marginals(raw_outputs, specs=None, y0=0.0, y_max=1.0, normalize=True) -> np.ndarray:
    """Map raw network outputs ``(..., n, 22)`` to calibrated curve parameters.

    ``y0``/``y_max`` bound the ``y_inf`` marginal and broadcast against the
    leading batch axes.  The four weight columns come out normalised unless
    ``normalize=False``, which leaves the raw Gamma(1, 1) draws.
    """
    raw = np.asarray(raw_outputs, dtype=float)
    if raw.shape[-1] != N_OUTPUTS:
        raise ConfigurationError(f"expected {N_OUTPUTS} output columns, got {raw.shape[-1]}")
    if raw.shape[-2] < 1:
        raise ConfigurationError("need at least one row to calibrate")
    specs = MARGINALS if specs is None else specs
    return uniforms_to_params(ecdf_uniforms(raw, axis=-2), specs, y0, y_max, normalize)


def uniforms_to_params(u, specs=None, y0=0.0, y_max=1.0, normalize=True) -> np.ndarray:
    specs = MARGINALS if specs is None else specs
    u = np.asarray(u, dtype=float)
    y0 = np.asarray(y0, dtype=float)[..., None]
    y_max = np.asarray(y_max, dtype=float)[..., None]
    out = np.empty_like(u)
    for j, spec in enumerate(specs):
        if spec.name == "y_inf":
            out[..., j] = spec.ppf(u[..., j], y0, y_max)
        else:
            out[..., j] = spec.ppf(u[..., j])
    out[..., SIGMA] = np.clip(out[..., SIGMA], SIGMA_MIN, SIGMA_MAX)
    if normalize:
        w = out[..., WEIGHTS]
        out[..., WEIGHTS] = w / w.sum(axis=-1, keepdims=True)
    return out


def _check_unit_box(lambdas: np.ndarray) -> None:
    if lambdas.size and (np.any(lambdas < 0.0) or np.any(lambdas > 1.0) or not np.all(np.isfinite(lambdas))):
        raise ValueError("hyperparameter vectors must be normalised to [0, 1]")


def config_digest(lam) -> tuple:
    """Two 32-bit words identifying a configuration vector bit-for-bit."""
    h = hashlib.blake2b(np.ascontiguousarray(lam, dtype=np.float64).tobytes(), digest_size=8).digest()
    return int.from_bytes(h[:4], "little"), int.from_bytes(h[4:], "little")


def config_noise(key: int, lambdas, size: tuple = ()) -> np.ndarray:
    """Per-configuration standard normals, a pure function of ``(key, lambda)``.

    Returns ``(n, *size, 22)``.
    """
    lambdas = np.atleast_2d(np.asarray(lambdas, dtype=float))
    out = np.empty((lambdas.shape[0], *size, N_OUTPUTS))
    for i, lam in enumerate(lambdas):
        out[i] = np.random.default_rng([int(key), *config_digest(lam)]).standard_normal((*size, N_OUTPUTS))
    return out


def mix_probit(z, xi, rho: float) -> np.ndarray:
    """Uniforms ``Phi(rho z + sqrt(1 - rho^2) xi)``.

    ``z`` is the network's probit score and ``xi`` independent noise; the
    result is uniform whenever both inputs are standard normal.
    """
    if rho >= 1.0:
        return special.ndtr(z)
    return special.ndtr(rho * z + np.sqrt(1.0 - rho * rho) * xi)


def network_scores(network: PriorNetwork, lambdas, filler) -> np.ndarray:
    """Probit of the ECDF rank of each network output over ``lambdas`` + ``filler``."""
    pool = np.vstack([lambdas, filler])
    u = ecdf_uniforms(network.forward(pool), axis=-2)
    return special.ndtri(u[: len(lambdas)])


@dataclass(frozen=True, eq=False)
class TaskPrior:
    """Task-level random state: latents, network, filler pool and noise key.

    ``rho`` sets how strongly the network ties curves to hyperparameters;
    ``rho=1`` makes parameters a deterministic function of the rank-calibrated
    network output and ``network=None`` gives the no-HPs variant, where every
    configuration draws its parameters independently from the marginals.
    """

    latents: TaskLatents
    network: PriorNetwork | None
    filler: np.ndarray = field(repr=False)
    noise_key: int = 0
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def no_hps(self) -> bool:
        return self.network is None


def sample_task_prior(
    rng: np.random.Generator,
    m: int,
    b_max_range=(1, 1000),
    *,
    extra_cal: int = DEFAULT_EXTRA_CAL,
    rho: float = DEFAULT_RHO,
    no_hps: bool = False,
) -> TaskPrior:
    _check_dim(m)
    latents = sample_task_latents(rng, b_max_range)
    network = None if no_hps else init_network(rng, m)
    filler = rng.uniform(size=(extra_cal, m))
    key = int(rng.integers(2**63))
    return TaskPrior(latents, network, filler, key, 0.0 if no_hps else rho)


def curve_params(task: TaskPrior, lambdas) -> np.ndarray:
    """Array form of :func:`config_to_curve`; returns ``(n, 22)``."""
    lambdas = np.atleast_2d(np.asarray(lambdas, dtype=float))
    _check_unit_box(lambdas)
    n, m = lambdas.shape
    xi = config_noise(task.noise_key, lambdas)
    if task.network is None:
        u = special.ndtr(xi)
    else:
        if task.network.input_dim != m:
            raise ConfigurationError(f"network expects {task.network.input_dim} inputs, got {m}")
        z = network_scores(task.network, lambdas, task.filler)
        u = mix_probit(z, xi, task.rho)
    lat = task.latents
    return uniforms_to_params(u, y0=lat.y0, y_max=lat.y_max)


def config_to_curve(task: TaskPrior, lambdas) -> list[CurveConfig]:
    """Curve parameters for each row of ``lambdas`` on one task.

    The network is evaluated on ``lambdas`` together with the task's filler
    configurations and calibrated over the union; identical vectors always
    receive identical parameters.
    """
    return [CurveConfig.from_array(p) for p in curve_params(task, lambdas)]
