import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import evidence_quadrature
from scipy import integrate, special, stats

from freezethaw import config_prior as cp
from freezethaw import surrogate as S
from freezethaw.surrogate import (
    EDGES,
    History,
    InferenceConfig,
    MIDPOINTS,
    Ppd,
    TaskMeta,
    infer,
    ppd_cdf,
    ppd_exceedance,
    ppd_expected_improvement,
    ppd_log_likelihood,
    ppd_mean,
    ppd_quantile,
    ppd_variance,
)

SMALL = InferenceConfig(n_samples=32, n_latent=4, n_inner=8)

mixtures = st.lists(
    st.tuples(st.floats(0.05, 1.0), st.floats(-0.2, 1.2), st.floats(0.005, 0.4)), min_size=1, max_size=6
)


def _mix(components):
    w, mu, sig = (np.array(c, dtype=float) for c in zip(*components))
    return w, mu, sig


# ---------------------------------------------------------------------------
# history


def test_history_prefix_rules():
    h = History([([0.1], 1, 0.2), ([0.1], 2, 0.3), ([0.5], 1, 0.4)])
    assert len(h) == 3 and h.n_configs == 2 and h.frontier([0.1]) == 2 and h.best() == 0.4
    with pytest.raises(ValueError, match="prefix"):
        History([([0.1], 2, 0.2)])
    with pytest.raises(ValueError, match="duplicate"):
        History([([0.1], 1, 0.2), ([0.1], 1, 0.3)])
    with pytest.raises(ValueError, match="outside"):
        History([([0.1], 1, 1.2)])
    assert History(h.entries()).entries() == h.entries()


# ---------------------------------------------------------------------------
# predictive distributions


def test_uniform_and_point_mass_scores():
    assert ppd_log_likelihood(Ppd.uniform(), 0.37) == pytest.approx(0.0)
    assert ppd_log_likelihood(Ppd.point_mass(0.37), 0.37) == pytest.approx(np.log(1000))
    assert ppd_log_likelihood(Ppd.point_mass(0.37), 0.9) == pytest.approx(np.log(1e-12))
    assert ppd_mean(Ppd.uniform()) == pytest.approx(0.5)


@given(mixtures)
def test_windowed_edge_cdf_matches_direct_sum(components):
    w, mu, sig = _mix(components)
    direct = (w[:, None] * special.ndtr((EDGES[None, :] - mu[:, None]) / sig[:, None])).sum(0) / w.sum()
    direct[0], direct[-1] = 0.0, 1.0
    np.testing.assert_allclose(Ppd.from_mixture(w, mu, sig).edge_cdf(), direct, atol=1e-12)


@given(mixtures, st.floats(0.0, 1.0))
def test_lazy_and_materialised_cdf_agree(components, x):
    w, mu, sig = _mix(components)
    lazy = Ppd.from_mixture(w, mu, sig)
    full = Ppd(Ppd.from_mixture(w, mu, sig).probs)
    assert ppd_cdf(lazy, x) == pytest.approx(ppd_cdf(full, x), abs=1e-9)
    assert ppd_exceedance(lazy, x) == pytest.approx(1 - ppd_cdf(full, x), abs=1e-9)


@given(mixtures, st.floats(0.01, 0.99))
def test_quantile_inverts_cdf(components, q):
    p = Ppd.from_mixture(*_mix(components))
    x = ppd_quantile(p, q)
    assert 0.0 <= x <= 1.0
    assert ppd_cdf(p, x) == pytest.approx(q, abs=1e-6) or p.probs[min(int(x * 1000), 999)] == 0


@given(mixtures, st.floats(-0.2, 1.0))
def test_expected_improvement_matches_quadrature(components, T):
    w, mu, sig = _mix(components)
    w = w / w.sum()
    p = Ppd.from_mixture(w, mu, sig)
    # route 2: integrate the survival function of the clipped mixture
    surv = lambda y: float(np.dot(w, stats.norm.sf(y, mu, sig)))
    lo = max(T, 0.0)
    val, _ = integrate.quad(surv, lo, 1.0, limit=200, points=[m for m in mu if lo < m < 1])
    assert ppd_expected_improvement(p, T) == pytest.approx(val + max(-T, 0.0), abs=1e-7)
    # binned representation integrates its own piecewise-linear CDF
    q = Ppd(Ppd.from_mixture(w, mu, sig).probs)
    assert ppd_expected_improvement(q, T) == pytest.approx(val + max(-T, 0.0), abs=2e-3)


@given(mixtures)
def test_mixture_moments_match_quadrature(components):
    w, mu, sig = _mix(components)
    w = w / w.sum()
    p = Ppd.from_mixture(w, mu, sig)

    def raw_moment(k):
        inner = sum(
            wi * integrate.quad(lambda y: y**k * stats.norm.pdf(y, m, s), 0, 1, points=[min(max(m, 0), 1)])[0]
            for wi, m, s in zip(w, mu, sig)
        )
        return inner + float(np.dot(w, stats.norm.sf(1.0, mu, sig)))  # mass at 1

    m1, m2 = raw_moment(1), raw_moment(2)
    assert ppd_mean(p) == pytest.approx(m1, abs=1e-7)
    assert ppd_variance(p) == pytest.approx(m2 - m1 * m1, abs=1e-7)


def test_binned_ei_matches_midpoint_formula_for_point_mass():
    p = Ppd.point_mass(0.8)
    assert ppd_expected_improvement(p, 0.5) == pytest.approx(0.8005 - 0.5, abs=1e-9)
    assert ppd_expected_improvement(p, 0.9) == 0.0


def test_compress_merges_duplicates_exactly():
    w = np.array([0.1, 0.2, 0.3, 0.4] * 3)
    mu = np.array([0.1, 0.5, 0.1, 0.5] * 3)
    sig = np.full(12, 0.05)
    cw, cmu, csig = S._compress(w, mu, sig, 4, 0, merge=True)
    assert len(cw) == 2
    assert cw[np.argmin(cmu)] == pytest.approx(1.2)
    assert np.array_equal(np.sort(cmu), [0.1, 0.5])
    # without merging, the same input is resampled down to the cap
    assert len(S._compress(w, mu, sig, 4, 0)[0]) == 4


def test_compress_resampling_is_unbiased_for_the_mean(rng):
    w = rng.uniform(size=5000)
    mu = rng.uniform(size=5000)
    sig = np.full(5000, 0.01)
    cw, cmu, _ = S._compress(w, mu, sig, 500, 1)
    assert len(cw) == 500
    assert np.dot(cw, cmu) / cw.sum() == pytest.approx(np.dot(w, mu) / w.sum(), abs=0.01)


# ---------------------------------------------------------------------------
# configuration and validation


def test_inference_config_floor():
    with pytest.raises(ValueError, match="16"):
        InferenceConfig(n_samples=8)
    with pytest.raises(ValueError):
        InferenceConfig(rho=1.0)


def test_query_validation():
    with pytest.raises(ValueError, match="dimension"):
        infer(History(), [([0.1, 0.2], 3)], TaskMeta(1, 10), SMALL)
    with pytest.raises(ValueError, match="step"):
        infer(History(), [([0.1], 11)], TaskMeta(1, 10), SMALL)
    with pytest.raises(ValueError, match="past b_max"):
        infer(History([([0.1], b, 0.5) for b in range(1, 5)]), [([0.1], 3)], TaskMeta(1, 3), SMALL)


# ---------------------------------------------------------------------------
# inference


def _history(task, n_configs=4, steps=6):
    return History([(task.configs[i], b, task.observations[i, b - 1]) for i in range(n_configs) for b in range(1, steps + 1)])


@pytest.fixture(scope="module")
def task():
    from freezethaw.tasks import sample_task

    return sample_task(5, 20, (2, 2), (20, 20))


def test_infer_is_deterministic_and_cache_transparent(task):
    h = _history(task)
    q = [(task.configs[0], 12), (task.configs[9], 4)]
    meta = TaskMeta(2, 20, task.configs)
    a = infer(h, q, meta, SMALL)
    S._DRAWS.clear()
    b = infer(h, q, meta, SMALL)
    for pa, pb in zip(a.ppds, b.ppds):
        np.testing.assert_array_equal(pa.probs, pb.probs)
    ppds, diag = a
    assert ppds is a.ppds and 1.0 <= diag.ess <= diag.n_hypotheses
    assert diag.n_hypotheses == SMALL.n_samples * SMALL.n_latent


def test_posterior_tracks_observed_curve(task):
    h = _history(task, steps=15)
    ppd = infer(h, [(task.configs[1], 16)], TaskMeta(2, 20, task.configs), InferenceConfig(n_samples=128)).ppds[0]
    truth = task.observations[1, 15]
    assert abs(ppd_mean(ppd) - truth) < 0.05
    assert ppd_quantile(ppd, 0.01) <= truth <= ppd_quantile(ppd, 0.99)


def test_empty_history_matches_generative_prior():
    m, b_max, step = 2, 20, 10
    lam = np.array([0.3, 0.7])
    cfg = InferenceConfig(n_samples=512, n_latent=16, n_inner=32, seed=3)
    ppd = infer(History(), [(lam, step)], TaskMeta(m, b_max), cfg).ppds[0]
    # route 2: sample whole tasks from the generative prior
    rng = np.random.default_rng(99)
    ys = []
    for _ in range(3000):
        tp = cp.sample_task_prior(rng, m, (b_max, b_max))
        p = cp.curve_params(tp, lam[None])
        from freezethaw.curves import curve_matrix

        mu = curve_matrix(p, tp.latents.y0, [step / b_max])[0, 0]
        ys.append(np.clip(mu + p[0, cp.SIGMA] * rng.standard_normal(), 0, 1))
    ys = np.array(ys)
    assert ppd_mean(ppd) == pytest.approx(ys.mean(), abs=0.03)
    for q in (0.25, 0.5, 0.75):
        assert ppd_cdf(ppd, np.quantile(ys, q)) == pytest.approx(q, abs=0.05)


class _StubShape:
    def __init__(self, S, R, g, z_sigma, z_y):
        self._g = np.broadcast_to(np.asarray(g, dtype=float), (S, R, len(g)))
        self.z_sigma = np.full(S, z_sigma)
        self.z_y = np.full(S, z_y)

    def g(self, steps, b_max):
        return self._g[..., [s - 1 for s in steps]]


class _StubDraw:
    def __init__(self, shape):
        self._shape = shape

    def shape(self, key):
        return self._shape


@pytest.mark.parametrize("case", range(3))
def test_scale_and_noise_evidence_matches_quadrature(case):
    rho = cp.DEFAULT_RHO
    s_rho = np.sqrt(1 - rho * rho)
    y0, D, z_sigma, z_y = [(0.1, 0.8, 0.3, 0.2), (0.3, 0.5, -0.5, -1.0), (0.05, 0.9, 1.0, 0.8)][case]
    g = np.array([0.2, 0.45, 0.6, 0.7])
    rng = np.random.default_rng(case)
    v_true = special.ndtr(rho * z_y + s_rho * rng.standard_normal())
    y = np.clip(y0 + v_true * D * g + 0.02 * rng.standard_normal(4), 0.001, 0.999)
    Sn, R = 16, 4096
    cfg = InferenceConfig(n_samples=Sn, n_latent=1, n_inner=R)
    draw = _StubDraw(_StubShape(Sn, R, g, z_sigma, z_y))
    y0a, Da = np.full((Sn, 1), y0), np.full((Sn, 1), D)
    lw, _, _ = S.HierarchicalPrior._config_weights(draw, b"k", y, y0a, Da, TaskMeta(1, 4), cfg, rho, s_rho)
    est = np.log(np.mean(np.exp(lw)))
    mu_l = cp.LOG_SIGMA_LOC + cp.LOG_SIGMA_SCALE * rho * z_sigma
    ref = np.log(evidence_quadrature(y, g, y0, D, mu_l, cp.LOG_SIGMA_SCALE * s_rho, z_y, rho))
    assert est == pytest.approx(ref, abs=0.05)


class _DeadPrior:
    """Conditioning always fails on data, forcing the fallback path."""

    def __init__(self):
        self.sizes = []

    def condition(self, history, queries, meta, cfg):
        self.sizes.append((len(history), cfg.n_samples))
        post = S.Posterior()
        post.log_w = np.full(cfg.n_samples, -np.inf if len(history) else 0.0)
        post.components = lambda key, step, rows: (
            np.zeros((len(rows), 1)),
            np.full((len(rows), 1), 0.5),
            np.full((len(rows), 1), 0.1),
        )
        return post


def test_degenerate_weights_escalate_then_fall_back():
    prior = _DeadPrior()
    res = infer(History([([0.5], 1, 0.5)]), [([0.5], 2)], TaskMeta(1, 5), InferenceConfig(n_samples=16), prior)
    assert res.degenerate and res.low_ess
    assert prior.sizes == [(1, 16), (1, 32), (1, 64), (1, 128), (0, 16)]
    assert ppd_mean(res.ppds[0]) == pytest.approx(0.5, abs=1e-3)


def test_surrogate_callable_records_diagnostics(task):
    sur = S.MCSurrogate(TaskMeta(2, 20, task.configs), SMALL)
    ppds = sur(_history(task), [(task.configs[2], 7)])
    assert len(ppds) == 1 and sur.last.ppds is ppds
