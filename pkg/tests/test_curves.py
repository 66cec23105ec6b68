import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from freezethaw import curves as C

unit = st.floats(0.0, 1.0)
inner = st.floats(0.02, 0.98)
alphas = st.floats(0.2, 5.0)


def _cfg(y_inf=0.8, weights=(1, 0, 0, 0), alpha=1.0, x_sat=0.5, y_sat=0.6, r_sat=1.0, sigma=0.01):
    basis = tuple(C.BasisParams(alpha, x_sat, y_sat, r_sat) for _ in range(C.K))
    return C.CurveConfig(y_inf, tuple(float(w) for w in weights), basis, sigma)


@pytest.mark.parametrize("k", range(C.K))
def test_basis_hand_values(k):
    # alpha=1, anchor (0.5, 0.5): closed forms give the rate by hand
    b = [2.0, 2 * np.log(2), 2 * (np.e - 1), 2.0][k]
    assert C.basis_rate(k, 1.0, 0.5, 0.5) == pytest.approx(b)
    x = 0.25
    expected = [1 - 1 / (1 + b * x), 1 - np.exp(-b * x), 1 - 1 / (1 + np.log1p(b * x)), b * x / (1 + b * x)][k]
    assert C.basis_value(k, x, alpha=1.0, x_sat=0.5, y_sat=0.5) == pytest.approx(expected)


@given(k=st.integers(0, C.K - 1), alpha=alphas, x_sat=st.floats(0.05, 1.0), y_sat=inner)
def test_basis_passes_through_anchor(k, alpha, x_sat, y_sat):
    assert C.basis_value(k, x_sat, alpha=alpha, x_sat=x_sat, y_sat=y_sat) == pytest.approx(y_sat, abs=1e-7)


@given(k=st.integers(0, C.K - 1), alpha=alphas, x_sat=st.floats(0.05, 1.0), y_sat=inner)
def test_basis_bounded_monotone_from_zero(k, alpha, x_sat, y_sat):
    x = np.linspace(0, 3, 200)
    v = C.basis_value(k, x, alpha=alpha, x_sat=x_sat, y_sat=y_sat)
    assert v[0] == 0.0
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(np.diff(v) >= -1e-12)


def test_saturation_transform():
    assert C.saturation_transform(0.3, 0.5, -1.0) == 0.3
    assert C.saturation_transform(0.7, 0.5, 0.5) == pytest.approx(0.6)
    assert C.saturation_transform(0.7, 0.5, -0.25) == pytest.approx(0.45)


@given(y0=unit, y_inf=unit, w=st.lists(st.floats(0.01, 1), min_size=4, max_size=4), alpha=alphas,
       x_sat=unit, y_sat=inner, r_sat=st.floats(-0.25, 1.0))
def test_curve_starts_at_y0(y0, y_inf, w, alpha, x_sat, y_sat, r_sat):
    w = np.asarray(w) / np.sum(w)
    cfg = _cfg(y_inf, w / w.sum(), alpha, x_sat, y_sat, r_sat)
    assert abs(C.curve_mean(0.0, cfg, y0) - y0) <= 1e-9


@given(y0=st.floats(0, 0.5), y_inf=st.floats(0.5, 1), alpha=alphas, x_sat=unit, y_sat=inner, r_sat=st.floats(0.0, 1.0))
def test_nonnegative_r_sat_gives_monotone_curve(y0, y_inf, alpha, x_sat, y_sat, r_sat):
    cfg = _cfg(y_inf, (0.25, 0.25, 0.25, 0.25), alpha, x_sat, y_sat, r_sat)
    v = C.curve_mean(np.linspace(0, 1, 101), cfg, y0)
    assert np.all(np.diff(v) >= -1e-12)


def test_negative_r_sat_diverges():
    cfg = _cfg(0.9, (1, 0, 0, 0), 1.0, 0.4, 0.8, -0.25)
    v = C.curve_mean(np.linspace(0, 1, 101), cfg, 0.1)
    assert v.argmax() == 40 and v[-1] < v[40]


def test_curve_matrix_matches_scalar_path(rng):
    cfgs = [_cfg(rng.uniform(), (0.1, 0.2, 0.3, 0.4), rng.uniform(0.5, 2), rng.uniform(), rng.uniform(.1, .9),
                 rng.uniform(-0.25, 1)) for _ in range(5)]
    t = np.linspace(0, 1, 7)
    M = C.curve_matrix(np.stack([c.as_array() for c in cfgs]), 0.2, t)
    for row, c in zip(M, cfgs):
        np.testing.assert_allclose(row, C.curve_mean(t, c, 0.2), rtol=0, atol=1e-14)


def test_config_array_round_trip():
    c = _cfg(0.7, (0.1, 0.2, 0.3, 0.4), 1.5, 0.3, 0.4, -0.1, 0.02)
    assert C.CurveConfig.from_array(c.as_array()) == c


@pytest.mark.parametrize(
    "kwargs",
    [dict(weights=(0.5, 0.5, 0.5, 0.0)), dict(sigma=0.0), dict(x_sat=1.5), dict(alpha=0.0), dict(y_sat=-0.1)],
)
def test_invalid_curve_config(kwargs):
    with pytest.raises(C.ConfigurationError):
        _cfg(**kwargs)


def test_latent_bounds_order():
    y0, ym = C.latent_bounds(0.7, 0.2, 0.1)
    assert (y0, ym) == (0.2, 0.7)
    y0, ym = C.latent_bounds(0.7, 0.2, 0.9)
    assert (y0, ym) == (0.2, 1.0)


def test_latent_marginals(rng):
    # y0 = min(U1, U2) is Beta(1, 2); y_max = 1 with probability 3/4
    u = rng.uniform(size=(3, 20000))
    y0, ym = C.latent_bounds(*u)
    assert stats.kstest(y0, stats.beta(1, 2).cdf).pvalue > 0.001
    assert np.mean(ym == 1.0) == pytest.approx(0.75, abs=0.015)
    assert np.all(ym >= y0)


def test_log_uniform_b_max(rng):
    b = np.array([C.sample_log_uniform_int(rng, 1, 1000) for _ in range(4000)])
    assert b.min() >= 1 and b.max() <= 1000
    # median of a log-uniform on [1, 1000] is about sqrt(1000)
    assert 25 <= np.median(b) <= 38
    with pytest.raises(C.ConfigurationError):
        C.sample_task_latents(rng, (5, 2000))


@given(mu=st.floats(-0.5, 1.5), sigma=st.floats(0.01, 0.5))
def test_clipped_logpdf_integrates_to_one(mu, sigma):
    dens = lambda y: np.exp(C.clipped_normal_logpdf(y, mu, sigma))
    interior, _ = integrate.quad(dens, 0.0, 1.0, points=[min(max(mu, 0), 1)], limit=200)
    total = interior + float(dens(0.0)) + float(dens(1.0))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_clipped_sample_point_masses(rng):
    y = C.clipped_normal_sample(np.full(50000, 0.95), 0.1, rng)
    assert np.all((y >= 0) & (y <= 1))
    assert np.mean(y == 1.0) == pytest.approx(stats.norm.sf(0.5), abs=0.01)


@pytest.mark.parametrize("k", range(C.K))
@pytest.mark.parametrize("alpha,y_sat", [(0.2, 0.75), (0.05, 0.98), (0.03, 0.5)])
def test_anchor_holds_where_the_rate_overflows(k, alpha, y_sat):
    assert C.basis_value(k, 0.4, alpha=alpha, x_sat=0.4, y_sat=y_sat) == pytest.approx(y_sat, abs=1e-7)
    later = C.basis_value(k, 0.8, alpha=alpha, x_sat=0.4, y_sat=y_sat)
    assert y_sat - 1e-12 <= later <= 1.0
