import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from freezethaw import config_prior as cp
from freezethaw.curves import ConfigurationError, CurveConfig


@pytest.mark.parametrize("spec", cp.MARGINALS, ids=lambda s: s.name)
def test_ppf_matches_scipy(spec):
    u = np.linspace(0.01, 0.99, 25)
    np.testing.assert_allclose(spec.ppf(u, 0.2, 0.9), spec.scipy_dist(0.2, 0.9).ppf(u), rtol=1e-10)


def test_ecdf_uniforms_midpoint_ranks_and_ties():
    raw = np.array([[3.0], [1.0], [2.0], [2.0]])
    np.testing.assert_allclose(cp.ecdf_uniforms(raw)[:, 0], [3.5 / 4, 0.5 / 4, 2.0 / 4, 2.0 / 4])
    assert np.all(cp.ecdf_uniforms(np.ones((5, 2))) == 0.5)


@given(seed=st.integers(0, 2**31), m=st.integers(1, cp.M_MAX))
def test_calibration_preserves_order(seed, m):
    rng = np.random.default_rng(seed)
    net = cp.init_network(rng, m)
    raw = net.forward(rng.uniform(size=(40, m)))
    out = cp.calibrate_marginals(raw, normalize=False)
    for j in range(cp.N_OUTPUTS):
        if j == cp.SIGMA:
            continue  # clipping may create ties
        a, b = stats.rankdata(raw[:, j]), stats.rankdata(out[:, j])
        np.testing.assert_array_equal(a, b)


def test_calibrated_columns_match_marginals(rng):
    # pooled over 20 networks: each column against its own target distribution
    cols = []
    for _ in range(20):
        net = cp.init_network(rng, int(rng.integers(1, 11)))
        cols.append(cp.calibrate_marginals(net.forward(rng.uniform(size=(512, net.input_dim))), normalize=False))
    out = np.concatenate(cols)
    for j, spec in enumerate(cp.MARGINALS):
        x = out[:, j]
        if spec.name == "sigma":
            x = x[(x > cp.SIGMA_MIN) & (x < cp.SIGMA_MAX)]
        dist = spec.scipy_dist(0.0, 1.0) if spec.name == "y_inf" else spec.scipy_dist()
        assert stats.kstest(x, dist.cdf).pvalue > 0.01, spec.name


def test_normalised_weights_sum_to_one(rng):
    net = cp.init_network(rng, 3)
    out = cp.calibrate_marginals(net.forward(rng.uniform(size=(64, 3))))
    np.testing.assert_allclose(out[:, cp.WEIGHTS].sum(1), 1.0)


def test_batched_forward_matches_single(rng):
    nets = [cp.init_network(rng, 4) for _ in range(12)]
    x = rng.uniform(size=(9, 4))
    out = cp.batched_forward(nets, x)
    for i, net in enumerate(nets):
        np.testing.assert_allclose(out[i], net.forward(x), atol=1e-12)


def test_network_dict_round_trip(rng):
    net = cp.init_network(rng, 5)
    assert cp.PriorNetwork.from_dict(net.to_dict()) == net


@pytest.mark.parametrize("m", [0, 11])
def test_dimension_range(rng, m):
    with pytest.raises(ConfigurationError, match="1..10"):
        cp.init_network(rng, m)


def test_mix_probit_is_uniform(rng):
    u = cp.mix_probit(rng.standard_normal(20000), rng.standard_normal(20000), 0.7)
    assert stats.kstest(u, "uniform").pvalue > 0.001


def test_task_prior_determinism_and_identical_vectors(rng):
    tp = cp.sample_task_prior(np.random.default_rng(3), 2, (5, 50))
    lam = np.array([[0.2, 0.4], [0.9, 0.1], [0.2, 0.4]])
    p = cp.curve_params(tp, lam)
    np.testing.assert_array_equal(p[0], p[2])
    np.testing.assert_array_equal(p, cp.curve_params(tp, lam))
    tp2 = cp.sample_task_prior(np.random.default_rng(3), 2, (5, 50))
    np.testing.assert_array_equal(p, cp.curve_params(tp2, lam))
    cfgs = cp.config_to_curve(tp, lam)
    assert all(isinstance(c, CurveConfig) for c in cfgs)
    np.testing.assert_allclose(cfgs[1].as_array(), p[1])


def test_curve_params_respect_task_bounds():
    tp = cp.sample_task_prior(np.random.default_rng(8), 3, (5, 50))
    p = cp.curve_params(tp, np.random.default_rng(0).uniform(size=(200, 3)))
    lat = tp.latents
    assert np.all((p[:, cp.Y_INF] >= lat.y0) & (p[:, cp.Y_INF] <= lat.y_max))
    assert np.all((p[:, cp.SIGMA] >= cp.SIGMA_MIN) & (p[:, cp.SIGMA] <= cp.SIGMA_MAX))


def test_rho_one_is_network_deterministic():
    tp = cp.sample_task_prior(np.random.default_rng(1), 2, (5, 50), rho=1.0)
    other = cp.TaskPrior(tp.latents, tp.network, tp.filler, tp.noise_key + 1, 1.0)
    lam = np.random.default_rng(2).uniform(size=(10, 2))
    np.testing.assert_array_equal(cp.curve_params(tp, lam), cp.curve_params(other, lam))


def test_no_hps_variant():
    tp = cp.sample_task_prior(np.random.default_rng(1), 2, (5, 50), no_hps=True)
    assert tp.no_hps and tp.network is None and tp.rho == 0.0
    assert cp.curve_params(tp, [[0.5, 0.5]]).shape == (1, cp.N_OUTPUTS)


def test_hyperparameters_must_be_normalised():
    tp = cp.sample_task_prior(np.random.default_rng(1), 2, (5, 50))
    with pytest.raises(ValueError, match="normalised"):
        cp.curve_params(tp, [[0.5, 1.2]])


def test_nearby_configs_have_correlated_curves():
    # the network ties parameters to hyperparameters: nearby configs agree more
    near, far = [], []
    for seed in range(30):
        tp = cp.sample_task_prior(np.random.default_rng(seed), 1, (5, 50))
        p = cp.curve_params(tp, [[0.50], [0.51], [0.95]])
        near.append(abs(p[0, cp.Y_INF] - p[1, cp.Y_INF]))
        far.append(abs(p[0, cp.Y_INF] - p[2, cp.Y_INF]))
    assert np.mean(near) < np.mean(far)
