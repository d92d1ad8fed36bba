import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budsim.errors import InvalidPriorError, OutcomeSupportError
from budsim.outcome_models import NefModel, TruncatedWeibullModel, sample_from_uniforms
from budsim.posterior import (
    ConjugateState, GridPosterior, conjugate_update, grid_info_increment,
    grid_info_increment_direct, grid_moments, grid_update, posterior_mean_variance,
    predictive_variance, regular_grid_weights,
)
from budsim.rng import CounterStream


def test_beta_bernoulli_update():
    s = ConjugateState.from_beta(2, 2)
    assert (s.n, s.ytilde) == (4, 0.5)
    s1 = conjugate_update(s, 1)
    assert s1.n == 5 and s1.ytilde == pytest.approx(0.6, abs=1e-15)


def test_normal_update():
    s = ConjugateState.from_normal(0.0, 1.0, 1.0)
    assert (s.n, s.ytilde) == (1, 0)
    s1 = conjugate_update(s, 2.0)
    assert (s1.n, s1.ytilde) == (2, 1)


@settings(deadline=None)
@given(st.floats(0.5, 50), st.floats(0.01, 0.99), st.sampled_from([0.0, 1.0]))
def test_update_is_weighted_mean(n, y0, y):
    s = ConjugateState(n, y0, "bernoulli")
    s1 = conjugate_update(s, y)
    assert s1.n == n + 1
    assert s1.ytilde == pytest.approx((n * y0 + y) / (n + 1), rel=1e-15, abs=1e-300)
    assert 0 < s1.ytilde < 1


@given(st.floats(1.5, 100), st.floats(0.1, 10))
def test_update_at_mean_is_fixed_point(n, m):
    s1 = conjugate_update(ConjugateState(n, m, "exp_mean"), m)
    assert s1.ytilde == pytest.approx(m, rel=1e-15)


@pytest.mark.parametrize("state,mean,var", [
    (ConjugateState(4, 0.5, "bernoulli"), 0.5, 0.05),
    (ConjugateState(1, 0.0, "normal", 1.0), 0.0, 1.0),
    (ConjugateState(2, 1.5, "exp_mean"), 1.5, 2.25),
])
def test_posterior_moments(state, mean, var):
    m, v = posterior_mean_variance(state)
    assert m == pytest.approx(mean, abs=1e-15)
    assert v == pytest.approx(var, rel=1e-14)


@pytest.mark.parametrize("state,pv", [
    (ConjugateState(4, 0.5, "bernoulli"), 0.25),
    (ConjugateState(1, 0.0, "normal", 1.0), 2.0),
    (ConjugateState(2, 1.5, "exp_mean"), 6.75),
])
def test_predictive_variance(state, pv):
    assert predictive_variance(state) == pytest.approx(pv, rel=1e-14)


def test_inverse_gamma_oracle():
    # Gamma(shape 3, rate 3) on the rate: Var(1/lambda) = b^2/((a-1)^2 (a-2))
    s = ConjugateState.from_gamma(3.0, 3.0)
    assert posterior_mean_variance(s)[1] == pytest.approx(9 / 4, rel=1e-14)


def test_invalid_priors():
    with pytest.raises(InvalidPriorError):
        ConjugateState(0.0, 0.5, "bernoulli")
    with pytest.raises(InvalidPriorError):
        ConjugateState(1.0, 1.0, "exp_mean")
    with pytest.raises(InvalidPriorError):
        ConjugateState.from_gamma(2.0, 1.0)


@pytest.mark.parametrize("family,y", [("bernoulli", 0.5), ("exp_mean", -1.0), ("normal", math.nan)])
def test_outcome_support(family, y):
    s = ConjugateState(4.0, 0.5, family)
    with pytest.raises(OutcomeSupportError):
        conjugate_update(s, y, arm=1)


def test_grid_weights_exact_for_cubics():
    g = np.linspace(0.2, 5.0, 33)
    w = regular_grid_weights(33, 0.2, 5.0)
    for k in range(4):
        exact = (5.0 ** (k + 1) - 0.2 ** (k + 1)) / (k + 1)
        assert math.fsum(w * g**k) == pytest.approx(exact, rel=1e-13)


def test_uniform_grid_moments():
    gp = GridPosterior.uniform(TruncatedWeibullModel(), G=513)
    m, v = grid_moments(gp)
    assert m == pytest.approx(2.6, abs=1e-6)
    assert v == pytest.approx(4.8**2 / 12, abs=1e-6)


def _weibull_ys(theta, n, seed):
    m = TruncatedWeibullModel(theta=theta)
    u = CounterStream(seed, 0).uniforms(2 * n).reshape(n, 2)
    return m, sample_from_uniforms(m, u[:, 0], u[:, 1])


def test_grid_weights_stay_normalised():
    m, ys = _weibull_ys(1.5, 200, 4)
    gp = GridPosterior.uniform(m)
    for y in ys:
        gp = grid_update(gp, y)
        w = gp.normalized()
        assert abs(math.fsum(w) - 1.0) < 1e-10
        assert m.theta_lo < grid_moments(gp)[0] < m.theta_hi


def test_one_observation_importance_sampling():
    m, ys = _weibull_ys(1.5, 1, 9)
    gp = grid_update(GridPosterior.uniform(m), ys[0])
    # sample the uniform prior, weight by the likelihood
    th = m.theta_lo + (m.theta_hi - m.theta_lo) * CounterStream(10, 0).uniforms(10**6)
    w = np.exp(m.log_density(ys[0], th))
    est = np.sum(w * th) / np.sum(w)
    se = math.sqrt(np.sum(w**2 * (th - est) ** 2)) / np.sum(w)
    assert abs(grid_moments(gp)[0] - est) < 3 * se


def test_posterior_concentrates():
    m, ys = _weibull_ys(1.5, 5000, 12)
    v50 = grid_moments(GridPosterior.uniform(m).refine(ys[:50]))[1]
    v5000 = grid_moments(GridPosterior.uniform(m).refine(ys))[1]
    assert v5000 < v50


def test_grid_matches_conjugate_bernoulli():
    # Beta(1, 1) prior on a fine grid versus the closed form
    model = NefModel("bernoulli", 0.3)
    gp = GridPosterior.uniform(model, 1e-9, 1 - 1e-9, G=2049)
    st_ = ConjugateState.from_beta(1.0, 1.0)
    for y in (1, 0, 0, 1, 0, 0, 0):
        gp, st_ = grid_update(gp, float(y)), conjugate_update(st_, y)
    m, v = grid_moments(gp)
    assert m == pytest.approx(st_.ytilde, abs=1e-9)
    assert v == pytest.approx(posterior_mean_variance(st_)[1], abs=1e-9)


def test_centred_increment_matches_literal_form():
    m, ys = _weibull_ys(1.0, 30, 2)
    gp = GridPosterior.uniform(m).refine(ys)
    nodes = m.predictive_nodes(128)
    a = grid_info_increment(gp, nodes)
    b = grid_info_increment_direct(gp, nodes)
    assert a >= 0 and a == pytest.approx(b, rel=1e-9, abs=1e-11)


def test_resolution_check():
    m, ys = _weibull_ys(1.5, 500, 5)
    gp = GridPosterior.uniform(m).refine(ys)
    assert gp.resolution_error() < 1e-6
    even = GridPosterior.uniform(m, G=512)
    assert even.resolution_error() == math.inf
