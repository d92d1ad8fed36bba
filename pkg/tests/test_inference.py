import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from budsim.engine import TrialState
from budsim.errors import BoundaryError, InsufficientDataError
from budsim.inference import (
    TestSpec, mle, plugin_eta, power_approx, sample_size, wald_from_summaries, weibull_mle,
    z_quantile,
)
from budsim.outcome_models import NefModel, TruncatedWeibullModel, sample_from_uniforms
from budsim.rng import CounterStream

ETA_NORMAL = (2.6476816217236236, 4.820740099571984)


def state_with(history):
    return TrialState(len(history), np.zeros(2, dtype=int), [], None, None, list(history))


def test_sample_mean_mles():
    st_ = state_with([(1, 1.0), (1, 0.0), (1, 1.0), (1, 1.0), (0, 4.0), (0, 6.0)])
    assert mle(st_, 1) == 0.75
    assert mle(st_, 0) == 5.0
    with pytest.raises(InsufficientDataError):
        mle(state_with([(0, 1.0)]), 1)


def test_weibull_mle_consistent():
    m = TruncatedWeibullModel(theta=1.5)
    u = CounterStream(99, 0).uniforms(10000).reshape(5000, 2)
    ys = sample_from_uniforms(m, u[:, 0], u[:, 1])
    th = weibull_mle(ys, m)
    assert abs(th - 1.5) < 0.05
    # agrees with the fine-grid argmax
    assert abs(th - weibull_mle(ys, m, G=4097)) < 2e-3


def test_weibull_mle_boundary():
    m = TruncatedWeibullModel(theta=1.0)
    with pytest.raises(BoundaryError):
        weibull_mle(np.full(50, 1.0), m)


def test_plugin_eta_boundary():
    ms = (NefModel("bernoulli", 0.3), NefModel("bernoulli", 0.5))
    with pytest.raises(BoundaryError):
        plugin_eta(ms, (0.0, 0.4), 5.0)


def test_wald_zero_when_equal():
    z = wald_from_summaries("bernoulli", [[30.0, 60.0]], [[100, 200]], 300, 5.0)
    assert z[0] == 0.0


def test_wald_undefined_on_boundary():
    z = wald_from_summaries("bernoulli", [[0.0, 10.0], [3.0, 4.0]], [[5, 20], [10, 10]], 25, 5.0)
    assert math.isnan(z[0]) and math.isfinite(z[1])


def test_power_half_at_critical_t():
    d, e = 1.0, sum(ETA_NORMAL)
    t = (z_quantile(0.95) * math.sqrt(e) / d) ** 2
    assert power_approx(0.0, 1.0, *ETA_NORMAL, t, 0.05) == pytest.approx(0.5, abs=1e-12)
    assert power_approx(0.0, 1.0, *ETA_NORMAL, 1e6, 0.05) == pytest.approx(1.0, abs=1e-12)


def test_normal_power_at_47():
    assert power_approx(0.0, 1.0, *ETA_NORMAL, 47, 0.05) == pytest.approx(0.80, abs=0.01)


def test_normal_sample_size():
    assert sample_size(0.0, 1.0, *ETA_NORMAL, 0.05, 0.2) == 47


def test_sample_size_scaling():
    t1 = sample_size(0.0, 1.0, *ETA_NORMAL, 0.05, 0.2)
    t2 = sample_size(0.0, 2.0, *ETA_NORMAL, 0.05, 0.2)
    assert abs(t1 / t2 - 4) < 0.4


def test_sample_size_beta_half():
    e = sum(ETA_NORMAL)
    expect = math.ceil(z_quantile(0.95) ** 2 * e)
    assert sample_size(0.0, 1.0, *ETA_NORMAL, 0.05, 0.5) == expect


@given(st.floats(0.001, 0.2), st.floats(0.01, 0.5), st.floats(0.05, 3.0), st.floats(0.5, 20.0))
def test_sample_size_is_minimal(alpha, beta, d, e):
    t = sample_size(0.0, d, e / 2, e / 2, alpha, beta)
    assert power_approx(0.0, d, e / 2, e / 2, t, alpha) >= 1 - beta
    if t > 1:
        assert power_approx(0.0, d, e / 2, e / 2, t - 1, alpha) < 1 - beta


def test_spec_validation():
    assert TestSpec(alpha=1.0).z_alpha == -math.inf
    for bad in ({"alpha": 0.0}, {"beta": 0.6}, {"sided": "two"}):
        with pytest.raises(ValueError):
            TestSpec(**bad)
    with pytest.raises(ValueError):
        power_approx(1.0, 0.5, 1.0, 1.0, 10, 0.05)
