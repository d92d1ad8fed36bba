"""Frequentist layer: MLEs, one-sided Wald test, power and sample size."""
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import ndtr, ndtri

from .asymptotics import general_limit_allocation, nef_limit_allocation
from .errors import BoundaryError, InsufficientDataError
from .outcome_models import NefModel, TruncatedWeibullModel, fisher_information


def z_quantile(p):
    """Standard normal quantile; z_quantile(0) = -inf."""
    return float(ndtri(p))


def norm_cdf(x):
    return float(ndtr(x))


@dataclass(frozen=True)
class TestSpec:
    """One-sided test of H0: theta1 = theta0 against theta1 > theta0.

    ``alpha = 1`` is accepted as a degenerate always-reject test.
    """

    alpha: float = 0.05
    beta: float = 0.2
    sided: str = "one"

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.beta <= 0.5:
            raise ValueError(f"beta must lie in (0, 0.5], got {self.beta}")
        if self.sided != "one":
            raise ValueError("only one-sided tests are supported")

    @property
    def z_alpha(self):
        return z_quantile(1.0 - self.alpha)

    @property
    def z_beta(self):
        return z_quantile(1.0 - self.beta)


def weibull_loglik(theta, ys, model):
    ys = np.asarray(ys, dtype=float)
    L = np.log(model.rate * ys)
    n = ys.size
    return (n * math.log(model.rate * theta) + (theta - 1.0) * L.sum()
            - np.exp(theta * L).sum() - n * float(model._log_norm(theta)))


def weibull_mle(ys, model, G=513, tol=1e-8):
    """Golden-section maximiser of the shape log-likelihood over the shape interval.

    The bracket comes from the argmax over a regular grid.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.size == 0:
        raise InsufficientDataError("no outcomes on this arm")
    grid = np.linspace(model.theta_lo, model.theta_hi, G)
    L = np.log(model.rate * ys)
    ll = (ys.size * np.log(model.rate * grid) + (grid - 1.0) * L.sum()
          - np.exp(np.outer(grid, L)).sum(axis=1) - ys.size * model._log_norm(grid))
    k = int(np.argmax(ll))
    if k == 0 or k == G - 1:
        raise BoundaryError(f"shape MLE at the boundary of ({model.theta_lo}, {model.theta_hi})")
    res = optimize.minimize_scalar(
        lambda th: -weibull_loglik(th, ys, model),
        bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden", tol=tol,
    )
    return float(res.x)


def mle(state, a, model=None):
    """MLE of arm ``a`` from a :class:`~budsim.engine.TrialState` history."""
    ys = [y for arm, y in state.history if arm == a]
    if not ys:
        raise InsufficientDataError(f"arm {a} has no outcomes")
    if isinstance(model, TruncatedWeibullModel):
        return weibull_mle(ys, model)
    return math.fsum(ys) / len(ys)


def _check_nef_boundary(family, th):
    if family == "bernoulli" and not 0.0 < th < 1.0:
        raise BoundaryError(f"Bernoulli MLE {th} on the boundary")
    if family == "exp_mean" and not th > 0.0:
        raise BoundaryError(f"exponential MLE {th} on the boundary")


def plugin_eta(models, thetahat, h):
    """eta_a = 1/(rho_a I_a), both evaluated at the MLEs."""
    fitted = []
    for m, th in zip(models, thetahat):
        if isinstance(m, NefModel):
            _check_nef_boundary(m.kind, th)
            fitted.append(NefModel(m.kind, th, m.sigma2))
        else:
            if not m.theta_lo < th < m.theta_hi:
                raise BoundaryError(f"shape MLE {th} outside the parameter interval")
            fitted.append(TruncatedWeibullModel(m.rate, m.t0, th, m.theta_lo, m.theta_hi))
    infos = np.array([fisher_information(m) for m in fitted])
    if all(isinstance(m, NefModel) for m in fitted):
        rho = nef_limit_allocation(1.0 / np.sqrt(infos), h)
    else:
        rho = general_limit_allocation(infos, h)
    return 1.0 / (rho * infos)


def wald_statistic(state, config):
    """Z = sqrt(t)(thetahat1 - thetahat0)/sqrt(eta0 + eta1) for a two-arm trial."""
    if config.K != 2:
        raise ValueError("the Wald test is defined for two arms")
    th = [mle(state, a, config.truth[a]) for a in range(2)]
    eta = plugin_eta(config.truth, th, config.h)
    return math.sqrt(state.t) * (th[1] - th[0]) / math.sqrt(eta[0] + eta[1])


def wald_from_summaries(family, sums, counts, t, h, sigma2=(1.0, 1.0)):
    """Vectorised Wald statistics for NEF arms from outcome sums and counts.

    ``sums`` and ``counts`` have shape (R, 2). Boundary or empty arms give NaN,
    which callers count as non-rejection.
    """
    sums = np.asarray(sums, dtype=float)
    counts = np.asarray(counts, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        th = sums / counts
        if family == "bernoulli":
            var = th * (1.0 - th)
            ok = (th > 0.0) & (th < 1.0)
        elif family == "exp_mean":
            var = th * th
            ok = th > 0.0
        elif family == "normal":
            var = np.broadcast_to(np.asarray(sigma2, dtype=float), th.shape)
            ok = np.isfinite(th)
        else:
            raise ValueError(f"no vectorised Wald statistic for {family!r}")
        ok = ok.all(axis=1) & (counts > 0).all(axis=1)
        e = 2.0 * h / (2.0 * h + 1.0)
        w = np.exp(0.5 * e * np.log(var))
        rho = w / w.sum(axis=1, keepdims=True)
        eta = var / rho
        z = math.sqrt(t) * (th[:, 1] - th[:, 0]) / np.sqrt(eta.sum(axis=1))
    z[~ok] = np.nan
    return z


def power_approx(theta0, theta1, eta0, eta1, t, alpha):
    """Phi(sqrt(t) * dtheta / sqrt(eta0 + eta1) - z_{1-alpha})."""
    if not theta1 > theta0:
        raise ValueError("power is defined for theta1 > theta0")
    if t < 1:
        raise ValueError("t must be at least 1")
    d = (theta1 - theta0) / math.sqrt(eta0 + eta1)
    return norm_cdf(math.sqrt(t) * d - z_quantile(1.0 - alpha))


def sample_size(theta0, theta1, eta0, eta1, alpha, beta):
    """Smallest t with power_approx(t) >= 1 - beta.

    Starts from the ceiling of (z_{1-a} + z_{1-b})^2 (eta0+eta1)/dtheta^2 and
    steps by one when floating-point rounding leaves it off by one.
    """
    if not theta1 > theta0:
        raise ValueError("sample size is defined for theta1 > theta0")
    za = z_quantile(1.0 - alpha)
    zb = z_quantile(1.0 - beta)
    raw = (za + zb) ** 2 * (eta0 + eta1) / (theta1 - theta0) ** 2
    t = max(1, math.ceil(raw))
    target = 1.0 - beta
    while power_approx(theta0, theta1, eta0, eta1, t, alpha) < target:
        t += 1
    while t > 1 and power_approx(theta0, theta1, eta0, eta1, t - 1, alpha) >= target:
        t -= 1
    return t
