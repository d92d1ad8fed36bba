"""Closed-form large-sample quantities of the two-arm BUD design.

Arm index 1 is the "treatment" arm whose allocation is reported as rho1;
arm index 0 is the control. K > 2 designs expose only the limiting allocation.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .outcome_models import NefModel, fisher_information, true_variance


def _normalize_logs(logs):
    logs = np.asarray(logs, dtype=float)
    z = np.exp(logs - logs.max())
    return z / math.fsum(z)


def nef_limit_allocation(sigmas, h):
    """rho_a proportional to sigma_a**(2h/(2h+1)); ``sigmas`` are standard deviations."""
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(~(sigmas > 0.0)):
        raise ValueError("standard deviations must be positive")
    if h < 0.0:
        raise ValueError("h must be nonnegative")
    return _normalize_logs(2.0 * h / (2.0 * h + 1.0) * np.log(sigmas))


def general_limit_allocation(infos, h):
    """rho_a proportional to I_a**(-h/(2h+1)) for Fisher informations I_a."""
    infos = np.asarray(infos, dtype=float)
    if np.any(~(infos > 0.0)):
        raise ValueError("Fisher informations must be positive")
    return _normalize_logs(-h / (2.0 * h + 1.0) * np.log(infos))


def limit_allocation_for(models, h):
    if all(isinstance(m, NefModel) for m in models):
        return nef_limit_allocation([math.sqrt(true_variance(m)) for m in models], h)
    return general_limit_allocation([fisher_information(m) for m in models], h)


def _slope(v1, v2, bprime):
    return v1 + 2.0 * v2 * bprime


def gamma_constant(v1, v2, bprime0, bprime1, sigma0sq, sigma1sq, rho1, h):
    """Variance constant of sqrt(t)(p_t1 - rho1), before the 1/(1+4h) factor."""
    c1 = _slope(v1, v2, bprime1)
    c0 = _slope(v1, v2, bprime0)
    r = rho1
    bracket = math.fsum([
        c1 * c1 / (r * sigma1sq),
        c0 * c0 / ((1.0 - r) * sigma0sq),
        4.0 / r,
        4.0 / (1.0 - r),
    ])
    return h * h * r * r * (1.0 - r) ** 2 * bracket


def asym_var_randprob(gamma, h):
    return gamma / (1.0 + 4.0 * h)


def asym_var_allocation(gamma, h, rho1, v1, v2, bprimes, sigmas_sq):
    """Delta-method variance of sqrt(t)(phat_t1 - rho1) under a diagonal limit covariance.

    ``bprimes`` and ``sigmas_sq`` are (arm 0, arm 1) pairs.
    """
    if not h > 0.0:
        raise ValueError("h must be positive")
    c0 = _slope(v1, v2, bprimes[0])
    c1 = _slope(v1, v2, bprimes[1])
    r = rho1
    return math.fsum([
        gamma / (4.0 * h * h * (1.0 + 4.0 * h)),
        r * (1.0 - r) ** 2 * c1 * c1 / (4.0 * sigmas_sq[1]),
        r * r * (1.0 - r) * c0 * c0 / (4.0 * sigmas_sq[0]),
    ])


def binary_display_variance(theta0, theta1, rho1, h):
    """The Bernoulli specialisation written out in closed form."""
    s1 = theta1 * (1.0 - theta1)
    s0 = theta0 * (1.0 - theta0)
    r = rho1
    a = (1.0 - 2.0 * theta1) ** 2 / (r * s1) + (1.0 - 2.0 * theta0) ** 2 / ((1.0 - r) * s0)
    k = 1.0 + 4.0 * h
    return r * r * (1.0 - r) ** 2 / 4.0 * math.fsum(
        [a * (1.0 + 1.0 / k), 4.0 / (r * k), 4.0 / ((1.0 - r) * k)]
    )


def exponential_display_variance(rho1, h):
    r = rho1
    return r * r * (1.0 - r) ** 2 * (1.0 / r + 1.0 / (1.0 - r)) * (2.0 / (1.0 + 4.0 * h) + 1.0)


def gamma_tilde(v1, v2, bprime0, bprime1, sigma0sq, sigma1sq, rho1, h):
    """Limit covariance of the SA noise vector at the stationary point.

    Ordered as W = (p1, ytilde1, ytilde0). The (1,3) entry carries a minus
    sign: the control arm's outcome moves p1 in the opposite direction.
    """
    c1 = _slope(v1, v2, bprime1)
    c0 = _slope(v1, v2, bprime0)
    r = rho1
    g = gamma_constant(v1, v2, bprime0, bprime1, sigma0sq, sigma1sq, r, h)
    return np.array([
        [g, h * (1.0 - r) * c1, -h * r * c0],
        [h * (1.0 - r) * c1, sigma1sq / r, 0.0],
        [-h * r * c0, 0.0, sigma0sq / (1.0 - r)],
    ])


def sigma_tilde(gamma, h, sigma0sq, sigma1sq, rho1):
    """Diagonal limit covariance of sqrt(t)(W_t - W*)."""
    return np.diag([gamma / (1.0 + 4.0 * h), sigma1sq / rho1, sigma0sq / (1.0 - rho1)])


def sigma_tilde_lyapunov(gt, h):
    """Limit covariance solving (D - I/2) S + S (D - I/2)' = gt, D = diag(1+2h, 1, 1).

    Unlike :func:`sigma_tilde` this keeps the p1-ytilde cross terms.
    """
    A = np.diag([0.5 + 2.0 * h, 0.5, 0.5])
    S = solve_continuous_lyapunov(A, gt)
    return 0.5 * (S + S.T)


def allocation_gradient(v1, v2, bprime0, bprime1, sigma0sq, sigma1sq, rho1, h):
    """Gradient of the limiting map (p1, ytilde1, ytilde0) -> phat1.

    From logit(phat1) = -logit(p1)/(2h) + (log v(ytilde1) - log v(ytilde0))/2.
    """
    r = rho1
    q = r * (1.0 - r)
    return np.array([
        -1.0 / (2.0 * h),
        q * _slope(v1, v2, bprime1) / (2.0 * sigma1sq),
        -q * _slope(v1, v2, bprime0) / (2.0 * sigma0sq),
    ])


def asym_var_allocation_lyapunov(v1, v2, bprime0, bprime1, sigma0sq, sigma1sq, rho1, h):
    """Variance of sqrt(t)(phat_t1 - rho1) including the p1-ytilde covariances."""
    gt = gamma_tilde(v1, v2, bprime0, bprime1, sigma0sq, sigma1sq, rho1, h)
    S = sigma_tilde_lyapunov(gt, h)
    g = allocation_gradient(v1, v2, bprime0, bprime1, sigma0sq, sigma1sq, rho1, h)
    return float(g @ S @ g)


def eta_constants(rho, infos):
    rho = np.asarray(rho, dtype=float)
    infos = np.asarray(infos, dtype=float)
    return 1.0 / (rho * infos)


@dataclass
class AsymptoticSummary:
    rho: list
    eta: list
    gamma: float = None
    var_randprob: float = None
    var_allocation: float = None
    var_allocation_lyapunov: float = None
    sigma_tilde: list = None
    sigma_tilde_lyapunov: list = None
    gamma_tilde: list = None
    inputs: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _model_inputs(m):
    d = {"family": m.kind, "theta": float(m.theta)}
    if m.kind == "normal":
        d["sigma2"] = float(m.sigma2)
    if m.kind == "trunc_weibull":
        d.update(rate=m.rate, t0=m.t0, theta_lo=m.theta_lo, theta_hi=m.theta_hi)
    return d


def summarize(models, h):
    """All closed-form constants for the arms in ``models`` at tuning ``h``."""
    models = list(models)
    rho = limit_allocation_for(models, h)
    infos = [fisher_information(m) for m in models]
    out = AsymptoticSummary(
        rho=[float(x) for x in rho],
        eta=[float(x) for x in eta_constants(rho, infos)],
        inputs={"h": float(h), "arms": [_model_inputs(m) for m in models]},
    )
    nef = all(isinstance(m, NefModel) for m in models)
    same = len({m.kind for m in models}) == 1
    if len(models) != 2 or not nef or not same or not h > 0.0:
        return out
    m0, m1 = models
    _, v1, v2 = m1.qvf
    s0, s1 = true_variance(m0), true_variance(m1)
    r = float(rho[1])
    g = gamma_constant(v1, v2, m0.mean, m1.mean, s0, s1, r, h)
    gt = gamma_tilde(v1, v2, m0.mean, m1.mean, s0, s1, r, h)
    out.gamma = g
    out.var_randprob = asym_var_randprob(g, h)
    out.var_allocation = asym_var_allocation(g, h, r, v1, v2, (m0.mean, m1.mean), (s0, s1))
    out.var_allocation_lyapunov = asym_var_allocation_lyapunov(v1, v2, m0.mean, m1.mean, s0, s1, r, h)
    out.sigma_tilde = sigma_tilde(g, h, s0, s1, r).tolist()
    out.sigma_tilde_lyapunov = sigma_tilde_lyapunov(gt, h).tolist()
    out.gamma_tilde = gt.tolist()
    return out
