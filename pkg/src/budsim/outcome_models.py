"""Truth-level outcome distributions and their analytic constants."""
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ._backend import njit
from .errors import QuadratureError

BERNOULLI = 0
EXP_MEAN = 1
NORMAL = 2
TRUNC_WEIBULL = 3

FAMILY_CODES = {
    "bernoulli": BERNOULLI,
    "exp_mean": EXP_MEAN,
    "normal": NORMAL,
    "trunc_weibull": TRUNC_WEIBULL,
}

# power of the substitution y = t0 * x**k used for quadrature over (0, t0);
# it absorbs the y**(theta - 1) endpoint behaviour down to theta = 1/k
_ENDPOINT_POWER = 5


@dataclass(frozen=True)
class NefModel:
    """Mean-parameterised NEF member with quadratic variance function.

    ``kind`` is one of ``"bernoulli"``, ``"exp_mean"`` or ``"normal"``;
    ``sigma2`` is the known variance and only used by ``"normal"``.
    """

    kind: str
    theta: float
    sigma2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bernoulli", "exp_mean", "normal"):
            raise ValueError(f"unknown NEF family {self.kind!r}")
        th = float(self.theta)
        if not math.isfinite(th):
            raise ValueError("theta must be finite")
        if self.kind == "bernoulli" and not 0.0 < th < 1.0:
            raise ValueError(f"Bernoulli theta must lie in (0, 1), got {th}")
        if self.kind == "exp_mean" and not th > 0.0:
            raise ValueError(f"exponential mean must be positive, got {th}")
        if self.kind == "normal" and not self.sigma2 > 0.0:
            raise ValueError(f"normal variance must be positive, got {self.sigma2}")

    @property
    def code(self):
        return FAMILY_CODES[self.kind]

    @property
    def qvf(self):
        """Coefficients (v0, v1, v2) with variance = v0 + v1*m + v2*m**2."""
        if self.kind == "bernoulli":
            return (0.0, 1.0, -1.0)
        if self.kind == "exp_mean":
            return (0.0, 0.0, 1.0)
        return (float(self.sigma2), 0.0, 0.0)

    @property
    def mean(self):
        """b'(psi), the outcome mean."""
        return float(self.theta)

    @property
    def psi(self):
        """Canonical parameter of exp{y*psi - b(psi)}."""
        th = float(self.theta)
        if self.kind == "bernoulli":
            return math.log(th / (1.0 - th))
        if self.kind == "exp_mean":
            return -1.0 / th
        return th / self.sigma2

    def in_support(self, y):
        if self.kind == "bernoulli":
            return y == 0.0 or y == 1.0
        if self.kind == "exp_mean":
            return y > 0.0 and math.isfinite(y)
        return math.isfinite(y)

    def log_density(self, y, theta=None):
        """log f_theta(y); vectorised over ``theta``."""
        th = np.asarray(self.theta if theta is None else theta, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind == "bernoulli":
                return np.where(np.asarray(y) == 1.0, np.log(th), np.log1p(-th))
            if self.kind == "exp_mean":
                return -np.log(th) - y / th
        return -0.5 * np.log(2 * np.pi * self.sigma2) - 0.5 * (y - th) ** 2 / self.sigma2

    def predictive_nodes(self):
        """Quadrature over the outcome space, as (nodes, weights)."""
        if self.kind == "bernoulli":
            return np.array([0.0, 1.0]), np.array([1.0, 1.0])
        raise NotImplementedError(f"{self.kind} outcomes have unbounded support")

    def params(self):
        if self.kind == "normal":
            return (float(self.theta), math.sqrt(self.sigma2), 0.0)
        return (float(self.theta), 0.0, 0.0)


@dataclass(frozen=True)
class TruncatedWeibullModel:
    """Weibull with known rate, truncated to (0, t0), unknown shape ``theta``.

    ``theta_lo``/``theta_hi`` bound the shape parameter space; the grid
    posterior places its uniform prior there.
    """

    rate: float = 1.0
    t0: float = 3.0
    theta: float = 1.0
    theta_lo: float = 0.2
    theta_hi: float = 5.0

    kind = "trunc_weibull"

    def __post_init__(self):
        if not self.rate > 0.0 or not self.t0 > 0.0:
            raise ValueError("rate and t0 must be positive")
        if not 0.0 < self.theta_lo < self.theta_hi:
            raise ValueError("need 0 < theta_lo < theta_hi")
        if not self.theta_lo < self.theta < self.theta_hi:
            raise ValueError(
                f"theta={self.theta} outside ({self.theta_lo}, {self.theta_hi})"
            )

    @property
    def code(self):
        return TRUNC_WEIBULL

    def _log_norm(self, theta):
        s = (self.rate * self.t0) ** np.asarray(theta, dtype=float)
        return np.log(-np.expm1(-s))

    def in_support(self, y):
        return 0.0 < y < self.t0

    def log_density(self, y, theta=None):
        """log f_theta(y); vectorised over ``y`` or ``theta`` (not both)."""
        th = np.asarray(self.theta if theta is None else theta, dtype=float)
        ly = np.log(self.rate * np.asarray(y, dtype=float))
        return (np.log(self.rate * th) + (th - 1.0) * ly - np.exp(th * ly)
                - self._log_norm(th))

    def density(self, y, theta=None):
        return np.exp(self.log_density(y, theta))

    def cdf(self, y, theta=None):
        th = self.theta if theta is None else theta
        y = np.asarray(y, dtype=float)
        s = (self.rate * self.t0) ** th
        return np.expm1(-(self.rate * y) ** th) / np.expm1(-s)

    def ppf(self, u, theta=None):
        """Closed-form inverse of the truncated CDF."""
        th = self.theta if theta is None else theta
        s = (self.rate * self.t0) ** th
        return (-np.log1p(np.asarray(u, dtype=float) * np.expm1(-s))) ** (1.0 / th) / self.rate

    def score(self, y, theta=None):
        """d/dtheta log f_theta(y)."""
        th = self.theta if theta is None else theta
        ly = np.log(self.rate * np.asarray(y, dtype=float))
        s = (self.rate * self.t0) ** th
        L = math.log(self.rate * self.t0)
        return 1.0 / th + ly - np.exp(th * ly) * ly - L * s / np.expm1(s)

    def score_derivative(self, y, theta=None):
        """d^2/dtheta^2 log f_theta(y)."""
        th = self.theta if theta is None else theta
        ly = np.log(self.rate * np.asarray(y, dtype=float))
        s = (self.rate * self.t0) ** th
        L = math.log(self.rate * self.t0)
        em1 = math.expm1(s)
        dphi = (em1 - s * (em1 + 1.0)) / em1 ** 2
        return -1.0 / th ** 2 - np.exp(th * ly) * ly ** 2 - L * L * s * dphi

    def predictive_nodes(self, m=128):
        """Gauss-Legendre nodes for integrals over (0, t0).

        Uses y = t0 * x**5 so densities with shape down to 0.2 stay smooth.
        """
        x, w = np.polynomial.legendre.leggauss(m)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        k = _ENDPOINT_POWER
        y = self.t0 * x ** k
        return y, w * k * self.t0 * x ** (k - 1)

    def params(self):
        return (float(self.theta), float(self.rate), float(self.t0))


def gauss_legendre_integral(func, model, tol=1e-9, start=128, max_nodes=8192):
    """Integrate ``func(y)`` over (0, t0), doubling nodes until stable."""
    m = start
    prev = None
    while m <= max_nodes:
        y, w = model.predictive_nodes(m)
        val = float(np.dot(w, func(y)))
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
        m *= 2
    raise QuadratureError(
        f"Gauss-Legendre did not settle to {tol:g} by {max_nodes} nodes "
        f"(last change {abs(val - prev):.3g})"
    )


def sample_from_uniforms(model, u1, u2):
    """Inverse-transform draws from two uniform arrays on (0, 1)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if model.kind == "bernoulli":
        return (u1 < model.theta).astype(float)
    if model.kind == "exp_mean":
        return -model.theta * np.log(u1)
    if model.kind == "normal":
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return model.theta + math.sqrt(model.sigma2) * z
    return model.ppf(u1)


def sample_outcome(model, stream):
    """One outcome; always consumes two uniforms from ``stream``."""
    u = stream.uniforms(2)
    return float(sample_from_uniforms(model, u[0], u[1]))


@njit
def draw_outcome(code, a, b, c, u1, u2):
    """Scalar counterpart of :func:`sample_from_uniforms` for kernels.

    (a, b, c) are the packed ``params()`` of the model.
    """
    if code == BERNOULLI:
        return 1.0 if u1 < a else 0.0
    if code == EXP_MEAN:
        return -a * np.log(u1)
    if code == NORMAL:
        return a + b * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    s = (b * c) ** a
    return (-np.log1p(u1 * np.expm1(-s))) ** (1.0 / a) / b


def true_variance(model):
    if model.kind == "bernoulli":
        return model.theta * (1.0 - model.theta)
    if model.kind == "exp_mean":
        return model.theta ** 2
    if model.kind == "normal":
        return float(model.sigma2)
    m1 = gauss_legendre_integral(lambda y: y * model.density(y), model, tol=1e-12)
    m2 = gauss_legendre_integral(lambda y: y * y * model.density(y), model, tol=1e-12)
    return m2 - m1 * m1


def fisher_information(model, theta=None):
    """Fisher information of the model's parameter at ``theta``.

    NEF members use the mean parameterisation. The truncated Weibull shape
    information is computed by adaptive quadrature of the squared score.
    """
    th = model.theta if theta is None else float(theta)
    if model.kind == "bernoulli":
        return 1.0 / (th * (1.0 - th))
    if model.kind == "exp_mean":
        return 1.0 / th ** 2
    if model.kind == "normal":
        return 1.0 / model.sigma2
    k = _ENDPOINT_POWER

    def integrand(x):
        y = model.t0 * x ** k
        jac = k * model.t0 * x ** (k - 1)
        return float(model.score(y, th) ** 2 * model.density(y, th) * jac)

    val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-11, limit=200)
    if not (val > 0.0 and err <= 1e-7 * val):
        raise QuadratureError(
            f"Fisher information quadrature did not converge: value {val:.6g}, "
            f"error estimate {err:.3g}"
        )
    return val
