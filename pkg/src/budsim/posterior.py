"""Per-arm posterior state.

NEF arms carry the conjugate pair (n, ytilde): the effective prior-plus-data
sample size and the posterior mean. Variances follow Morris' closed forms.
Anything else uses a log-domain grid posterior over a bounded interval.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidPriorError, OutcomeSupportError

_QVF = {
    "bernoulli": lambda aux: (0.0, 1.0, -1.0),
    "exp_mean": lambda aux: (0.0, 0.0, 1.0),
    "normal": lambda aux: (float(aux), 0.0, 0.0),
}


@dataclass(frozen=True)
class ConjugateState:
    n: float
    ytilde: float
    family: str
    aux: float = 1.0  # known variance for the normal family

    def __post_init__(self):
        if self.family not in _QVF:
            raise InvalidPriorError(f"no conjugate update for family {self.family!r}")
        if not (self.n > 0.0 and math.isfinite(self.n)):
            raise InvalidPriorError(f"prior mass n must be positive, got {self.n}")
        if not math.isfinite(self.ytilde):
            raise InvalidPriorError("prior mean must be finite")
        if self.family == "bernoulli" and not 0.0 < self.ytilde < 1.0:
            raise InvalidPriorError(f"Bernoulli prior mean must be in (0, 1), got {self.ytilde}")
        if self.family == "exp_mean":
            if not self.ytilde > 0.0:
                raise InvalidPriorError(f"exponential prior mean must be positive, got {self.ytilde}")
            if not self.n > 1.0:
                # predictive variance needs Gamma shape > 2
                raise InvalidPriorError(
                    f"exponential arms need n0 > 1 (Gamma shape > 2), got n0={self.n}"
                )
        if self.family == "normal" and not self.aux > 0.0:
            raise InvalidPriorError("normal arms need a positive known variance")

    @property
    def qvf(self):
        return _QVF[self.family](self.aux)

    @classmethod
    def from_beta(cls, a, b):
        return cls(a + b, a / (a + b), "bernoulli")

    @classmethod
    def from_gamma(cls, a, b):
        """Gamma(shape a, rate b) prior on the exponential rate."""
        if not a > 2.0:
            raise InvalidPriorError(f"Gamma prior needs shape > 2, got {a}")
        return cls(a - 1.0, b / (a - 1.0), "exp_mean")

    @classmethod
    def from_normal(cls, mu0, v0sq, sigma2):
        return cls(sigma2 / v0sq, mu0, "normal", sigma2)


def variance_function(state, m=None):
    v0, v1, v2 = state.qvf
    m = state.ytilde if m is None else m
    return v0 + v1 * m + v2 * m * m


def _in_support(family, y):
    if not math.isfinite(y):
        return False
    if family == "bernoulli":
        return y == 0.0 or y == 1.0
    if family == "exp_mean":
        return y > 0.0
    return True


def conjugate_update(state, y, arm=None):
    """Absorb one outcome; returns a new state."""
    y = float(y)
    if not _in_support(state.family, y):
        who = "" if arm is None else f"arm {arm}: "
        raise OutcomeSupportError(f"{who}outcome {y!r} outside the {state.family} support")
    n = state.n
    return replace(state, n=n + 1.0, ytilde=(n * state.ytilde + y) / (n + 1.0))


def posterior_mean_variance(state):
    v2 = state.qvf[2]
    if not state.n > v2:
        raise InvalidPriorError(f"posterior variance undefined for n={state.n} <= v2={v2}")
    return state.ytilde, variance_function(state) / (state.n - v2)


def predictive_variance(state):
    _, var = posterior_mean_variance(state)
    return variance_function(state) + (1.0 + state.qvf[2]) * var


def regular_grid_weights(G, lo, hi):
    """Trapezoid weights with Gregory end corrections (exact for cubics).

    Interior weights are plain trapezoid, which stays spectrally accurate
    for posteriors concentrated away from the ends.
    """
    if G < 8:
        raise ValueError("grid needs at least 8 nodes")
    h = (hi - lo) / (G - 1)
    w = np.ones(G)
    corr = np.array([3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0])
    w[:3] = corr
    w[-3:] = corr[::-1]
    return w * h


@dataclass(frozen=True)
class GridPosterior:
    """Log-domain posterior over ``grid`` under a uniform prior.

    ``log_weights`` are max-shifted after every update so that the largest
    entry is 0. ``model`` supplies ``log_density(y, theta)`` vectorised in theta.
    """

    grid: np.ndarray
    log_weights: np.ndarray
    quad_weights: np.ndarray
    model: object

    @property
    def G(self):
        return self.grid.size

    @classmethod
    def uniform(cls, model, lo=None, hi=None, G=513):
        lo = model.theta_lo if lo is None else lo
        hi = model.theta_hi if hi is None else hi
        grid = np.linspace(lo, hi, G)
        return cls(grid, np.zeros(G), regular_grid_weights(G, lo, hi), model)

    def normalized(self):
        """Quadrature-weighted posterior masses at the nodes (sum to 1)."""
        w = self.quad_weights * np.exp(self.log_weights - self.log_weights.max())
        return w / math.fsum(w)

    def refine(self, history):
        """Same posterior at twice the resolution, rebuilt from ``history``."""
        G = 2 * self.G - 1
        gp = GridPosterior(
            np.linspace(self.grid[0], self.grid[-1], G), np.zeros(G),
            regular_grid_weights(G, self.grid[0], self.grid[-1]), self.model,
        )
        for y in history:
            gp = grid_update(gp, y)
        return gp

    def resolution_error(self):
        """Relative change in normalisation when every other node is dropped.

        For smooth, well-resolved posteriors this overstates the error of
        the full grid by orders of magnitude.
        """
        dens = np.exp(self.log_weights - self.log_weights.max())
        fine = float(np.dot(self.quad_weights, dens))
        if self.G % 2 == 0:
            return math.inf
        coarse_w = regular_grid_weights((self.G + 1) // 2, self.grid[0], self.grid[-1])
        coarse = float(np.dot(coarse_w, dens[::2]))
        return abs(fine - coarse) / fine


def grid_update(gp, y, model=None):
    """Add log f_theta(y) at every node; returns a new posterior."""
    model = gp.model if model is None else model
    if not model.in_support(float(y)):
        raise OutcomeSupportError(f"outcome {y!r} outside the support of {model.kind}")
    lw = gp.log_weights + model.log_density(float(y), gp.grid)
    top = lw.max()
    if not math.isfinite(top):
        raise FloatingPointError("grid posterior weights underflowed at every node")
    return replace(gp, log_weights=lw - top)


def grid_moments(gp):
    w = gp.normalized()
    mean = math.fsum(w * gp.grid)
    var = math.fsum(w * (gp.grid - mean) ** 2)
    return mean, var


def grid_info_increment(gp, nodes=None):
    """Expected drop in posterior variance from one more outcome.

    Uses the centred form sum_j q_j B_j^2 / m_j with m_j the predictive
    density at outcome node j and B_j = sum_i w_i (theta_i - mean) f_i(y_j),
    which equals Var(theta) - E[Var(theta | y)] without cancellation.
    """
    y, q = gp.model.predictive_nodes() if nodes is None else nodes
    w = gp.normalized()
    mean = float(np.dot(w, gp.grid))
    F = np.exp(gp.model.log_density(y[None, :], gp.grid[:, None]))
    m = w @ F
    B = (w * (gp.grid - mean)) @ F
    ok = m > 0.0
    return float(np.sum(q[ok] * B[ok] ** 2 / m[ok]))


def grid_info_increment_direct(gp, nodes=None):
    """Literal Var(theta) - E_pred[Var(theta | y)]; slower reference."""
    y, q = gp.model.predictive_nodes() if nodes is None else nodes
    _, var = grid_moments(gp)
    expected = 0.0
    for yj, qj in zip(y, q):
        w = gp.normalized()
        fj = np.exp(gp.model.log_density(float(yj), gp.grid))
        mj = float(np.dot(w, fj))
        if mj <= 0.0:
            continue
        post = w * fj / mj
        mu = float(np.dot(post, gp.grid))
        expected += qj * mj * float(np.dot(post, (gp.grid - mu) ** 2))
    return var - expected
