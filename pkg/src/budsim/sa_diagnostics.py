"""Stochastic-approximation structure of the two-arm NEF-QVF design.

W_t = (p1, ytilde1, ytilde0) evolves as
W_{t+1} = W_t - g(W_t)/t + (dM_{t+1} + r_{t+1})/t with noise G = -g + dM.
This module evaluates g, G and dM exactly, estimates their moments by
Monte Carlo, differentiates g numerically and measures the remainders
along simulated paths.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .outcome_models import NefModel, sample_from_uniforms
from .rng import stream_key_array, uniform_array


@dataclass(frozen=True)
class SAState:
    p1: float
    y1: float
    y0: float

    def __post_init__(self):
        if not 0.0 < self.p1 < 1.0:
            raise DomainError(f"p1 must lie strictly inside (0, 1), got {self.p1}")

    def vector(self):
        return np.array([self.p1, self.y1, self.y0])


@dataclass(frozen=True)
class SANoiseSample:
    G: float
    G1: float
    G0: float

    def vector(self):
        return np.array([self.G, self.G1, self.G0])


def _qvf(models):
    """Per-arm QVF coefficients (arm 0, arm 1); v1 and v2 are shared by the family."""
    m0, m1 = models
    if not (isinstance(m0, NefModel) and isinstance(m1, NefModel)) or m0.kind != m1.kind:
        raise NotImplementedError("SA diagnostics need two arms from one NEF-QVF family")
    return m0.qvf, m1.qvf


def _V(q, y):
    return q[0] + q[1] * y + q[2] * y * y


def _slope(q, y):
    return q[1] + 2.0 * q[2] * y


def _k(p1, y1, y0, q, h):
    """(k1, k0) at W; v(.) is the standard deviation sqrt(V(.))."""
    v1 = math.sqrt(_V(q[1], y1))
    v0 = math.sqrt(_V(q[0], y0))
    k1 = 1.0 + (p1 / (1.0 - p1)) ** (1.0 / (2.0 * h)) * v0 / v1
    k0 = 1.0 + ((1.0 - p1) / p1) ** (1.0 / (2.0 * h)) * v1 / v0
    return k1, k0


def stationary_point(models, h):
    from .asymptotics import nef_limit_allocation

    q = _qvf(models)
    sig = [math.sqrt(_V(q[a], m.mean)) for a, m in enumerate(models)]
    rho1 = float(nef_limit_allocation(sig, h)[1])
    return SAState(rho1, models[1].mean, models[0].mean)


def drift(w, models, h, bprimes=None):
    """g(W) = -E[G | W] as the three closed-form components.

    ``bprimes`` overrides the truth means (plug-in variant); the default is
    the truth models' b'(psi_a), ordered (arm 0, arm 1).
    """
    if not isinstance(w, SAState):
        w = SAState(*w)
    if not h > 0.0:
        raise DomainError("drift needs h > 0")
    q = _qvf(models)
    b0, b1 = (models[0].mean, models[1].mean) if bprimes is None else bprimes
    p, y1, y0 = w.p1, w.y1, w.y0
    V1, V0 = _V(q[1], y1), _V(q[0], y0)
    if not (V1 > 0.0 and V0 > 0.0):
        raise DomainError("variance function must be positive at W")
    k1, k0 = _k(p, y1, y0, q, h)
    e = 1.0 / (2.0 * h)
    first = (-2.0 * h * math.sqrt(V1 / V0) * (1.0 - p) ** ((2.0 * h + 1.0) * e)
             / p ** ((1.0 - 2.0 * h) * e) * k1 * k1 * (1.0 / k1 - p))
    second = -h * p * (1.0 - p) * (
        p * _slope(q[1], y1) * (b1 - y1) / V1 * k1
        - (1.0 - p) * _slope(q[0], y0) * (b0 - y0) / V0 * k0
    )
    g = first + second
    g1 = -p * (b1 - y1) * k1
    g0 = -(1.0 - p) * (b0 - y0) * k0
    return np.array([g, g1, g0])


def noise_sample(w, a_draw, y_draw, h, models):
    """G_{t+1} components for one realised (A_{t+1}, Y_{t+1})."""
    if not isinstance(w, SAState):
        w = SAState(*w)
    if a_draw not in (0, 1):
        raise ValueError("a_draw must be 0 or 1")
    q = _qvf(models)
    if not models[a_draw].in_support(float(y_draw)):
        raise ValueError(f"outcome {y_draw} outside the support")
    p, y1, y0 = w.p1, w.y1, w.y0
    k1, k0 = _k(p, y1, y0, q, h)
    hp = h * p * (1.0 - p)
    if a_draw == 1:
        G = hp * (_slope(q[1], y1) * (y_draw - y1) / _V(q[1], y1) - 2.0) * k1
        return SANoiseSample(G, (y_draw - y1) * k1, 0.0)
    G = hp * (2.0 - _slope(q[0], y0) * (y_draw - y0) / _V(q[0], y0)) * k0
    return SANoiseSample(G, 0.0, (y_draw - y0) * k0)


def martingale_increment(sample, w, models, h):
    return sample.vector() + drift(w, models, h)


def noise_batch(w, models, h, n_draws, seed=0, replicate=0):
    """Vectorised G draws at fixed W; returns an (n_draws, 3) array.

    Assignment and outcome use counter-based uniforms from one stream.
    """
    if not isinstance(w, SAState):
        w = SAState(*w)
    q = _qvf(models)
    p, y1, y0 = w.p1, w.y1, w.y0
    k1, k0 = _k(p, y1, y0, q, h)
    key = stream_key_array(seed, np.array([replicate]))[0]
    c = np.arange(n_draws, dtype=np.uint64) * np.uint64(3)
    keys = np.full(n_draws, key, dtype=np.uint64)
    ua = uniform_array(keys, c)
    u1 = uniform_array(keys, c + np.uint64(1))
    u2 = uniform_array(keys, c + np.uint64(2))
    A = ua < p
    Y = np.where(A, sample_from_uniforms(models[1], u1, u2), sample_from_uniforms(models[0], u1, u2))
    hp = h * p * (1.0 - p)
    out = np.zeros((n_draws, 3))
    out[:, 0] = np.where(
        A,
        hp * (_slope(q[1], y1) * (Y - y1) / _V(q[1], y1) - 2.0) * k1,
        hp * (2.0 - _slope(q[0], y0) * (Y - y0) / _V(q[0], y0)) * k0,
    )
    out[:, 1] = np.where(A, (Y - y1) * k1, 0.0)
    out[:, 2] = np.where(A, 0.0, (Y - y0) * k0)
    return out


@dataclass
class MomentCheck:
    mean: np.ndarray
    mean_se: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray
    n: int

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def noise_moments(w, models, h, n_draws=10**6, seed=0):
    """Sample mean and covariance of G with standard errors."""
    X = noise_batch(w, models, h, n_draws, seed)
    mu = X.mean(axis=0)
    D = X - mu
    prods = D[:, :, None] * D[:, None, :]
    cov = prods.mean(axis=0) * n_draws / (n_draws - 1)
    cov_se = prods.std(axis=0, ddof=1) / math.sqrt(n_draws)
    return MomentCheck(mu, X.std(axis=0, ddof=1) / math.sqrt(n_draws), cov, cov_se, n_draws)


def martingale_moments(w, models, h, n_draws=10**6, seed=0):
    """Mean of dM = G + g(W) with its standard error."""
    X = noise_batch(w, models, h, n_draws, seed) + drift(w, models, h)
    return X.mean(axis=0), X.std(axis=0, ddof=1) / math.sqrt(n_draws)


def jacobian_at(w, h, models, fd_step=1e-5, max_shrinks=5):
    """Central finite-difference Jacobian of the drift.

    A step that leaves the domain is halved, at most ``max_shrinks`` times.
    """
    if not 1e-7 <= fd_step <= 1e-3:
        raise ValueError("fd_step must lie in [1e-7, 1e-3]")
    x = w.vector() if isinstance(w, SAState) else np.asarray(w, dtype=float)
    J = np.empty((3, 3))
    for j in range(3):
        step = fd_step * max(1.0, abs(x[j]))
        for attempt in range(max_shrinks + 1):
            e = np.zeros(3)
            e[j] = step
            try:
                J[:, j] = (drift(x + e, models, h) - drift(x - e, models, h)) / (2.0 * step)
                break
            except DomainError:
                if attempt == max_shrinks:
                    raise
                step /= 2.0
    return J


def swap_arms(w):
    """(p1, y1, y0) -> (1 - p1, y0, y1), the relabelled state."""
    if not isinstance(w, SAState):
        w = SAState(*w)
    return SAState(1.0 - w.p1, w.y0, w.y1)


SWAP_MATRIX = np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


def residual_path(states, models, h):
    """Remainders r_{t+1} = t (W_{t+1} - W_t) - G_{t+1} along one path.

    ``states`` is the snapshot list filled by ``engine.run_trial``; entry t
    holds (t, p, posterior means, A_t, Y_t). Returns arrays
    (t, r, arm, y_minus_ytilde) with r of shape (T, 3); ``arm`` is A_{t+1}.
    """
    _qvf(models)
    ts, res, arms, dev = [], [], [], []
    for cur, nxt in zip(states[1:-1], states[2:]):
        t, p, means = cur[0], cur[1], cur[2]
        a, y = nxt[3], nxt[4]
        w = SAState(p[1], means[1], means[0])
        w_next = np.array([nxt[1][1], nxt[2][1], nxt[2][0]])
        G = noise_sample(w, a, y, h, models).vector()
        ts.append(t)
        res.append(t * (w_next - w.vector()) - G)
        arms.append(a)
        dev.append(y - means[a])
    return np.array(ts), np.array(res), np.array(arms), np.array(dev)


def residual_decay(states, models, h, kmin=1):
    """Windowed medians of t*|r_{t+1}| over dyadic windows [2^k, 2^{k+1}).

    The p1 component uses every step; the ytilde_a components use only the
    steps that sampled arm a (elsewhere they vanish identically). Each
    ytilde_a window also reports t*|r|/|Y - ytilde_a|, which removes the
    outcome-noise factor. Bounded medians are consistent with r = O_P(1/t);
    ``growth`` holds window-to-window ratios.
    """
    t, r, arm, dev = residual_path(states, models, h)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("non-finite remainder on the path")
    tr = t[:, None] * np.abs(r)
    windows = []
    k = kmin
    while 2 ** k <= t.max():
        sel = (t >= 2 ** k) & (t < 2 ** (k + 1))
        med, scaled = [float(np.median(tr[sel, 0]))], []
        for col, a in ((1, 1), (2, 0)):
            on = sel & (arm == a)
            med.append(float(np.median(tr[on, col])) if on.any() else None)
            ok = on & (dev != 0.0)
            scaled.append(float(np.median(tr[ok, col] / np.abs(dev[ok]))) if ok.any() else None)
        windows.append({"k": k, "t_lo": 2 ** k, "t_hi": 2 ** (k + 1), "n": int(sel.sum()),
                        "median_t_abs_r": med, "median_scaled_ytilde": scaled})
        k += 1
    growth = []
    for prev, cur in zip(windows, windows[1:]):
        ratio = [None if (c is None or pv is None or pv == 0.0) else c / pv
                 for c, pv in zip(cur["median_t_abs_r"], prev["median_t_abs_r"])]
        growth.append({"k": cur["k"], "ratio": ratio})
    return {"windows": windows, "growth": growth, "all_finite": True,
            "max_t_abs_r": tr.max(axis=0).tolist()}


def no_growth(report, kmin=7, factor=2.0):
    """True if no windowed median at k >= kmin exceeds ``factor`` times its predecessor."""
    for g in report["growth"]:
        if g["k"] > kmin and any(x is not None and x > factor for x in g["ratio"]):
            return False
    return True
