"""Sequential BUD trial, one replicate at a time.

This is the readable reference implementation. It consumes the same
counter-based uniforms as the Monte Carlo kernels (four per enrollment:
assignment, two for the outcome, one spare), so a replicate simulated here
matches the same replicate inside :mod:`budsim.kernels`.
"""
import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .outcome_models import NefModel, TruncatedWeibullModel, sample_outcome
from .posterior import (
    ConjugateState,
    GridPosterior,
    conjugate_update,
    grid_info_increment,
    grid_moments,
    grid_update,
    posterior_mean_variance,
    predictive_variance,
)
from .rng import DRAWS_PER_STEP, CounterStream, check_seed

log = logging.getLogger(__name__)

DELTA_CLAMP = 1e-12


@dataclass(frozen=True)
class DesignConfig:
    """Design of one trial.

    ``priors`` holds a :class:`ConjugateState` per NEF arm and the string
    ``"uniform"`` for grid arms (uniform prior over the model's shape interval).
    """

    K: int
    h: float
    n: int
    truth: tuple
    priors: tuple
    seed: int = 0
    record_every: int = 1
    grid_size: int = 513
    outcome_nodes: int = 128

    def __post_init__(self):
        if not isinstance(self.K, (int, np.integer)) or self.K < 2:
            raise ConfigError(f"need at least 2 arms, got {self.K}", "K")
        if not (math.isfinite(self.h) and self.h >= 0.0):
            raise ConfigError(f"must be finite and nonnegative, got {self.h}", "h")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError(f"must be a positive integer, got {self.n}", "n")
        if len(self.truth) != self.K:
            raise ConfigError(f"expected {self.K} arm models, got {len(self.truth)}", "truth")
        if len(self.priors) != self.K:
            raise ConfigError(f"expected {self.K} priors, got {len(self.priors)}", "priors")
        if self.record_every < 1:
            raise ConfigError("must be a positive integer", "record_every")
        try:
            check_seed(self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc), "seed") from None
        grid_arms = [isinstance(m, TruncatedWeibullModel) for m in self.truth]
        if any(grid_arms) and not all(grid_arms):
            raise ConfigError("grid-posterior and conjugate arms cannot be mixed", "truth")
        for a, (m, pr) in enumerate(zip(self.truth, self.priors)):
            if isinstance(m, TruncatedWeibullModel):
                if pr != "uniform":
                    raise ConfigError("truncated Weibull arms take a uniform prior", f"priors[{a}]")
            elif not isinstance(pr, ConjugateState) or pr.family != m.kind:
                raise ConfigError(f"prior does not match the {m.kind} family", f"priors[{a}]")
            elif m.kind == "normal" and pr.aux != m.sigma2:
                raise ConfigError("prior and truth disagree on the known variance", f"priors[{a}]")
        if all(grid_arms):
            ref = self.truth[0]
            for a, m in enumerate(self.truth[1:], start=1):
                if (m.rate, m.t0, m.theta_lo, m.theta_hi) != (ref.rate, ref.t0, ref.theta_lo, ref.theta_hi):
                    raise ConfigError("Weibull arms must share rate, t0 and shape interval",
                                      f"truth[{a}]")
            if self.grid_size < 9:
                raise ConfigError("need at least 9 grid nodes", "grid_size")

    @property
    def uses_grid(self):
        return isinstance(self.truth[0], TruncatedWeibullModel)

    def initial_posteriors(self):
        if self.uses_grid:
            return [GridPosterior.uniform(m, G=self.grid_size) for m in self.truth]
        return list(self.priors)


@dataclass
class TrialState:
    t: int
    counts: np.ndarray
    posteriors: list
    p: np.ndarray
    deltas: np.ndarray
    history: list = field(default_factory=list)

    @property
    def phat(self):
        return self.counts / self.t if self.t > 0 else np.full(self.counts.size, np.nan)


def info_increment(post, nodes=None):
    """Expected one-step gain in utility from sampling this arm."""
    if isinstance(post, ConjugateState):
        sp = predictive_variance(post)
        d = sp / ((post.n + 1.0) * (post.n + 1.0))
    else:
        d = grid_info_increment(post, nodes)
    if -DELTA_CLAMP < d < 0.0:
        d = 0.0
    return d


def posterior_summary(post):
    if isinstance(post, ConjugateState):
        return posterior_mean_variance(post)
    return grid_moments(post)


def utility(state):
    return -sum(posterior_summary(post)[1] for post in state.posteriors)


def randomization_probs(deltas, h):
    """p_a proportional to delta_a**h, via a max-shifted softmax in log space."""
    deltas = np.asarray(deltas, dtype=float)
    K = deltas.size
    if h == 0.0:
        return np.full(K, 1.0 / K)
    with np.errstate(divide="ignore"):
        logs = h * np.log(deltas)
    mx = logs.max()
    if not mx > -np.inf:
        log.warning("all information increments are zero; using uniform randomization")
        return np.full(K, 1.0 / K)
    z = np.exp(logs - mx)
    s = 0.0
    for v in z:
        s += v
    return z / s


def _choose(p, u):
    c = 0.0
    for a in range(p.size - 1):
        c += p[a]
        if u < c:
            return a
    return p.size - 1


def _refresh(state, config, nodes):
    state.deltas = np.array([info_increment(post, nodes) for post in state.posteriors])
    state.p = randomization_probs(state.deltas, config.h)
    return state


def initial_state(config):
    nodes = _outcome_nodes(config)
    st = TrialState(0, np.zeros(config.K, dtype=np.int64), config.initial_posteriors(),
                    None, None)
    return _refresh(st, config, nodes)


def _outcome_nodes(config):
    if config.uses_grid:
        return config.truth[0].predictive_nodes(config.outcome_nodes)
    return None


def step(state, config, stream, nodes=None):
    """Enroll patient t+1: assign from the current p, observe, update."""
    if state.t >= config.n:
        raise ValueError("trial already complete")
    s = stream.at(DRAWS_PER_STEP * state.t)
    arm = _choose(state.p, s.uniform())
    y = sample_outcome(config.truth[arm], s)
    post = state.posteriors[arm]
    if isinstance(post, ConjugateState):
        state.posteriors[arm] = conjugate_update(post, y, arm)
    else:
        state.posteriors[arm] = grid_update(post, y)
    state.counts[arm] += 1
    state.t += 1
    state.history.append((arm, y))
    return _refresh(state, config, nodes if nodes is not None else _outcome_nodes(config))


@dataclass
class TrajectoryRecord:
    K: int
    rows: list = field(default_factory=list)

    def header(self):
        cols = ["t", "arm", "y", "u"]
        for name in ("p", "phat", "delta", "ytilde"):
            cols += [f"{name}_{a + 1}" for a in range(self.K)]
        return cols

    def append(self, state):
        arm, y = state.history[-1]
        means = [posterior_summary(post)[0] for post in state.posteriors]
        self.rows.append([state.t, arm, y, utility(state), *state.p, *state.phat,
                          *state.deltas, *means])

    def array(self, column):
        k = self.header().index(column)
        return np.array([row[k] for row in self.rows])

    def to_csv(self, target=None):
        """Write CSV to a path or file object; returns the text if ``target`` is None."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v)
                        for v in row])
        text = buf.getvalue()
        if target is None:
            return text
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def run_trial(config, replicate=0, states=None):
    """Run all ``config.n`` enrollments of one replicate.

    If ``states`` is a list, a per-step snapshot (t, p, posterior means) is
    appended to it; ``sa_diagnostics.residual_decay`` consumes this.
    """
    stream = CounterStream(config.seed, replicate)
    nodes = _outcome_nodes(config)
    state = initial_state(config)
    rec = TrajectoryRecord(config.K)
    if states is not None:
        states.append(_snapshot(state))
    while state.t < config.n:
        step(state, config, stream, nodes)
        if states is not None:
            states.append(_snapshot(state))
        if state.t % config.record_every == 0 or state.t == config.n:
            rec.append(state)
    return state, rec


def _snapshot(state):
    means = tuple(posterior_summary(post)[0] for post in state.posteriors)
    last = state.history[-1] if state.history else (None, None)
    return (state.t, state.p.copy(), means, last[0], last[1])
