"""Counter-based uniform generator.

A draw is a pure function of ``(seed, replicate, counter)``: the replicate key
is a double SplitMix64 hash of seed and replicate index, and the draw is the
SplitMix64 finaliser applied to ``key + (counter + 1) * golden``. Nothing is
carried between draws, so results do not depend on how replicates are
scheduled over workers. The scalar functions compile under numba; the
``*_array`` variants are the numpy equivalents and agree bit for bit.
"""
import numpy as np

from ._backend import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO53_INV = 1.0 / 9007199254740992.0

# uniforms consumed per enrollment: assignment, outcome u1, outcome u2, spare
DRAWS_PER_STEP = 4

MASK64 = (1 << 64) - 1


@njit
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def stream_key(seed, replicate):
    return mix64(mix64(np.uint64(seed) + _GOLDEN) ^ np.uint64(replicate))


@njit
def uniform(key, counter):
    """Uniform on the open interval (0, 1)."""
    z = mix64(np.uint64(key) + (np.uint64(counter) + _ONE) * _GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _TWO53_INV


def _mix64_array(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_key_array(seed, replicates):
    reps = np.asarray(replicates).astype(np.uint64)
    with np.errstate(over="ignore"):
        base = _mix64_array(np.array([seed], dtype=np.uint64) + _GOLDEN)
        return _mix64_array(base ^ reps)


def uniform_array(keys, counters):
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = _mix64_array(keys + (counters + _ONE) * _GOLDEN)
    return ((z >> _S11).astype(np.float64) + 0.5) * _TWO53_INV


def check_seed(seed):
    if isinstance(seed, float) and not seed.is_integer():
        raise ValueError(f"seed must be an integer, got {seed}")
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


class CounterStream:
    """Sequential view over one replicate's counter space."""

    def __init__(self, seed, replicate=0, counter=0):
        self.seed = check_seed(seed)
        self.replicate = int(replicate)
        self.key = stream_key_array(self.seed, np.array([self.replicate]))[0]
        self.counter = int(counter)

    def at(self, counter):
        return CounterStream(self.seed, self.replicate, counter)

    def uniform(self):
        u = float(uniform_array(np.array([self.key]), np.array([self.counter]))[0])
        self.counter += 1
        return u

    def uniforms(self, size):
        c = np.arange(self.counter, self.counter + size, dtype=np.uint64)
        out = uniform_array(np.full(size, self.key, dtype=np.uint64), c)
        self.counter += size
        return out
