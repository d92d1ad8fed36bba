import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budsim.rng import CounterStream, check_seed, stream_key, stream_key_array, uniform, uniform_array


def test_uniforms_in_open_unit_interval():
    u = CounterStream(1, 0).uniforms(100_000)
    assert u.min() > 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)


@settings(deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6), st.integers(0, 2**40))
def test_scalar_and_array_streams_agree(seed, rep, counter):
    k = np.uint64(stream_key(np.uint64(seed), np.uint64(rep)))
    ka = stream_key_array(seed, np.array([rep]))
    assert int(k) == int(ka[0])
    assert uniform(k, np.uint64(counter)) == uniform_array(ka, np.array([counter], dtype=np.uint64))[0]


def test_counter_addressing_is_random_access():
    s = CounterStream(42, 3)
    seq = [s.uniform() for _ in range(10)]
    assert CounterStream(42, 3, counter=7).uniform() == seq[7]
    assert s.at(2).uniform() == seq[2]


def test_replicates_are_distinct_streams():
    a = CounterStream(5, 0).uniforms(8)
    b = CounterStream(5, 1).uniforms(8)
    assert not np.any(a == b)


@pytest.mark.parametrize("bad", [-1, 2**64, 1.5])
def test_check_seed_rejects(bad):
    with pytest.raises(ValueError):
        check_seed(bad)
