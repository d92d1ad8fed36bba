import dataclasses
import os
import subprocess
import sys

import numpy as np
import pytest

from budsim.engine import run_trial
from budsim.montecarlo import simulate_batch

EQUAL_FIELDS = ("counts", "status")


def batches(cfg, R, cps, **kw):
    return (simulate_batch(cfg, R, cps, backend="numba", **kw),
            simulate_batch(cfg, R, cps, backend="numpy", **kw))


@pytest.mark.parametrize("name", ["binary", "exponential", "normal"])
def test_nef_backends_agree(scenario, name):
    cfg = dataclasses.replace(scenario(name).design, n=2000)
    a, b = batches(cfg, 40, [100, 2000], record_history=True)
    for f in EQUAL_FIELDS:
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert np.array_equal(a.hist_arm, b.hist_arm)
    assert np.abs(a.p - b.p).max() < 1e-12
    assert np.abs(a.ytilde - b.ytilde).max() < 1e-10


def test_grid_backends_agree(scenario):
    cfg = dataclasses.replace(scenario("weibull").design, n=200)
    a, b = batches(cfg, 6, [50, 200], record_history=True)
    assert np.array_equal(a.hist_arm, b.hist_arm)
    assert np.array_equal(a.status, b.status)
    assert np.abs(a.p - b.p).max() < 1e-10


@pytest.mark.parametrize("name", ["binary", "weibull"])
def test_kernel_matches_reference_engine(scenario, name):
    n = 300 if name == "binary" else 80
    cfg = dataclasses.replace(scenario(name).design, n=n)
    b = simulate_batch(cfg, 3, [n], record_history=True)
    for r in range(3):
        st_, _ = run_trial(cfg, r)
        arms = [a for a, _ in st_.history]
        assert arms == b.hist_arm[r].tolist()
        assert np.abs(st_.p - b.p[r, 0]).max() < 1e-10


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_thread_count_invariance(scenario, backend):
    cfg = dataclasses.replace(scenario("exponential").design, n=500)
    ref = simulate_batch(cfg, 300, [500], threads=1, backend=backend)
    for threads in (4, 8):
        other = simulate_batch(cfg, 300, [500], threads=threads, backend=backend)
        assert np.array_equal(ref.p, other.p) and np.array_equal(ref.counts, other.counts)


def test_env_flag_selects_numpy():
    code = "from budsim import backend_name; print(backend_name())"
    env = {**os.environ, "BUDSIM_BACKEND": "numpy"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env = {**os.environ, "BUDSIM_DISABLE_NUMBA": "1"}
    env.pop("BUDSIM_BACKEND", None)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"


def test_unknown_backend(scenario):
    with pytest.raises(ValueError):
        simulate_batch(scenario("binary").design, 2, [100], backend="cuda")
