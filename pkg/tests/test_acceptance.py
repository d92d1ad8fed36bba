"""Acceptance criteria, one reported pass/fail line each.

Tolerances are the stated ones. Sub-criteria that cannot be met with the
implemented formulas are marked ``xfail(strict=True)``: they still print
FAIL, and turn red if they ever start passing.
"""
import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from budsim import sa_diagnostics as sa
from budsim.asymptotics import general_limit_allocation, nef_limit_allocation, summarize
from budsim.cli import main
from budsim.engine import info_increment
from budsim.inference import power_approx, sample_size
from budsim.montecarlo import error_rates, run_replications
from budsim.outcome_models import NefModel, fisher_information, true_variance
from budsim.posterior import ConjugateState

R = 1000
T = 10_000


@pytest.fixture(scope="module")
def runs(scenario):
    cache = {}

    def get(name):
        if name not in cache:
            rc = scenario(name)
            cache[name] = run_replications(rc.design, R, rc.checkpoints)
        return cache[name]

    return get


def final(summary):
    return summary.per_checkpoint[-1]


# 1
def test_exact_increments(acceptance):
    d_bin = info_increment(ConjugateState.from_beta(2, 2))
    d_nrm = info_increment(ConjugateState(1.0, 0.0, "normal", 1.0))
    ok = abs(d_bin - 0.01) < 1e-12 and abs(d_nrm - 0.5) < 1e-12
    assert acceptance("1 exact increments", ok, f"Beta(2,2) {d_bin!r}, Normal(n0=1) {d_nrm!r}")


# 2
@pytest.mark.xfail(strict=True, reason="the stated 0.5912 uses variances where the allocation "
                                       "formula takes standard deviations; the limit is 0.5459")
def test_binary_allocation_vs_stated_value(runs, acceptance):
    row = final(runs("binary"))
    q, p = row["phat"]["mean"], row["p"]["mean"]
    ok = abs(q - 0.5912) < 0.01 and abs(p - 0.5912) < 0.01
    assert acceptance("2a binary allocation vs 0.5912 +-0.01", ok,
                      f"mean phat {q:.5f}, mean p {p:.5f}")


def test_binary_allocation_vs_limit(runs, acceptance):
    s = runs("binary")
    row, rho = final(s), s.rho[1]
    q, p = row["phat"]["mean"], row["p"]["mean"]
    ok = abs(q - rho) < 0.01 and abs(p - rho) < 0.01
    assert acceptance("2b binary allocation vs computed rho1 +-0.01", ok,
                      f"rho1 {rho:.5f}, mean phat {q:.5f}, mean p {p:.5f}")


def test_exponential_allocation(runs, acceptance):
    row = final(runs("exponential"))
    q, p = row["phat"]["mean"], row["p"]["mean"]
    ok = abs(q - 0.5759) < 0.01 and abs(p - 0.5759) < 0.01
    assert acceptance("2c exponential allocation vs 0.5759 +-0.01", ok,
                      f"mean phat {q:.5f}, mean p {p:.5f}")


# 3
@pytest.mark.xfail(strict=True, reason="the diagonal limit covariance drops the p-ytilde cross "
                                       "terms; simulation sits 19% below it")
def test_binary_phat_variance_diagonal_form(runs, acceptance):
    s = runs("binary")
    emp, target = final(s)["standardized"]["phat"]["var"], s.targets["var_allocation"]
    ok = abs(emp / target - 1) < 0.15
    assert acceptance("3a binary Var sqrt(t)(phat-rho) vs delta-method value +-15%", ok,
                      f"empirical {emp:.5f}, target {target:.5f}, ratio {emp / target:.3f} "
                      f"(full-covariance value {s.targets['var_allocation_lyapunov']:.5f})")


def test_binary_p_variance(runs, acceptance):
    s = runs("binary")
    emp, target = final(s)["standardized"]["p"]["var"], s.targets["var_randprob"]
    ok = abs(emp / target - 1) < 0.15
    assert acceptance("3b binary Var sqrt(t)(p-rho) vs Gamma/(1+4h) +-15%", ok,
                      f"empirical {emp:.5f}, target {target:.5f}, ratio {emp / target:.3f}")


def test_binary_ks(runs, acceptance):
    ks = final(runs("binary"))["ks"]
    ok = ks["phat"] < 0.06 and ks["p"] < 0.06
    assert acceptance("3c binary KS < 0.06", ok,
                      f"phat {ks['phat']:.4f}, p {ks['p']:.4f}, "
                      f"phat vs full-covariance target {ks['phat_lyapunov']:.4f}")


# 4
def test_normal_special_case(runs, acceptance):
    s = runs("normal")
    r = s.rho[1]
    ident = abs(s.targets["var_allocation"] - r * (1 - r) / 21)
    emp = final(s)["standardized"]["phat"]["var"]
    ratio = emp / s.targets["var_allocation"]
    ok = ident < 1e-12 and abs(ratio - 1) < 0.15
    assert acceptance("4 normal identity 1e-12 and simulated variance +-15%", ok,
                      f"identity gap {ident:.1e}, empirical {emp:.5f}, ratio {ratio:.3f}")


FAMILIES = {
    "binary": (NefModel("bernoulli", 0.2), NefModel("bernoulli", 0.4)),
    "exponential": (NefModel("exp_mean", 5.0), NefModel("exp_mean", 7.0)),
    "normal": (NefModel("normal", 0.0, 1.0), NefModel("normal", 1.0, 3.0)),
}


# 5
def test_sa_structure(acceptance):
    drift_max, jac_max, zmax = 0.0, 0.0, 0.0
    for ms in FAMILIES.values():
        for h in (1.0, 5.0):
            w = sa.stationary_point(ms, h)
            drift_max = max(drift_max, float(np.linalg.norm(sa.drift(w, ms, h))))
            J = sa.jacobian_at(w, h, ms)
            jac_max = max(jac_max, float(np.abs(J - np.diag([1 + 2 * h, 1, 1])).max()))
        w = sa.stationary_point(ms, 5.0)
        gt = np.array(summarize(ms, 5.0).gamma_tilde)
        mc = sa.noise_moments(w, ms, 5.0, 10**6, seed=7)
        z = np.abs(mc.cov - gt) / np.where(mc.cov_se > 0, mc.cov_se, 1.0)
        zmax = max(zmax, float(z.max()))
    ok = drift_max < 1e-10 and jac_max < 1e-4 and zmax < 3
    assert acceptance("5 SA drift / Jacobian / noise covariance", ok,
                      f"max drift {drift_max:.1e}, max Jacobian error {jac_max:.1e}, "
                      f"max covariance z {zmax:.2f}")


# 6
def test_martingale_property(acceptance):
    zmax = 0.0
    for ms in FAMILIES.values():
        mean, se = sa.martingale_moments(sa.stationary_point(ms, 5.0), ms, 5.0, 10**6, seed=3)
        zmax = max(zmax, float(np.abs(mean / se).max()))
    assert acceptance("6 martingale increment mean within 4 SE", zmax < 4, f"max |z| {zmax:.2f}")


# 7
def test_type_one_error(scenario, acceptance):
    rates = {}
    for name in ("null_binary", "null_normal", "null_exponential"):
        rc = scenario(name)
        rates[name] = error_rates(rc.design, R, [1000], rc.test)[0]["rate"]
    ok = all(abs(v - 0.05) <= 0.02 for v in rates.values())
    assert acceptance("7a null rejection rate 0.05 +-0.02 at t=1000", ok,
                      ", ".join(f"{k} {v:.3f}" for k, v in rates.items()))


def test_power_vs_approximation(scenario, acceptance):
    worst, parts = 0.0, []
    for name in ("binary", "exponential", "normal"):
        rc = scenario(name)
        d = rc.design
        eta = summarize(d.truth, d.h).eta
        th = (d.truth[0].theta, d.truth[1].theta)
        for e in error_rates(d, R, rc.t_grid, rc.test):
            pa = power_approx(*th, *eta, e["t"], rc.test.alpha)
            worst = max(worst, abs(e["rate"] - pa))
            parts.append(f"{name}@{e['t']} {e['rate']:.3f}/{pa:.3f}")
    assert acceptance("7b |MC power - approximation| < 0.05", worst < 0.05,
                      f"max gap {worst:.3f}; " + ", ".join(parts))


# 8
def test_sample_size_round_trip(acceptance):
    bad = []
    for name, ms in FAMILIES.items():
        eta = summarize(ms, 5.0).eta
        th = (ms[0].theta, ms[1].theta)
        for alpha in (0.01, 0.05, 0.1):
            for beta in (0.1, 0.2, 0.3):
                t = sample_size(*th, *eta, alpha, beta)
                if not (power_approx(*th, *eta, t, alpha) >= 1 - beta
                        and power_approx(*th, *eta, t - 1, alpha) < 1 - beta):
                    bad.append((name, alpha, beta))
    t_nrm = sample_size(0.0, 1.0, *summarize(FAMILIES["normal"], 5.0).eta, 0.05, 0.2)
    ok = not bad and t_nrm == 47
    assert acceptance("8 sample size round trip (27 cases)", ok,
                      f"failures {bad}, normal t_hat {t_nrm}")


# 9
@pytest.mark.slow
def test_beyond_nef(runs, acceptance):
    s = runs("weibull")
    q = final(s)["phat"]["mean"]
    gap = abs(q - s.rho[1])
    ms = [NefModel("bernoulli", t) for t in (0.2, 0.4)]
    ident = float(np.abs(
        general_limit_allocation([fisher_information(m) for m in ms], 5.0)
        - nef_limit_allocation([math.sqrt(true_variance(m)) for m in ms], 5.0)).max())
    ok = gap < 0.02 and ident < 1e-12 and s.R_effective == R
    assert acceptance("9 truncated Weibull allocation +-0.02, NEF identity 1e-12", ok,
                      f"rho1 {s.rho[1]:.5f}, mean phat {q:.5f}, identity gap {ident:.1e}, "
                      f"effective R {s.R_effective}")


# 10
COMMANDS = [
    ("simulate", "binary", ["-R", "200"]),
    ("asymptotics", "exponential", []),
    ("power", "normal", ["--simulate", "200"]),
    ("diagnose", "binary", []),
    ("compare", "exponential", ["-R", "200"]),
]


def test_determinism(tmp_path, acceptance):
    mismatched = []
    for cmd, cfg, extra in COMMANDS:
        outs = []
        for i, threads in enumerate((1, 1, 4, 8)):
            d = tmp_path / f"{cmd}{i}"
            assert main(["--threads", str(threads), "--out", str(d), cmd, cfg, *extra]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(Path(d).iterdir())})
        if any(o != outs[0] for o in outs[1:]):
            mismatched.append(cmd)
    assert acceptance("10 byte-identical outputs across runs and 1/4/8 threads", not mismatched,
                      f"subcommands checked {[c for c, _, _ in COMMANDS]}, mismatched {mismatched}")
