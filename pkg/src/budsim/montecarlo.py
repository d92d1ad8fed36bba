"""Replication harness: many independent trials, aggregated at checkpoints."""
import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _backend
from . import kernels
from .asymptotics import limit_allocation_for, summarize
from .errors import BudsimError
from .inference import plugin_eta, wald_from_summaries, weibull_mle
from .outcome_models import NefModel
from .posterior import regular_grid_weights

# replicates per work item; fixed so results never depend on worker count
CHUNK_NUMBA = 32
CHUNK_NUMPY = 256
DEFAULT_CHECKPOINTS = (100, 1000, 10000)
RESOLUTION_TOL = 1e-6

REASONS = {
    kernels.STATUS_FAILED: "nonfinite_state",
    kernels.STATUS_DEGENERATE: "degenerate_increments",
    kernels.STATUS_UNRESOLVED: "grid_underresolved",
}


def default_threads():
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover
        return os.cpu_count() or 1


@dataclass
class BatchResult:
    """Raw per-replicate output at each checkpoint.

    Arrays have shape (R, C, K) except ``u`` (R, C) and ``status`` (R,).
    ``hist_arm``/``hist_y`` are (R, n) when history was requested.
    """

    checkpoints: np.ndarray
    p: np.ndarray
    counts: np.ndarray
    ytilde: np.ndarray
    sums: np.ndarray
    u: np.ndarray
    status: np.ndarray
    hist_arm: np.ndarray
    hist_y: np.ndarray

    @property
    def R(self):
        return self.status.shape[0]

    @property
    def ok(self):
        return (self.status & kernels.STATUS_FAILED) == 0

    def phat(self):
        t = self.checkpoints.astype(float)[None, :, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.counts / t

    def failures(self):
        out = []
        for r in np.flatnonzero(self.status):
            codes = [name for bit, name in REASONS.items() if self.status[r] & bit]
            out.append({"replicate": int(r), "reasons": codes})
        return out


def _kernel_inputs(config):
    if config.uses_grid:
        m = config.truth[0]
        grid = np.linspace(m.theta_lo, m.theta_hi, config.grid_size)
        gq = regular_grid_weights(config.grid_size, m.theta_lo, m.theta_hi)
        logc = np.log(m.rate * grid) - m._log_norm(grid)
        y, qy = m.predictive_nodes(config.outcome_nodes)
        F = np.ascontiguousarray(m.density(y[None, :], grid[:, None]))
        tparams = np.array([mm.params() for mm in config.truth], dtype=float)
        return "grid", (tparams, grid, gq, logc, F, qy, float(m.rate))
    codes = np.array([m.code for m in config.truth], dtype=np.int64)
    tparams = np.array([m.params() for m in config.truth], dtype=float)
    qvf = np.array([m.qvf for m in config.truth], dtype=float)
    n0 = np.array([pr.n for pr in config.priors], dtype=float)
    y0 = np.array([pr.ytilde for pr in config.priors], dtype=float)
    return "nef", (codes, tparams, qvf, n0, y0)


def _check_checkpoints(checkpoints, n):
    cps = np.array(sorted({int(c) for c in checkpoints}), dtype=np.int64)
    if cps.size == 0 or cps[0] < 1 or cps[-1] > n:
        raise ValueError(f"checkpoints must lie in [1, {n}], got {list(checkpoints)}")
    return cps


def simulate_batch(config, R, checkpoints=None, threads=None, record_history=False,
                   backend=None):
    """Run replicates 0..R-1 of ``config`` and collect checkpoint snapshots."""
    if R < 1:
        raise ValueError("R must be at least 1")
    if checkpoints is None:
        checkpoints = [c for c in DEFAULT_CHECKPOINTS if c <= config.n] or [config.n]
    cps = _check_checkpoints(checkpoints, config.n)
    backend = backend or _backend.backend_name()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not _backend.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    C, K = cps.size, config.K
    out_p = np.full((R, C, K), np.nan)
    out_counts = np.full((R, C, K), -1, dtype=np.int64)
    out_yt = np.full((R, C, K), np.nan)
    out_sums = np.full((R, C, K), np.nan)
    out_u = np.full((R, C), np.nan)
    status = np.zeros(R, dtype=np.int64)
    hn = config.n if record_history else 0
    hist_arm = np.full((R, hn), -1, dtype=np.int64)
    hist_y = np.full((R, hn), np.nan)

    kind, inputs = _kernel_inputs(config)
    if kind == "grid":
        fn = kernels.grid_kernel if backend == "numba" else kernels.grid_kernel_numpy
    else:
        fn = kernels.nef_kernel if backend == "numba" else kernels.nef_kernel_numpy
    extra = (RESOLUTION_TOL,) if kind == "grid" else ()
    seed = np.uint64(config.seed)
    chunk = CHUNK_NUMBA if backend == "numba" else CHUNK_NUMPY

    def work(lo):
        hi = min(lo + chunk, R)
        sl = slice(lo, hi)
        fn(seed, lo, hi, config.n, float(config.h), *inputs, cps,
           out_p[sl], out_counts[sl], out_yt[sl], out_sums[sl], out_u[sl], status[sl],
           hist_arm[sl], hist_y[sl], *extra)

    starts = range(0, R, chunk)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(starts) == 1:
        for lo in starts:
            work(lo)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    return BatchResult(cps, out_p, out_counts, out_yt, out_sums, out_u, status,
                       hist_arm, hist_y)


def _mean(x):
    return math.fsum(x) / len(x)


def _var(x):
    m = _mean(x)
    return math.fsum((v - m) ** 2 for v in x) / (len(x) - 1)


def _describe(x):
    x = np.asarray(x, dtype=float)
    d = {"mean": _mean(x)}
    q = np.quantile(x, [0.025, 0.5, 0.975])
    d.update(q025=float(q[0]), q50=float(q[1]), q975=float(q[2]))
    d["var"] = _var(x) if x.size >= 2 else None
    d["se"] = math.sqrt(d["var"] / x.size) if x.size >= 2 else None
    return d


def ks_statistic(samples, target_mean, target_var):
    """Sup distance between the empirical CDF and N(target_mean, target_var)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 50:
        raise ValueError("need at least 50 samples")
    if not target_var > 0.0:
        raise ValueError("target variance must be positive")
    return float(stats.kstest(samples, "norm", args=(target_mean, math.sqrt(target_var))).statistic)


def batch_wald(config, batch, ci):
    """Wald statistics for every replicate at checkpoint index ``ci``.

    NaN marks replicates where the statistic is undefined.
    """
    t = int(batch.checkpoints[ci])
    if config.K != 2:
        raise ValueError("the Wald test is defined for two arms")
    if isinstance(config.truth[0], NefModel):
        sig = tuple(float(m.sigma2) for m in config.truth)
        z = wald_from_summaries(config.truth[0].kind, batch.sums[:, ci], batch.counts[:, ci],
                                t, config.h, sig)
    else:
        if batch.hist_y.shape[1] < t:
            raise ValueError("Wald statistics for grid arms need recorded histories")
        z = np.full(batch.R, np.nan)
        for r in range(batch.R):
            arms, ys = batch.hist_arm[r, :t], batch.hist_y[r, :t]
            try:
                th = [weibull_mle(ys[arms == a], config.truth[a]) for a in range(2)]
                eta = plugin_eta(config.truth, th, config.h)
            except BudsimError:
                continue
            z[r] = math.sqrt(t) * (th[1] - th[0]) / math.sqrt(eta[0] + eta[1])
    z[~batch.ok] = np.nan
    return z


@dataclass
class ReplicationSummary:
    R: int
    R_effective: int
    checkpoints: list
    rho: list
    targets: dict
    per_checkpoint: list
    standardized: dict
    final_z: list
    failures: list
    seed: int

    def to_dict(self):
        return {
            "R": self.R,
            "R_effective": self.R_effective,
            "checkpoints": self.checkpoints,
            "rho": self.rho,
            "targets": self.targets,
            "per_checkpoint": self.per_checkpoint,
            "final_z": self.final_z,
            "failures": self.failures,
            "seed": self.seed,
        }


def _targets(config):
    try:
        asym = summarize(config.truth, config.h)
    except (ValueError, BudsimError):
        return {}, None
    return {
        "var_allocation": asym.var_allocation,
        "var_allocation_lyapunov": asym.var_allocation_lyapunov,
        "var_randprob": asym.var_randprob,
    }, asym


def summarize_batch(config, batch):
    ok = batch.ok
    R_eff = int(ok.sum())
    if R_eff == 0:
        raise BudsimError("every replicate failed")
    rho = limit_allocation_for(config.truth, config.h)
    targets, _ = _targets(config)
    arm = 1
    phat = batch.phat()
    rows, standardized = [], {}
    for ci, t in enumerate(batch.checkpoints):
        t = int(t)
        p1 = batch.p[ok, ci, arm]
        q1 = phat[ok, ci, arm]
        row = {"t": t, "p": _describe(p1), "phat": _describe(q1),
               "ytilde_mean": [_mean(batch.ytilde[ok, ci, a]) for a in range(config.K)],
               "utility_mean": _mean(batch.u[ok, ci])}
        sp = math.sqrt(t) * (p1 - rho[arm])
        sq = math.sqrt(t) * (q1 - rho[arm])
        standardized[t] = (sq, sp)
        row["standardized"] = {"phat": _describe(sq), "p": _describe(sp)}
        ks = {}
        if R_eff >= 50:
            for name, samp, key in (("phat", sq, "var_allocation"),
                                    ("phat_lyapunov", sq, "var_allocation_lyapunov"),
                                    ("p", sp, "var_randprob")):
                if targets.get(key):
                    ks[name] = ks_statistic(samp, 0.0, targets[key])
        row["ks"] = ks
        rows.append(row)
    final_z = []
    if config.K == 2 and isinstance(config.truth[0], NefModel):
        z = batch_wald(config, batch, len(batch.checkpoints) - 1)
        final_z = [None if not np.isfinite(v) else float(v) for v in z]
    return ReplicationSummary(
        R=batch.R, R_effective=R_eff, checkpoints=[int(c) for c in batch.checkpoints],
        rho=[float(x) for x in rho], targets=targets, per_checkpoint=rows,
        standardized=standardized, final_z=final_z, failures=batch.failures(),
        seed=int(config.seed),
    )


def run_replications(config, R, checkpoints=None, threads=None, backend=None):
    batch = simulate_batch(config, R, checkpoints, threads, backend=backend)
    return summarize_batch(config, batch)


def error_rates(config, R, t_grid, spec, threads=None, backend=None):
    """Rejection rate of the one-sided Wald test at each t, with binomial SEs.

    Replicates whose statistic is undefined count as non-rejections and are
    tallied under ``undefined``.
    """
    need_hist = not isinstance(config.truth[0], NefModel)
    # enrollments past the last t_grid value cannot affect the statistics
    config = dataclasses.replace(config, n=max(int(t) for t in t_grid))
    batch = simulate_batch(config, R, t_grid, threads, record_history=need_hist,
                           backend=backend)
    za = spec.z_alpha
    out = []
    for ci, t in enumerate(batch.checkpoints):
        z = batch_wald(config, batch, ci)
        defined = np.isfinite(z)
        rej = np.zeros(batch.R, dtype=bool)
        if za == -math.inf:
            rej[:] = True
        else:
            rej[defined] = z[defined] > za
        rate = float(rej.mean())
        out.append({"t": int(t), "rate": rate,
                    "se": math.sqrt(rate * (1.0 - rate) / batch.R),
                    "undefined": int((~defined).sum()), "R": batch.R})
    return out


def standardized_csv(summary, t):
    sq, sp = summary.standardized[t]
    lines = ["z_phat,z_p"]
    lines += [f"{a!r},{b!r}" for a, b in zip(sq.tolist(), sp.tolist())]
    return "\n".join(lines) + "\n"
