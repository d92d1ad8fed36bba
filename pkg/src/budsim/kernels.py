"""Monte Carlo trial kernels.

Two implementations of the same replicate loop:

* numba kernels run one replicate at a time, release the GIL and are
  driven by a thread pool over fixed replicate chunks;
* numpy kernels advance a whole chunk of replicates in lock step.

Both read the same counter-based uniforms (see :mod:`budsim.rng`), so the
two backends agree to rounding. Outputs are written into caller-owned
arrays indexed by ``replicate - rep_start``.
"""
import numpy as np

from ._backend import njit
from .outcome_models import BERNOULLI, EXP_MEAN, NORMAL, draw_outcome
from .posterior import regular_grid_weights
from .rng import DRAWS_PER_STEP, stream_key, stream_key_array, uniform, uniform_array

# status bits per replicate
STATUS_FAILED = 1  # non-finite increment or posterior; replicate aborted
STATUS_DEGENERATE = 2  # every increment was zero; fell back to uniform
STATUS_UNRESOLVED = 4  # grid resolution check failed at the end of the run

# nodes whose log weight is this far below the maximum are skipped
ACTIVE_LOG_CUTOFF = 60.0


@njit
def _probs_from_logs(logd, h, p):
    """Softmax of h*log(delta) into ``p``; returns True on degenerate input."""
    K = logd.shape[0]
    if h == 0.0:
        for a in range(K):
            p[a] = 1.0 / K
        return False
    mx = -np.inf
    for a in range(K):
        if h * logd[a] > mx:
            mx = h * logd[a]
    if not mx > -np.inf:
        for a in range(K):
            p[a] = 1.0 / K
        return True
    s = 0.0
    for a in range(K):
        p[a] = np.exp(h * logd[a] - mx)
        s += p[a]
    for a in range(K):
        p[a] = p[a] / s
    return False


@njit
def _choose_arm(p, u):
    K = p.shape[0]
    c = 0.0
    for a in range(K - 1):
        c += p[a]
        if u < c:
            return a
    return K - 1


@njit
def _nef_delta(n, yt, v0, v1, v2):
    V = v0 + v1 * yt + v2 * yt * yt
    sp = V + (1.0 + v2) * (V / (n - v2))
    return sp / ((n + 1.0) * (n + 1.0))


@njit
def nef_kernel(seed, rep_start, rep_stop, n_steps, h, codes, tparams, qvf, n0, y0,
               checkpoints, out_p, out_counts, out_yt, out_sums, out_u, status,
               hist_arm, hist_y):
    K = codes.shape[0]
    C = checkpoints.shape[0]
    record = hist_arm.shape[1] > 0
    nn = np.empty(K)
    yt = np.empty(K)
    sums = np.empty(K)
    counts = np.zeros(K, dtype=np.int64)
    logd = np.empty(K)
    p = np.empty(K)
    for r in range(rep_start, rep_stop):
        i = r - rep_start
        key = stream_key(seed, r)
        for a in range(K):
            nn[a] = n0[a]
            yt[a] = y0[a]
            sums[a] = 0.0
            counts[a] = 0
        ci = 0
        st = 0
        for t in range(n_steps + 1):
            for a in range(K):
                d = _nef_delta(nn[a], yt[a], qvf[a, 0], qvf[a, 1], qvf[a, 2])
                logd[a] = np.log(d) if d > 0.0 else -np.inf
                if not np.isfinite(d):
                    st |= STATUS_FAILED
            if st & STATUS_FAILED:
                break
            if _probs_from_logs(logd, h, p):
                st |= STATUS_DEGENERATE
            if ci < C and checkpoints[ci] == t:
                util = 0.0
                for a in range(K):
                    V = qvf[a, 0] + qvf[a, 1] * yt[a] + qvf[a, 2] * yt[a] * yt[a]
                    util -= V / (nn[a] - qvf[a, 2])
                    out_p[i, ci, a] = p[a]
                    out_counts[i, ci, a] = counts[a]
                    out_yt[i, ci, a] = yt[a]
                    out_sums[i, ci, a] = sums[a]
                out_u[i, ci] = util
                ci += 1
            if t == n_steps:
                break
            base = DRAWS_PER_STEP * t
            arm = _choose_arm(p, uniform(key, base))
            y = draw_outcome(codes[arm], tparams[arm, 0], tparams[arm, 1], tparams[arm, 2],
                             uniform(key, base + 1), uniform(key, base + 2))
            yt[arm] = (nn[arm] * yt[arm] + y) / (nn[arm] + 1.0)
            nn[arm] += 1.0
            counts[arm] += 1
            sums[arm] += y
            if record:
                hist_arm[i, t] = arm
                hist_y[i, t] = y
        status[i] = st


@njit
def _grid_arm_summary(lw, gq, grid, F, qy, cutoff, out):
    """Posterior mean, variance and information increment of one grid arm.

    Writes (mean, var, delta) into ``out``; nodes below ``-cutoff`` in
    max-shifted log weight are skipped.
    """
    G = grid.shape[0]
    M = qy.shape[0]
    lo = 0
    while lw[lo] < -cutoff:
        lo += 1
    hi = G - 1
    while lw[hi] < -cutoff:
        hi -= 1
    m = hi - lo + 1
    w = np.empty(m)
    s = 0.0
    for k in range(m):
        w[k] = gq[lo + k] * np.exp(lw[lo + k])
        s += w[k]
    mu = 0.0
    for k in range(m):
        w[k] /= s
        mu += w[k] * grid[lo + k]
    var = 0.0
    for k in range(m):
        dv = grid[lo + k] - mu
        var += w[k] * dv * dv
    pm = np.zeros(M)
    pb = np.zeros(M)
    for k in range(m):
        wk = w[k]
        wc = wk * (grid[lo + k] - mu)
        row = F[lo + k]
        for j in range(M):
            pm[j] += wk * row[j]
            pb[j] += wc * row[j]
    delta = 0.0
    for j in range(M):
        if pm[j] > 0.0:
            delta += qy[j] * pb[j] * pb[j] / pm[j]
    out[0] = mu
    out[1] = var
    out[2] = delta


@njit
def grid_kernel(seed, rep_start, rep_stop, n_steps, h, tparams, grid, gq, logc, F, qy,
                rate, checkpoints, out_p, out_counts, out_yt, out_sums, out_u, status,
                hist_arm, hist_y, resolution_tol):
    """Trial loop for truncated-Weibull arms sharing one shape grid.

    ``logc[i]`` is log(rate*theta_i) minus the log truncation constant, so
    log f_i(y) = logc[i] + (theta_i - 1)*L - exp(theta_i*L) with L = log(rate*y).
    ``F[i, j]`` is f_i at outcome node j and ``qy`` the outcome quadrature weights.
    """
    K = tparams.shape[0]
    G = grid.shape[0]
    C = checkpoints.shape[0]
    record = hist_arm.shape[1] > 0
    lw = np.zeros((K, G))
    summ = np.empty((K, 3))
    counts = np.zeros(K, dtype=np.int64)
    sums = np.empty(K)
    logd = np.empty(K)
    p = np.empty(K)
    tmp = np.empty(3)
    for r in range(rep_start, rep_stop):
        i = r - rep_start
        key = stream_key(seed, r)
        for a in range(K):
            for g in range(G):
                lw[a, g] = 0.0
            _grid_arm_summary(lw[a], gq, grid, F, qy, ACTIVE_LOG_CUTOFF, tmp)
            summ[a, 0] = tmp[0]
            summ[a, 1] = tmp[1]
            summ[a, 2] = tmp[2]
            counts[a] = 0
            sums[a] = 0.0
        ci = 0
        st = 0
        for t in range(n_steps + 1):
            for a in range(K):
                d = summ[a, 2]
                if not np.isfinite(d):
                    st |= STATUS_FAILED
                logd[a] = np.log(d) if d > 0.0 else -np.inf
            if st & STATUS_FAILED:
                break
            if _probs_from_logs(logd, h, p):
                st |= STATUS_DEGENERATE
            if ci < C and checkpoints[ci] == t:
                util = 0.0
                for a in range(K):
                    util -= summ[a, 1]
                    out_p[i, ci, a] = p[a]
                    out_counts[i, ci, a] = counts[a]
                    out_yt[i, ci, a] = summ[a, 0]
                    out_sums[i, ci, a] = sums[a]
                out_u[i, ci] = util
                ci += 1
            if t == n_steps:
                break
            base = DRAWS_PER_STEP * t
            arm = _choose_arm(p, uniform(key, base))
            y = draw_outcome(3, tparams[arm, 0], tparams[arm, 1], tparams[arm, 2],
                             uniform(key, base + 1), uniform(key, base + 2))
            L = np.log(rate * y)
            mx = -np.inf
            for g in range(G):
                v = lw[arm, g] + logc[g] + (grid[g] - 1.0) * L - np.exp(grid[g] * L)
                lw[arm, g] = v
                if v > mx:
                    mx = v
            if not np.isfinite(mx):
                st |= STATUS_FAILED
                break
            for g in range(G):
                lw[arm, g] -= mx
            _grid_arm_summary(lw[arm], gq, grid, F, qy, ACTIVE_LOG_CUTOFF, tmp)
            summ[arm, 0] = tmp[0]
            summ[arm, 1] = tmp[1]
            summ[arm, 2] = tmp[2]
            counts[arm] += 1
            sums[arm] += y
            if record:
                hist_arm[i, t] = arm
                hist_y[i, t] = y
        if not st & STATUS_FAILED and G % 2 == 1:
            for a in range(K):
                if _halving_error(lw[a], gq, grid) > resolution_tol:
                    st |= STATUS_UNRESOLVED
        status[i] = st


@njit
def _halving_error(lw, gq, grid):
    G = grid.shape[0]
    fine = 0.0
    for g in range(G):
        fine += gq[g] * np.exp(lw[g])
    Gc = (G + 1) // 2
    hc = 2.0 * (grid[1] - grid[0])
    coarse = 0.0
    for k in range(Gc):
        if k == 0 or k == Gc - 1:
            c = 3.0 / 8.0
        elif k == 1 or k == Gc - 2:
            c = 7.0 / 6.0
        elif k == 2 or k == Gc - 3:
            c = 23.0 / 24.0
        else:
            c = 1.0
        coarse += c * hc * np.exp(lw[2 * k])
    return abs(fine - coarse) / fine


# ----------------------------------------------------------------------------
# numpy fallback: one chunk of replicates advanced together


def _np_probs(logd, h):
    R, K = logd.shape
    if h == 0.0:
        return np.full((R, K), 1.0 / K), np.zeros(R, dtype=bool)
    l = h * logd
    mx = l.max(axis=1, keepdims=True)
    degen = ~(mx[:, 0] > -np.inf)
    with np.errstate(invalid="ignore"):
        z = np.exp(l - mx)
    z[degen] = 1.0
    s = np.zeros(R)
    for a in range(K):
        s = s + z[:, a]
    return z / s[:, None], degen


def _np_choose(p, u):
    R, K = p.shape
    arm = np.full(R, K - 1, dtype=np.int64)
    c = np.zeros(R)
    undecided = np.ones(R, dtype=bool)
    for a in range(K - 1):
        c = c + p[:, a]
        hit = undecided & (u < c)
        arm[hit] = a
        undecided &= ~hit
    return arm


def _np_draw(codes, tparams, arm, u1, u2):
    y = np.empty(arm.shape[0])
    for code in np.unique(codes[arm]):
        sel = codes[arm] == code
        a = tparams[arm[sel], 0]
        if code == BERNOULLI:
            y[sel] = (u1[sel] < a).astype(float)
        elif code == EXP_MEAN:
            y[sel] = -a * np.log(u1[sel])
        elif code == NORMAL:
            b = tparams[arm[sel], 1]
            y[sel] = a + b * np.sqrt(-2.0 * np.log(u1[sel])) * np.cos(2.0 * np.pi * u2[sel])
        else:
            b = tparams[arm[sel], 1]
            c = tparams[arm[sel], 2]
            s = (b * c) ** a
            y[sel] = (-np.log1p(u1[sel] * np.expm1(-s))) ** (1.0 / a) / b
    return y


def nef_kernel_numpy(seed, rep_start, rep_stop, n_steps, h, codes, tparams, qvf, n0, y0,
                     checkpoints, out_p, out_counts, out_yt, out_sums, out_u, status,
                     hist_arm, hist_y):
    R = rep_stop - rep_start
    K = codes.shape[0]
    record = hist_arm.shape[1] > 0
    keys = stream_key_array(seed, np.arange(rep_start, rep_stop))
    rows = np.arange(R)
    nn = np.tile(n0.astype(float), (R, 1))
    yt = np.tile(y0.astype(float), (R, 1))
    sums = np.zeros((R, K))
    counts = np.zeros((R, K), dtype=np.int64)
    alive = np.ones(R, dtype=bool)
    st = np.zeros(R, dtype=np.int64)
    v0, v1, v2 = qvf[:, 0], qvf[:, 1], qvf[:, 2]
    cp = {int(c): k for k, c in enumerate(checkpoints)}
    for t in range(n_steps + 1):
        V = v0 + v1 * yt + v2 * yt * yt
        sp = V + (1.0 + v2) * (V / (nn - v2))
        d = sp / ((nn + 1.0) * (nn + 1.0))
        bad = ~np.isfinite(d).all(axis=1)
        newly = bad & alive
        st[newly] |= STATUS_FAILED
        alive &= ~bad
        with np.errstate(divide="ignore", invalid="ignore"):
            logd = np.where(d > 0.0, np.log(np.where(d > 0.0, d, 1.0)), -np.inf)
        p, degen = _np_probs(logd, h)
        st[degen & alive] |= STATUS_DEGENERATE
        if t in cp:
            ci = cp[t]
            util = np.zeros(R)
            for a in range(K):
                util = util - V[:, a] / (nn[:, a] - v2[a])
            sel = alive
            out_p[sel, ci] = p[sel]
            out_counts[sel, ci] = counts[sel]
            out_yt[sel, ci] = yt[sel]
            out_sums[sel, ci] = sums[sel]
            out_u[sel, ci] = util[sel]
        if t == n_steps:
            break
        base = DRAWS_PER_STEP * t
        arm = _np_choose(p, uniform_array(keys, np.full(R, base)))
        u1 = uniform_array(keys, np.full(R, base + 1))
        u2 = uniform_array(keys, np.full(R, base + 2))
        y = _np_draw(codes, tparams, arm, u1, u2)
        na = nn[rows, arm]
        yt[rows, arm] = (na * yt[rows, arm] + y) / (na + 1.0)
        nn[rows, arm] = na + 1.0
        counts[rows, arm] += 1
        sums[rows, arm] += y
        if record:
            hist_arm[:, t] = arm
            hist_y[:, t] = y
    status[:] = st


def _np_grid_summary(lw, gq, grid, F, qy):
    """Vectorised counterpart of ``_grid_arm_summary`` over rows of ``lw``."""
    with np.errstate(under="ignore"):
        w = gq * np.exp(lw)
    w /= w.sum(axis=1, keepdims=True)
    mu = w @ grid
    dv = grid[None, :] - mu[:, None]
    var = np.einsum("rg,rg->r", w, dv * dv)
    pm = w @ F
    pb = (w * dv) @ F
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pm > 0.0, pb * pb / np.where(pm > 0.0, pm, 1.0), 0.0)
    return mu, var, terms @ qy


def grid_kernel_numpy(seed, rep_start, rep_stop, n_steps, h, tparams, grid, gq, logc, F, qy,
                      rate, checkpoints, out_p, out_counts, out_yt, out_sums, out_u, status,
                      hist_arm, hist_y, resolution_tol):
    R = rep_stop - rep_start
    K = tparams.shape[0]
    G = grid.shape[0]
    record = hist_arm.shape[1] > 0
    keys = stream_key_array(seed, np.arange(rep_start, rep_stop))
    rows = np.arange(R)
    lw = np.zeros((R, K, G))
    mu0, var0, d0 = _np_grid_summary(np.zeros((1, G)), gq, grid, F, qy)
    summ = np.empty((R, K, 3))
    summ[:, :, 0] = mu0[0]
    summ[:, :, 1] = var0[0]
    summ[:, :, 2] = d0[0]
    counts = np.zeros((R, K), dtype=np.int64)
    sums = np.zeros((R, K))
    alive = np.ones(R, dtype=bool)
    st = np.zeros(R, dtype=np.int64)
    cp = {int(c): k for k, c in enumerate(checkpoints)}
    for t in range(n_steps + 1):
        d = summ[:, :, 2]
        bad = ~np.isfinite(d).all(axis=1)
        st[bad & alive] |= STATUS_FAILED
        alive &= ~bad
        with np.errstate(divide="ignore", invalid="ignore"):
            logd = np.where(d > 0.0, np.log(np.where(d > 0.0, d, 1.0)), -np.inf)
        p, degen = _np_probs(logd, h)
        st[degen & alive] |= STATUS_DEGENERATE
        if t in cp:
            ci = cp[t]
            sel = alive
            out_p[sel, ci] = p[sel]
            out_counts[sel, ci] = counts[sel]
            out_yt[sel, ci] = summ[sel, :, 0]
            out_sums[sel, ci] = sums[sel]
            out_u[sel, ci] = -summ[sel, :, 1].sum(axis=1)
        if t == n_steps:
            break
        base = DRAWS_PER_STEP * t
        arm = _np_choose(p, uniform_array(keys, np.full(R, base)))
        u1 = uniform_array(keys, np.full(R, base + 1))
        u2 = uniform_array(keys, np.full(R, base + 2))
        y = _np_draw(np.full(K, 3), tparams, arm, u1, u2)
        L = np.log(rate * y)[:, None]
        upd = lw[rows, arm] + logc + (grid - 1.0) * L - np.exp(grid * L)
        mx = upd.max(axis=1, keepdims=True)
        bad = ~np.isfinite(mx[:, 0])
        st[bad & alive] |= STATUS_FAILED
        alive &= ~bad
        lw[rows, arm] = np.where(bad[:, None], 0.0, upd - mx)
        mu, var, dl = _np_grid_summary(lw[rows, arm], gq, grid, F, qy)
        summ[rows, arm, 0] = mu
        summ[rows, arm, 1] = var
        summ[rows, arm, 2] = dl
        counts[rows, arm] += 1
        sums[rows, arm] += y
        if record:
            hist_arm[:, t] = arm
            hist_y[:, t] = y
    if G % 2 == 1:
        dens = np.exp(lw)
        fine = dens @ gq
        Gc = (G + 1) // 2
        coarse = dens[:, :, ::2] @ regular_grid_weights(Gc, grid[0], grid[-1])
        err = (np.abs(fine - coarse) / fine).max(axis=1)
        st[(err > resolution_tol) & alive] |= STATUS_UNRESOLVED
    status[:] = st
