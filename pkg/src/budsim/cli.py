"""Command-line front end.

    budsim [--seed S] [--threads N] [--out DIR] <subcommand> CONFIG [options]

Subcommands: simulate, asymptotics, power, diagnose, compare. Exit status is
0 on success, 1 on a runtime failure and 2 for an invalid configuration.
"""
import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import sa_diagnostics as sa
from .asymptotics import summarize
from .config import bundled_config, bundled_names, load_config
from .engine import run_trial
from .errors import BudsimError, ConfigError
from .inference import power_approx, sample_size
from .montecarlo import error_rates, run_replications, standardized_csv
from .outcome_models import NefModel

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(doc):
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def write_atomic(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _resolve_config(arg):
    """A file path, or the name of a bundled scenario."""
    if os.path.exists(arg):
        return arg
    if arg in bundled_names():
        return str(bundled_config(arg))
    return arg


def _meta(rc, args):
    return {"config": rc.source, "seed": int(rc.design.seed), "version": __version__}


def cmd_simulate(rc, args, out):
    d = rc.design
    _, rec = run_trial(d, replicate=0)
    write_atomic(out / "trajectory.csv", rec.to_csv())
    R = args.replications or rc.R
    summary = run_replications(d, R, rc.checkpoints, threads=args.threads)
    doc = summary.to_dict()
    doc.update(_meta(rc, args))
    write_atomic(out / "summary.json", dumps(doc))
    for t in summary.checkpoints:
        write_atomic(out / f"standardized_t{t}.csv", standardized_csv(summary, t))
    return {"rho": summary.rho, "R_effective": summary.R_effective}


def cmd_asymptotics(rc, args, out):
    asym = summarize(rc.design.truth, rc.design.h)
    doc = asym.to_dict()
    doc.update(_meta(rc, args))
    write_atomic(out / "asymptotics.json", dumps(doc))
    return {"rho": asym.rho}


def _treatment_pair(d):
    if d.K != 2:
        raise ConfigError("power calculations need exactly two arms", "K")
    th0, th1 = float(d.truth[0].theta), float(d.truth[1].theta)
    if not th1 > th0:
        raise ConfigError("power calculations need theta1 > theta0", "arms")
    return th0, th1


def cmd_power(rc, args, out):
    d = rc.design
    th0, th1 = _treatment_pair(d)
    asym = summarize(d.truth, d.h)
    e0, e1 = asym.eta
    alpha, beta = rc.test.alpha, rc.test.beta
    rows = [(t, power_approx(th0, th1, e0, e1, t, alpha)) for t in rc.t_grid]
    write_atomic(out / "power_curve.csv", _csv(["t", "power_asymptotic"], rows))
    t_hat = sample_size(th0, th1, e0, e1, alpha, beta)
    doc = {"alpha": alpha, "beta": beta, "eta": [e0, e1], "theta": [th0, th1],
           "sample_size": t_hat, "power_at_sample_size": power_approx(th0, th1, e0, e1, t_hat, alpha),
           "t_grid": list(rc.t_grid), "power_asymptotic": [p for _, p in rows]}
    if args.simulate:
        er = error_rates(d, args.simulate, rc.t_grid, rc.test, threads=args.threads)
        write_atomic(out / "power_mc.csv",
                     _csv(["t", "power_mc", "mc_se"], [(e["t"], e["rate"], e["se"]) for e in er]))
        doc["monte_carlo"] = er
    doc.update(_meta(rc, args))
    write_atomic(out / "power.json", dumps(doc))
    return {"sample_size": t_hat}


def cmd_diagnose(rc, args, out):
    d = rc.design
    if d.K != 2 or not all(isinstance(m, NefModel) for m in d.truth):
        raise ConfigError("SA diagnostics need a two-arm NEF-QVF design", "arms")
    doc = {"jacobian": {}, "drift_at_stationary": {}}
    for h in rc.h_values:
        w = sa.stationary_point(d.truth, h)
        J = sa.jacobian_at(w, h, d.truth, rc.fd_step)
        doc["jacobian"][repr(h)] = {
            "matrix": J.tolist(),
            "max_abs_error_vs_diag": float(np.abs(J - np.diag([1 + 2 * h, 1.0, 1.0])).max()),
        }
        doc["drift_at_stationary"][repr(h)] = float(np.linalg.norm(sa.drift(w, d.truth, h)))
    w = sa.stationary_point(d.truth, d.h)
    asym = summarize(d.truth, d.h)
    gt = np.array(asym.gamma_tilde)
    mc = sa.noise_moments(w, d.truth, d.h, rc.draws, seed=d.seed)
    table = []
    for i in range(3):
        for j in range(i, 3):
            z = (mc.cov[i, j] - gt[i, j]) / mc.cov_se[i, j] if mc.cov_se[i, j] > 0 else 0.0
            table.append({"entry": [i + 1, j + 1], "mc": mc.cov[i, j], "se": mc.cov_se[i, j],
                          "target": gt[i, j], "z": z})
    doc["stationary_point"] = [w.p1, w.y1, w.y0]
    doc["covariance_vs_gamma_tilde"] = table
    mm, mse = sa.martingale_moments(w, d.truth, d.h, rc.draws, seed=d.seed + 1)
    doc["martingale_mean"] = {"mean": mm.tolist(), "se": mse.tolist(), "z": (mm / mse).tolist()}
    n_res = d.n if rc.residual_n is None else rc.residual_n
    if n_res > 4:
        states = []
        run_trial(dataclasses.replace(d, n=n_res), 0, states)
        rep = sa.residual_decay(states, d.truth, d.h)
        rep["no_growth_from_k7"] = sa.no_growth(rep)
        doc["residual_decay"] = rep
    doc.update(_meta(rc, args))
    write_atomic(out / "diagnose.json", dumps(doc))
    return {"jacobian_error": max(v["max_abs_error_vs_diag"] for v in doc["jacobian"].values())}


def cmd_compare(rc, args, out):
    d = rc.design
    R = args.replications or rc.R
    summary = run_replications(d, R, rc.checkpoints, threads=args.threads)
    rows = []
    for row in summary.per_checkpoint:
        for stat, key in (("phat", "var_allocation"), ("phat", "var_allocation_lyapunov"),
                          ("p", "var_randprob")):
            target = summary.targets.get(key)
            emp = row["standardized"][stat]["var"]
            ks_key = "phat_lyapunov" if key == "var_allocation_lyapunov" else stat
            rows.append({
                "t": row["t"], "statistic": stat, "target": key, "empirical_var": emp,
                "asymptotic_var": target,
                "ratio": (emp / target) if (emp is not None and target) else None,
                "ks_stat": row["ks"].get(ks_key),
            })
    doc = {"rows": rows, "rho": summary.rho, "R": summary.R, "R_effective": summary.R_effective,
           "mean_phat": [r["phat"]["mean"] for r in summary.per_checkpoint],
           "mean_p": [r["p"]["mean"] for r in summary.per_checkpoint],
           "checkpoints": summary.checkpoints}
    doc.update(_meta(rc, args))
    write_atomic(out / "compare.json", dumps(doc))
    cols = ["t", "statistic", "target", "empirical_var", "asymptotic_var", "ratio", "ks_stat"]
    write_atomic(out / "compare.csv", _csv(cols, [[r[c] if r[c] is not None else "" for c in cols]
                                                  for r in rows]))
    return {"rows": len(rows)}


COMMANDS = {
    "simulate": cmd_simulate,
    "asymptotics": cmd_asymptotics,
    "power": cmd_power,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="budsim", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads for Monte Carlo (default: available cores)")
    ap.add_argument("--out", default=None, help="output directory (default: config output.dir)")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="config file, or a bundled scenario name")
        if name in ("simulate", "compare"):
            p.add_argument("--replications", "-R", type=int, default=None,
                           help="override montecarlo.R")
        if name == "power":
            p.add_argument("--simulate", type=int, default=0, metavar="R",
                           help="also estimate power by Monte Carlo with R replicates")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("must be at least 1", "--threads")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("must be a 64-bit unsigned integer", "--seed")
        rc = load_config(_resolve_config(args.config), seed=args.seed)
        out = Path(args.out if args.out is not None else rc.output_dir)
        result = COMMANDS[args.command](rc, args, out)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    except (BudsimError, ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_clean(result), sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
