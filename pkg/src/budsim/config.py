"""Run configuration: TOML files validated against a JSON schema.

A config has a ``[design]`` table, one ``[[arms]]`` table per arm and
optional ``[montecarlo]``, ``[test]``, ``[diagnose]`` and ``[output]``
tables. See the bundled files under ``budsim/configs`` for complete examples.
"""
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .engine import DesignConfig
from .errors import ConfigError, InvalidPriorError
from .inference import TestSpec
from .outcome_models import NefModel, TruncatedWeibullModel
from .posterior import ConjugateState

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

_pos = {"type": "number", "exclusiveMinimum": 0}
_pair = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_ints = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["design", "arms"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "design": {
            "type": "object",
            "additionalProperties": False,
            "required": ["h", "n"],
            "properties": {
                "K": {"type": "integer"},
                "h": {"type": "number", "minimum": 0},
                "n": {"type": "integer", "minimum": 1},
                "record_every": {"type": "integer", "minimum": 1},
                "grid_size": {"type": "integer", "minimum": 9},
                "outcome_nodes": {"type": "integer", "minimum": 8},
            },
        },
        "arms": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["family", "params"],
                "properties": {
                    "family": {"enum": ["bernoulli", "exp_mean", "normal", "trunc_weibull"]},
                    "params": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["theta"],
                        "properties": {
                            "theta": {"type": "number"},
                            "sigma2": _pos,
                            "rate": _pos,
                            "t0": _pos,
                            "theta_lo": _pos,
                            "theta_hi": _pos,
                        },
                    },
                    "prior": {
                        "oneOf": [
                            {"const": "uniform"},
                            {
                                "type": "object",
                                "additionalProperties": False,
                                "minProperties": 1,
                                "maxProperties": 2,
                                "properties": {
                                    "n0": _pos,
                                    "y0": {"type": "number"},
                                    "beta": _pair,
                                    "gamma": _pair,
                                    "normal": _pair,
                                },
                            },
                        ]
                    },
                },
            },
        },
        "montecarlo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "R": {"type": "integer", "minimum": 1},
                "checkpoints": _ints,
            },
        },
        "test": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                "t_grid": _ints,
            },
        },
        "diagnose": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "draws": {"type": "integer", "minimum": 100},
                "fd_step": {"type": "number", "minimum": 1e-7, "maximum": 1e-3},
                "h_values": {"type": "array", "items": _pos, "minItems": 1},
                "residual_n": {"type": "integer", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


@dataclass
class RunConfig:
    design: DesignConfig
    R: int = 1000
    checkpoints: tuple = (100, 1000, 10000)
    test: TestSpec = field(default_factory=TestSpec)
    t_grid: tuple = (100, 1000)
    draws: int = 10 ** 6
    fd_step: float = 1e-5
    h_values: tuple = (1.0, 5.0)
    residual_n: int = None
    output_dir: str = "out"
    source: str = None


def _path(err):
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def _build_model(arm, k):
    fam, prm = arm["family"], dict(arm["params"])
    where = f"arms[{k}].params"
    allowed = {
        "bernoulli": {"theta"},
        "exp_mean": {"theta"},
        "normal": {"theta", "sigma2"},
        "trunc_weibull": {"theta", "rate", "t0", "theta_lo", "theta_hi"},
    }[fam]
    extra = set(prm) - allowed
    if extra:
        raise ConfigError(f"unexpected keys {sorted(extra)} for family {fam}", where)
    try:
        if fam == "trunc_weibull":
            return TruncatedWeibullModel(**prm)
        if fam == "normal" and "sigma2" not in prm:
            raise ConfigError("normal arms need sigma2", where)
        return NefModel(fam, prm["theta"], prm.get("sigma2", 1.0))
    except ValueError as exc:
        raise ConfigError(str(exc), where) from None


def _build_prior(arm, model, k):
    where = f"arms[{k}].prior"
    pr = arm.get("prior", "uniform" if model.kind == "trunc_weibull" else None)
    if model.kind == "trunc_weibull":
        if pr != "uniform":
            raise ConfigError("truncated Weibull arms take prior = \"uniform\"", where)
        return "uniform"
    if pr is None or pr == "uniform":
        raise ConfigError("conjugate arms need an explicit prior", where)
    sigma2 = getattr(model, "sigma2", 1.0)
    try:
        if set(pr) == {"n0", "y0"}:
            return ConjugateState(float(pr["n0"]), float(pr["y0"]), model.kind,
                                  sigma2 if model.kind == "normal" else 1.0)
        if len(pr) != 1:
            raise ConfigError("give either {n0, y0} or one of beta/gamma/normal", where)
        (kind, (a, b)), = pr.items()
        if kind == "beta" and model.kind == "bernoulli":
            return ConjugateState.from_beta(a, b)
        if kind == "gamma" and model.kind == "exp_mean":
            return ConjugateState.from_gamma(a, b)
        if kind == "normal" and model.kind == "normal":
            return ConjugateState.from_normal(a, b, sigma2)
        raise ConfigError(f"{kind} prior does not fit family {model.kind}", where)
    except InvalidPriorError as exc:
        raise ConfigError(str(exc), where) from None


def parse_config(doc, source=None, seed=None):
    """Validate a decoded config document and build a :class:`RunConfig`."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(err.message, _path(err)) from None
    des = doc["design"]
    arms = doc["arms"]
    if len(arms) < 2:
        raise ConfigError(f"need at least 2 arms, got {len(arms)}", "K")
    if "K" in des and des["K"] != len(arms):
        raise ConfigError(f"K={des['K']} but {len(arms)} arms are listed", "K")
    models = tuple(_build_model(a, k) for k, a in enumerate(arms))
    priors = tuple(_build_prior(a, m, k) for k, (a, m) in enumerate(zip(arms, models)))
    eff_seed = int(doc.get("seed", 0) if seed is None else seed)
    design = DesignConfig(
        K=len(arms), h=float(des["h"]), n=int(des["n"]), truth=models, priors=priors,
        seed=eff_seed, record_every=int(des.get("record_every", 1)),
        grid_size=int(des.get("grid_size", 513)), outcome_nodes=int(des.get("outcome_nodes", 128)),
    )
    mc = doc.get("montecarlo", {})
    cps = tuple(mc.get("checkpoints", [c for c in (100, 1000, 10000) if c <= design.n] or [design.n]))
    if max(cps) > design.n:
        raise ConfigError(f"checkpoint {max(cps)} exceeds n={design.n}", "montecarlo.checkpoints")
    tst = doc.get("test", {})
    t_grid = tuple(tst.get("t_grid", [t for t in (100, 1000) if t <= design.n] or [design.n]))
    if max(t_grid) > design.n:
        raise ConfigError(f"t_grid value {max(t_grid)} exceeds n={design.n}", "test.t_grid")
    try:
        spec = TestSpec(alpha=float(tst.get("alpha", 0.05)), beta=float(tst.get("beta", 0.2)))
    except ValueError as exc:
        raise ConfigError(str(exc), "test") from None
    dg = doc.get("diagnose", {})
    return RunConfig(
        design=design, R=int(mc.get("R", 1000)), checkpoints=cps, test=spec, t_grid=t_grid,
        draws=int(dg.get("draws", 10 ** 6)), fd_step=float(dg.get("fd_step", 1e-5)),
        h_values=tuple(float(x) for x in dg.get("h_values", [1.0, 5.0])),
        residual_n=dg.get("residual_n"), output_dir=doc.get("output", {}).get("dir", "out"),
        source=source,
    )


def load_config(path, seed=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}", str(path)) from None
    return parse_config(doc, source=str(path), seed=seed)


def bundled_config(name):
    """Path to one of the bundled scenario files, e.g. ``bundled_config("binary")``."""
    ref = resources.files("budsim") / "configs" / f"{name}.toml"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return Path(str(ref))


def bundled_names():
    base = resources.files("budsim") / "configs"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".toml"))
