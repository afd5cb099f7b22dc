"""Run configuration: a JSON tree turned into model objects, with validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .catalog import KINDS, ScalarFunction, TimeFactor, identity
from .chain import RateFunction, TwoScaleSpec, build_epsilon_generator, check_chain_law, check_generator
from .flow import SwitchPolicy
from .measure import DiscreteLaw, check_law
from .model import (
    Affine,
    CoefficientSet,
    Constant,
    CostMatrix,
    MeanFieldAffine,
    PointFunction,
    SwitchCost,
    TradingReward,
)
from .trading import TradingExampleSpec


class ConfigError(ValueError):
    """The configuration is malformed or fails validation."""


def scalar_function(d):
    if d is None:
        return None
    if not isinstance(d, dict) or d.get("kind") not in KINDS:
        raise ConfigError(f"unknown catalog function {d!r}")
    return ScalarFunction.from_dict(d)


def coefficient(d, n_chain, n_modes, dim, vector):
    if isinstance(d, (int, float, list)):
        d = {"kind": "constant", "value": d}
    kind = d.get("kind")
    z = dict(n_chain=n_chain, n_modes=n_modes)
    if kind == "constant":
        return Constant(d.get("value", 0.0), dim=dim, vector=vector, **z)
    if kind == "affine":
        return Affine(d.get("slope", 0.0), d.get("intercept", 0.0), dim=dim, vector=vector, **z)
    if kind == "point":
        return PointFunction(scalar_function(d["psi"]), d.get("scale", 1.0), **z)
    if kind == "mean_field_affine":
        return MeanFieldAffine(
            d.get("slope", 0.0), d.get("intercept", 0.0), d.get("coupling", 0.0),
            scalar_function(d.get("psi", {"kind": "affine", "params": [1.0, 0.0]})),
            d.get("moment_mode"), dim=dim, vector=vector, **z,
        )
    if kind == "trading":
        return TradingReward(scalar_function(d.get("psi", identity().to_dict())), d["a1"], d["a0"], d.get("sign", -1.0))
    raise ConfigError(f"unknown coefficient kind {kind!r}")


def cost_matrix(d, n_modes):
    kind = d.get("kind", "constant")
    if kind == "constant":
        return CostMatrix.constant(d.get("value", 1.0), n_modes)
    if kind == "trading":
        return CostMatrix.trading(float(d["horizon"]), scalar_function(d.get("psi", identity().to_dict())))
    if kind == "entries":
        entries = {}
        for e in d["entries"]:
            entries[(int(e["from"]), int(e["to"]))] = SwitchCost(
                TimeFactor.from_dict(e.get("time", {})), scalar_function(e.get("psi"))
            )
        return CostMatrix(n_modes, entries)
    raise ConfigError(f"unknown cost kind {kind!r}")


def two_scale_spec(d):
    if "lam1" in d:
        return TwoScaleSpec.trading(d["lam1"], d["lam2"], d["mu1"], d["mu2"], d.get("epsilon", 1.0))
    return TwoScaleSpec(d["blocks"], d["fast"], d["slow"], d.get("epsilon", 1.0))


def rate_function(d, n_chain):
    if d is None:
        return RateFunction.constant(np.zeros((n_chain, n_chain)))
    if "generator" in d:
        return RateFunction.constant(d["generator"])
    if "two_scale" in d:
        return RateFunction.constant(build_epsilon_generator(two_scale_spec(d["two_scale"])))
    rates = {(int(e["from"]), int(e["to"])): scalar_function(e["fn"]) for e in d.get("entries", [])}
    return RateFunction(n_chain, rates)


def initial_law(d, n_modes, dim):
    atoms = d.get("atoms")
    if not atoms:
        raise ConfigError("initial.atoms must be a nonempty list")
    x = np.array([np.atleast_1d(np.asarray(a["x"], float)) for a in atoms]).reshape(len(atoms), dim)
    modes = np.array([int(a["mode"]) for a in atoms])
    w = np.array([float(a.get("weight", 1.0 / len(atoms))) for a in atoms])
    return DiscreteLaw(x, modes, w, n_modes)


def trading_spec(d):
    psi = scalar_function(d.get("psi", identity().to_dict()))
    kw = {}
    if "domain" in d:
        kw["domain"] = tuple(d["domain"])
    if len(d["a1"]) == 4:
        return TradingExampleSpec.four_state(
            d["horizon"], d["a1"], d["a0"], d["lam1"], d["lam2"], d["mu1"], d["mu2"], d.get("epsilon", 1.0), psi, **kw
        )
    return TradingExampleSpec.two_state(d["horizon"], d["a1"], d["a0"], d.get("mu1", 0.0), d.get("mu2", 0.0), psi, **kw)


@dataclass
class RunConfig:
    raw: dict
    text: bytes
    coeffs: CoefficientSet | None = None
    costs: CostMatrix | None = None
    rates: RateFunction | None = None
    initial: DiscreteLaw | None = None
    chain_law: np.ndarray | None = None
    policy: SwitchPolicy | None = None
    trading: TradingExampleSpec | None = None
    two_scale: TwoScaleSpec | None = None
    numerics: dict = field(default_factory=dict)

    @property
    def sha256(self):
        return hashlib.sha256(self.text).hexdigest()

    def section(self, name):
        return self.raw.get(name, {})

    @property
    def seed(self):
        return int(self.numerics.get("seed", 0))


def _positive(numerics, key, cast=float):
    if key in numerics:
        val = cast(numerics[key])
        if not val > 0:
            raise ConfigError(f"numerics.{key} must be positive")


def parse_config(text):
    """Parse and validate a JSON config; raises ConfigError with a readable message."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    try:
        raw = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    cfg = RunConfig(raw, text)
    try:
        numerics = dict(raw.get("numerics", {}))
        for key in ("N", "dt", "T", "K", "record_every"):
            _positive(numerics, key)
        cfg.numerics = numerics
        if "trading" in raw:
            cfg.trading = trading_spec(raw["trading"])
            if cfg.trading.two_scale is not None:
                cfg.two_scale = cfg.trading.two_scale
        chain = raw.get("chain", {})
        if "two_scale" in chain:
            cfg.two_scale = two_scale_spec(chain["two_scale"])
        model = raw.get("model")
        if model is not None:
            n_chain = int(model.get("n_chain", 1))
            n_modes = int(model.get("n_modes", 2))
            dim = int(model.get("dim", 1))
            cfg.coeffs = CoefficientSet(
                coefficient(model.get("drift", 0.0), n_chain, n_modes, dim, True),
                coefficient(model.get("sigma", 0.0), n_chain, n_modes, dim, True),
                coefficient(model.get("reward", 0.0), n_chain, n_modes, dim, False),
                coefficient(model.get("terminal", 0.0), n_chain, n_modes, dim, False),
                n_chain, n_modes, dim,
            )
            cfg.costs = cost_matrix(model.get("costs", {}), n_modes)
            rates = model.get("rates", chain if ("generator" in chain or "two_scale" in chain) else None)
            cfg.rates = rate_function(rates, n_chain)
            if cfg.rates.n_states != n_chain:
                raise ConfigError("rate function size does not match model.n_chain")
            if "initial" in raw:
                cfg.initial = initial_law(raw["initial"], n_modes, dim)
                cl = raw["initial"].get("chain_law", [1.0 / n_chain] * n_chain)
                cfg.chain_law = check_chain_law(cl, n_chain)
        if "policy" in raw:
            cfg.policy = SwitchPolicy.from_dict(raw["policy"])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"invalid config: {exc!r}") from exc
    return cfg


def load_config(path):
    with open(path, "rb") as fh:
        return parse_config(fh.read())
