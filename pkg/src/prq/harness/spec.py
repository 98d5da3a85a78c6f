"""Experiment specifications: JSON schema, defaults with provenance, builtins."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..errors import ValidationError
from ..mdp import FeatureSet, MdpModel, StochasticPolicy
from . import example1

ALGORITHMS = ("rp_vi", "p_vi", "regq_model", "prq_iid", "prq_markov", "regq_iid", "regq_markov")
MODEL_BASED = ("rp_vi", "p_vi", "regq_model")
WEIGHT_MODES = ("stationary", "uniform")

# key -> default.  ``None`` means "resolved from other keys".
DEFAULTS = {
    "name": "experiment",
    "mdp": "example1",
    "features": "example1",
    "gamma": example1.GAMMA,
    "eta": example1.ETA,
    "weight_mode": "stationary",
    "behavior_policy": None,
    "init_dist": None,
    "algorithm": "prq_iid",
    "alpha": 0.05,
    "T": 2000,
    "K": 100,
    "iters": 2000,
    "seeds": [0],
    "theta_init": None,
    "log_every": None,
    "output_dir": None,
    "tol": 1e-10,
    "threshold": None,
    "tail_fraction": 0.2,
    "enumeration_cap": 2 ** 20,
}
MDP_KEYS = ("n_states", "n_actions", "transition", "reward", "reward_table")

_BASE = {"mdp": "example1", "features": "example1", "gamma": 0.99, "eta": 0.01,
         "weight_mode": "stationary", "theta_init": [0.0, 0.0]}

BUILTINS = {
    # model-based contrast: RP-VI against the deterministic RegQ recursion
    "example1-modelbased": dict(_BASE, name="example1-modelbased",
                                algorithm=["rp_vi", "regq_model"], alpha=0.05, iters=200000,
                                tol=1e-300, log_every=10),
    "example1-iid": dict(_BASE, name="example1-iid", algorithm=["prq_iid", "regq_iid"],
                         alpha=5e-4, K=4000, T=20000, seeds=list(range(10))),
    "example1-markov": dict(_BASE, name="example1-markov", algorithm=["prq_markov", "regq_markov"],
                            alpha=2.5e-4, K=8000, T=20000, seeds=list(range(10))),
    # the nominal small budget (alpha=0.05, K=100, T*K=2e5), kept for comparison
    "example1-nominal": dict(_BASE, name="example1-nominal",
                             algorithm=["prq_iid", "regq_iid", "prq_markov", "regq_markov"],
                             alpha=0.05, K=100, T=2000, seeds=list(range(10))),
}


def _key_line(text: Optional[str], key: str) -> Optional[int]:
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text[:m.start()].count("\n") + 1 if m else None


def _err(key, msg, text=None):
    line = _key_line(text, key)
    where = f" (line {line})" if line is not None else ""
    return ValidationError(f"spec key '{key}'{where}: {msg}")


@dataclass
class ExperimentSpec:
    """A fully resolved experiment description.

    ``values`` holds every schema key; ``provenance[key]`` is ``"given"``,
    ``"builtin"`` or ``"defaulted"``.
    """

    values: dict
    provenance: dict
    source: str = "inline"

    def __getattr__(self, key):
        values = self.__dict__.get("values", {})
        if key in values:
            return values[key]
        raise AttributeError(key)

    @property
    def algorithms(self) -> list:
        alg = self.values["algorithm"]
        return [alg] if isinstance(alg, str) else list(alg)

    def to_dict(self) -> dict:
        return {"spec": copy.deepcopy(self.values), "provenance": dict(self.provenance),
                "source": self.source}

    def with_overrides(self, **kw) -> "ExperimentSpec":
        raw = {k: v for k, v in self.values.items() if self.provenance.get(k) != "defaulted"}
        raw.update(kw)
        spec = resolve(raw, source=self.source)
        for k, v in self.provenance.items():
            if k not in kw and spec.provenance.get(k) != "defaulted":
                spec.provenance[k] = v
        for k in kw:
            spec.provenance[k] = "override"
        return spec

    # -- model construction ----------------------------------------------------

    def build_mdp(self) -> MdpModel:
        m = self.values["mdp"]
        if m == "example1":
            return example1.mdp(self.values["gamma"])
        return MdpModel(m["n_states"], m["n_actions"], self.values["gamma"],
                        np.asarray(m["transition"], float), np.asarray(m["reward"], float),
                        None if m.get("reward_table") is None else np.asarray(m["reward_table"], float))

    def build_features(self) -> FeatureSet:
        f = self.values["features"]
        if f == "example1":
            return example1.features()
        if f == "identity":
            mdp = self.build_mdp()
            return FeatureSet.identity(mdp.n_pairs)
        return FeatureSet(np.asarray(f, float))

    def build_behavior(self) -> StochasticPolicy:
        b = self.values["behavior_policy"]
        if b == "example1":
            return example1.behavior()
        return StochasticPolicy(np.asarray(b, float))


def _check_number(key, v, text, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _err(key, f"expected a number, got {v!r}", text)
    if integer and int(v) != v:
        raise _err(key, f"expected an integer, got {v!r}", text)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise _err(key, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}", text)
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise _err(key, f"must be {'<' if hi_open else '<='} {hi}, got {v!r}", text)


def _check_matrix(key, v, text, ndim):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise _err(key, "expected a numeric array", text) from None
    if arr.ndim != ndim or not np.all(np.isfinite(arr)):
        raise _err(key, f"expected a finite {ndim}-d array", text)


def resolve(raw: dict, text: Optional[str] = None, source: str = "inline",
            provenance_given: str = "given") -> ExperimentSpec:
    """Validate ``raw`` against the schema and fill defaults."""
    if not isinstance(raw, dict):
        raise ValidationError("spec must be a JSON object")
    unknown = [k for k in raw if k not in DEFAULTS]
    if unknown:
        raise _err(unknown[0], "unknown key", text)
    values, prov = {}, {}
    for key, default in DEFAULTS.items():
        if key in raw:
            values[key] = copy.deepcopy(raw[key])
            prov[key] = provenance_given
        else:
            values[key] = copy.deepcopy(default)
            prov[key] = "defaulted"
    v = values

    if not isinstance(v["name"], str) or not v["name"]:
        raise _err("name", "expected a non-empty string", text)
    if isinstance(v["mdp"], str):
        if v["mdp"] != "example1":
            raise _err("mdp", f"unknown builtin MDP {v['mdp']!r}", text)
    elif isinstance(v["mdp"], dict):
        bad = [k for k in v["mdp"] if k not in MDP_KEYS]
        if bad:
            raise _err("mdp", f"unknown sub-key '{bad[0]}'", text)
        for k in ("n_states", "n_actions", "transition", "reward"):
            if k not in v["mdp"]:
                raise _err("mdp", f"missing sub-key '{k}'", text)
        _check_number("mdp", v["mdp"]["n_states"], text, lo=1, integer=True)
        _check_number("mdp", v["mdp"]["n_actions"], text, lo=1, integer=True)
        _check_matrix("mdp", v["mdp"]["transition"], text, 2)
        _check_matrix("mdp", v["mdp"]["reward"], text, 1)
        if v["mdp"].get("reward_table") is not None:
            _check_matrix("mdp", v["mdp"]["reward_table"], text, 2)
    else:
        raise _err("mdp", "expected 'example1' or an object", text)

    if isinstance(v["features"], str):
        if v["features"] not in ("example1", "identity"):
            raise _err("features", f"unknown builtin features {v['features']!r}", text)
        if v["features"] == "example1" and v["mdp"] != "example1":
            raise _err("features", "builtin 'example1' features need the builtin MDP", text)
    else:
        _check_matrix("features", v["features"], text, 2)

    _check_number("gamma", v["gamma"], text, lo=0, hi=1, lo_open=True, hi_open=True)
    _check_number("eta", v["eta"], text, lo=0)
    wm = v["weight_mode"]
    if isinstance(wm, str):
        if wm not in WEIGHT_MODES:
            raise _err("weight_mode", f"expected one of {WEIGHT_MODES} or a vector, got {wm!r}", text)
    else:
        _check_matrix("weight_mode", wm, text, 1)

    if v["behavior_policy"] is None:
        if v["mdp"] == "example1":
            v["behavior_policy"] = "example1"
        else:
            nS, nA = v["mdp"]["n_states"], v["mdp"]["n_actions"]
            v["behavior_policy"] = np.full((nS, nA), 1.0 / nA).tolist()
    elif v["behavior_policy"] != "example1":
        _check_matrix("behavior_policy", v["behavior_policy"], text, 2)
    if v["init_dist"] is not None:
        _check_matrix("init_dist", v["init_dist"], text, 1)

    algs = [v["algorithm"]] if isinstance(v["algorithm"], str) else v["algorithm"]
    if not isinstance(algs, list) or not algs:
        raise _err("algorithm", "expected a name or a non-empty list of names", text)
    for a in algs:
        if a not in ALGORITHMS:
            raise _err("algorithm", f"unknown algorithm {a!r}; choose from {ALGORITHMS}", text)
    if len(set(algs)) != len(algs):
        raise _err("algorithm", "duplicate algorithm", text)

    _check_number("alpha", v["alpha"], text, lo=0, hi=1, hi_open=True)
    for key in ("T", "K", "iters", "enumeration_cap"):
        _check_number(key, v[key], text, lo=1, integer=True)
        v[key] = int(v[key])
    seeds = v["seeds"]
    if not isinstance(seeds, list) or not seeds:
        raise _err("seeds", "expected a non-empty list of integers", text)
    for s in seeds:
        if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2 ** 64:
            raise _err("seeds", f"seed {s!r} is not a 64-bit unsigned integer", text)
    if len(set(seeds)) != len(seeds):
        raise _err("seeds", "duplicate seed", text)
    if v["theta_init"] is not None:
        _check_matrix("theta_init", v["theta_init"], text, 1)
    if v["log_every"] is not None:
        _check_number("log_every", v["log_every"], text, lo=1, integer=True)
        v["log_every"] = int(v["log_every"])
    if v["output_dir"] is not None and not isinstance(v["output_dir"], str):
        raise _err("output_dir", "expected a path string", text)
    _check_number("tol", v["tol"], text, lo=0, lo_open=True)
    if v["threshold"] is not None:
        _check_number("threshold", v["threshold"], text, lo=0, lo_open=True)
    _check_number("tail_fraction", v["tail_fraction"], text, lo=0, hi=1, lo_open=True)
    return ExperimentSpec(values, prov, source)


def load_spec(path_or_name) -> ExperimentSpec:
    """Load a JSON spec file or a builtin by name (see ``BUILTINS``)."""
    name = str(path_or_name)
    if name in BUILTINS:
        return resolve(copy.deepcopy(BUILTINS[name]), source=f"builtin:{name}",
                       provenance_given="builtin")
    path = Path(name)
    if not path.is_file():
        raise ValidationError(f"spec {name!r} is neither a file nor a builtin "
                              f"({', '.join(sorted(BUILTINS))})")
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                              f"{exc.msg}") from None
    return resolve(raw, text=text, source=str(path))


def parse_grid_value(text: str) -> Any:
    """Grid values are JSON literals when they parse, strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_grid(items) -> dict:
    """``["gamma=0.9,0.95", "weight_mode=uniform,stationary"]`` -> ordered dict."""
    grid = {}
    for item in items:
        if "=" not in item:
            raise ValidationError(f"grid entry {item!r} must look like key=v1,v2,...")
        key, vals = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ValidationError(f"spec key '{key}': unknown key in --grid")
        grid[key] = [parse_grid_value(x.strip()) for x in vals.split(",") if x.strip()]
        if not grid[key]:
            raise ValidationError(f"spec key '{key}': empty grid")
    return grid


__all__ = ["ExperimentSpec", "load_spec", "resolve", "parse_grid", "BUILTINS", "DEFAULTS",
           "ALGORITHMS", "MODEL_BASED"]
