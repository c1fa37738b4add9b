"""Run configuration: a YAML file validated against a JSON schema.

Validation errors carry the line of the offending value (or of the
enclosing block when a key is missing), so the CLI can point at it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import jsonschema
import yaml

from .contracts import ContractSpec
from .models import GbmModel, SvModel, TimeGrid
from .pricing import KrigingRMC, LSMCPricer, Problem

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1}]}
_posint = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["model", "contract", "grid", "method"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["kind", "r", "x0"],
            "properties": {
                "kind": {"enum": ["gbm", "sv"]},
                "r": _num,
                "delta": _num,
                "sigma": _vec,
                "x0": {"type": "array", "items": _num, "minItems": 1},
                "a": _num,
                "m1": _num,
                "nu": _num,
                "rho": {"type": "number", "minimum": -1, "maximum": 1},
                "euler_dt": _pos,
                "kde_pilot": _posint,
            },
            "additionalProperties": False,
            "allOf": [
                {"if": {"properties": {"kind": {"const": "gbm"}}},
                 "then": {"required": ["sigma"]}},
                {"if": {"properties": {"kind": {"const": "sv"}}},
                 "then": {"required": ["a", "m1", "nu", "rho", "euler_dt"]}},
            ],
        },
        "contract": {
            "type": "object",
            "required": ["family", "strike"],
            "properties": {
                "family": {"enum": ["put", "basket-put", "max-call"]},
                "strike": _pos,
            },
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "required": ["maturity", "n_exercise"],
            "properties": {"maturity": _pos, "n_exercise": _posint},
            "additionalProperties": False,
        },
        "method": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["kriging", "lsmc-poly", "lsmc-bw11"]},
                "design": {"enum": ["lhs", "sobol", "halton", "grid", "probabilistic", "sequential"]},
                "n_sim": _posint,
                "reps": _posint,
                "itm_only": {"type": "boolean"},
                "kernel": {"enum": ["sqexp", "gaussian", "se", "matern52", "matern-5/2",
                                    "matern32", "matern-3/2"]},
                "optimize": {"type": "boolean"},
                "s2": _pos,
                "lengthscales": {"oneOf": [_pos, {"type": "array", "items": _pos, "minItems": 1}]},
                "noise": {"enum": ["auto", "empirical", "homoscedastic"]},
                "n_restarts": {"type": "integer", "minimum": 0},
                "target": {"enum": ["timing", "continuation"]},
                "n0": {"type": "integer", "minimum": 3},
                "n_candidates": _posint,
                "acquisition": {"enum": ["zc", "zc-sur"]},
                "refit_every": {"type": "integer", "minimum": 0},
                "adaptive_target_var": _pos,
                "adaptive_max_reps": _posint,
                "n_paths": _posint,
                "degree": {"type": "integer", "minimum": 0},
                "cells": _posint,
            },
            "additionalProperties": False,
        },
        "domain": {
            "type": "object",
            "required": ["lower", "upper"],
            "properties": {
                "lower": {"type": "array", "items": _num, "minItems": 1},
                "upper": {"type": "array", "items": _num, "minItems": 1},
                "mean_below": _num,
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
        "oos_seed": {"type": "integer", "minimum": 0},
        "n_out": _posint,
        "replications": _posint,
    },
}


LSMC_ONLY = {"n_paths", "degree", "cells"}


class ConfigError(ValueError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = f"{source}:" if source else ""
        where += f"{line}: " if line is not None else (" " if source else "")
        super().__init__(f"{where}{message}")


@dataclass
class RunConfig:
    name: str
    problem: Problem
    estimator: Any
    seed: int = 0
    oos_seed: int = 0
    n_out: int = 100_000
    replications: int = 1
    raw: Optional[dict] = None


def _plain(node, lines, path=()):
    """Convert a composed YAML node to Python data, recording each node's line."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
            lines[path + (key, "__key__")] = k.start_mark.line + 1
            out[key] = _plain(v, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def _line_for(err, lines):
    path = tuple(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = err.schema.get("properties", {})
        extra = [k for k in err.instance if k not in allowed]
        if extra:
            return lines.get(path + (extra[0], "__key__"), lines.get(path))
    while path not in lines and path:
        path = path[:-1]
    return lines.get(path)


def parse_text(text, source=None) -> dict:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    if node is None:
        raise ConfigError("empty configuration", 1, source)
    lines = {}
    try:
        data = _plain(node, lines)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.line, source) from None
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(data),
                    key=lambda e: (_line_for(e, lines) or 0, str(list(e.absolute_path))))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}", _line_for(err, lines), source)
    _semantic_checks(data, lines, source)
    return data


def _semantic_checks(data, lines, source):
    def fail(msg, *path):
        p = tuple(path)
        while p not in lines and p:
            p = p[:-1]
        raise ConfigError(msg, lines.get(p), source)

    m = data["model"]
    d = len(m["x0"])
    if m["kind"] == "sv" and d != 2:
        fail("sv model state is (price, log-vol): x0 needs 2 entries", "model", "x0")
    if m["kind"] == "gbm":
        if any(v <= 0 for v in m["x0"]):
            fail("x0 must be strictly positive", "model", "x0")
        sig = m["sigma"]
        if isinstance(sig, list) and len(sig) not in (1, d):
            fail(f"sigma has {len(sig)} entries, x0 has {d}", "model", "sigma")
    meth = data["method"]
    kind = meth["kind"]
    if kind.startswith("lsmc"):
        own = LSMC_ONLY | {"itm_only"}
    else:
        own = set(SCHEMA["properties"]["method"]["properties"]) - LSMC_ONLY
    for key in meth:
        if key != "kind" and key not in own:
            fail(f"key {key!r} does not apply to method {kind!r}", "method", key, "__key__")
    if kind == "kriging":
        reps = meth.get("reps", 100)
        if meth.get("n_sim", 3000) < reps:
            fail("n_sim must be at least reps", "method", "n_sim")
        design = meth.get("design", "lhs")
        if design != "probabilistic" and "domain" not in data:
            fail(f"design {design!r} needs a domain block", "method", "design")
    if "domain" in data:
        dom = data["domain"]
        lo, hi = dom["lower"], dom["upper"]
        if len(lo) != d or len(hi) != d:
            fail(f"domain bounds must have {d} entries", "domain")
        for j, (a, b) in enumerate(zip(lo, hi)):
            if not (math.isfinite(a) and math.isfinite(b)):
                fail("domain bounds must be finite", "domain", "lower", j)
            if not a < b:
                fail(f"domain lower[{j}] must be below upper[{j}]", "domain", "lower", j)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return build(parse_text(text, str(path)), default_name=path.stem)


def build(data: dict, default_name="run", seed=None) -> RunConfig:
    m = data["model"]
    r = float(m["r"])
    if m["kind"] == "gbm":
        model = GbmModel(r, float(m.get("delta", 0.0)), tuple(np_list(m["sigma"])), tuple(m["x0"]))
    else:
        model = SvModel(r, m["a"], m["m1"], m["nu"], m["rho"], tuple(m["x0"]), m["euler_dt"],
                        kde_pilot=m.get("kde_pilot", 10_000))
    c = data["contract"]
    contract = ContractSpec(c["family"], float(c["strike"]), r)
    g = data["grid"]
    grid = TimeGrid(float(g["maturity"]), int(g["n_exercise"]))
    if m["kind"] == "sv":
        model.steps_per_interval(grid)
    seed = data.get("seed", 0) if seed is None else seed
    meth = dict(data["method"])
    kind = meth.pop("kind")
    if kind == "kriging":
        dom = data.get("domain", {})
        est = KrigingRMC(lower=dom.get("lower"), upper=dom.get("upper"),
                         mean_cap=dom.get("mean_below"), seed=seed, **meth)
    else:
        keep = {k: meth[k] for k in ("degree", "cells", "n_paths", "itm_only") if k in meth}
        est = LSMCPricer(basis="poly" if kind == "lsmc-poly" else "bw11", seed=seed, **keep)
    return RunConfig(data.get("name", default_name), Problem(model, contract, grid), est, seed,
                     data.get("oos_seed", 0), data.get("n_out", 100_000),
                     data.get("replications", 1), data)


def np_list(v):
    return v if isinstance(v, list) else [v]
