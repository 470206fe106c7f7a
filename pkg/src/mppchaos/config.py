"""YAML run configuration: schema, defaults and construction of model objects.

Top-level blocks (all optional except ``model`` and ``sim.seed``)::

    model:   kind (poisson | ctmc | renewal), horizon, marks, representation,
             rate + mark_dist (poisson), generator + initial_state (ctmc),
             hazard {family, params...} + kernel + initial_mark (renewal)
    zeta:    time_density {family, params...}, scale, mark_weights, overrides
    sim:     paths, seed, workers, chunk
    quad:    nodes
    mode:    rescale (sqrt_psi | psi | none)
    chaos:   max_order, time_degree, ridge, functionals, thresholds
    oracle:  n_max, quad_nodes, tolerance
    suites:  list of suite names
    policy:  threshold (standard errors), exact (absolute tolerance)
    output:  report_csv, report_json, paths_csv
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any

import yaml

from .errors import ConfigError
from .martingale import Rescale, ZetaSpec
from .model import (
    CTMC,
    MarkedPoisson,
    MarkSpace,
    ModelSpec,
    Renewal,
    Representation,
    ValidatedModel,
    make_hazard,
    validate_model,
)
from .oracle import OracleConfig

SUITES = (
    "martingale",
    "isometry",
    "simplex",
    "orthogonality",
    "completeness",
    "oracle-check",
    "boundary",
    "telescoping",
)

DEFAULTS: dict[str, Any] = {
    "zeta": {"time_density": {"family": "constant"}, "scale": 1.0, "mark_weights": None, "overrides": {}},
    "sim": {"paths": 100_000, "workers": 1, "chunk": 4096},
    "quad": {"nodes": 16},
    "mode": {"rescale": "sqrt_psi"},
    "chaos": {"max_order": 3, "time_degree": 0, "ridge": None, "functionals": ["N", "N2", "exp_neg_N"], "thresholds": {}},
    "oracle": {"n_max": 6, "quad_nodes": 8, "tolerance": 1e-8},
    "suites": list(SUITES),
    "policy": {"threshold": 3.5, "exact": 1e-9},
    "output": {"report_csv": "report.csv", "report_json": "report.json", "paths_csv": None},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class SuiteConfig:
    model: ValidatedModel
    zeta: ZetaSpec
    paths: int
    seed: int
    workers: int
    chunk: int
    quad_nodes: int
    mode: Rescale
    max_order: int
    time_degree: int
    ridge: float | None
    functionals: list
    thresholds: dict
    oracle: OracleConfig
    suites: list
    threshold: float
    exact_tol: float
    output: dict
    raw: dict = field(repr=False, default_factory=dict)
    source: str | None = None


def _model_from(block: dict) -> ModelSpec:
    try:
        kind = block["kind"]
    except KeyError as exc:
        raise ConfigError("model.kind is required") from exc
    horizon = float(block.get("horizon", 1.0))
    rep = Representation(block.get("representation", "state_after_jump"))
    if kind == "poisson":
        dist = tuple(float(p) for p in block.get("mark_dist", [1.0]))
        labels = tuple(block.get("marks", range(len(dist))))
        ms = MarkSpace.cyclic(len(labels), labels) if block.get("group") == "cyclic" else MarkSpace(labels)
        return ModelSpec(ms, MarkedPoisson(float(block.get("rate", 1.0)), dist), rep, horizon)
    if kind == "ctmc":
        gen = tuple(tuple(float(v) for v in row) for row in block["generator"])
        labels = tuple(block.get("marks", range(len(gen))))
        ms = MarkSpace.cyclic(len(labels), labels) if rep is Representation.JUMP_INCREMENT else MarkSpace(labels)
        return ModelSpec(ms, CTMC(gen, block.get("initial_state")), rep, horizon)
    if kind == "renewal":
        hz = dict(block["hazard"])
        family = hz.pop("family")
        kernel = tuple(tuple(float(v) for v in row) for row in block["kernel"])
        labels = tuple(block.get("marks", range(len(kernel[0]))))
        return ModelSpec(MarkSpace(labels), Renewal(make_hazard(family, **hz), kernel, block.get("initial_mark")), rep, horizon)
    raise ConfigError(f"unknown model kind {kind!r}")


def zeta_from(block: dict) -> ZetaSpec:
    td = dict(block.get("time_density") or {"family": "constant"})
    family = td.pop("family", "constant")
    weights = block.get("mark_weights")
    overrides = {int(k): tuple(float(x) for x in v) for k, v in (block.get("overrides") or {}).items()}
    return ZetaSpec(
        time_family=family,
        time_params=td,
        scale=float(block.get("scale", 1.0)),
        mark_weights_all=None if weights is None else tuple(float(w) for w in weights),
        overrides=overrides,
    )


def build_config(raw: dict, source: str | None = None) -> SuiteConfig:
    """Validate a parsed config tree and build the model objects.

    Raises:
        ConfigError: missing or malformed keys (including a missing sim.seed).
    """
    if not isinstance(raw, dict) or "model" not in raw:
        raise ConfigError("config needs a model block")
    if "seed" not in (raw.get("sim") or {}):
        raise ConfigError("sim.seed is required; runs are never seeded from the clock")
    cfg = _merge(DEFAULTS, raw)
    unknown = [s for s in cfg["suites"] if s not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suites {unknown}; choose from {list(SUITES)}")
    try:
        zeta = zeta_from(cfg["zeta"])
        model = validate_model(_model_from(cfg["model"]), zeta if (zeta.mark_weights_all or zeta.overrides) else None)
        mode = Rescale(cfg["mode"]["rescale"])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    ch, orc, sim = cfg["chaos"], cfg["oracle"], cfg["sim"]
    return SuiteConfig(
        model=model,
        zeta=zeta,
        paths=int(sim["paths"]),
        seed=int(sim["seed"]),
        workers=int(sim["workers"]),
        chunk=int(sim["chunk"]),
        quad_nodes=int(cfg["quad"]["nodes"]),
        mode=mode,
        max_order=int(ch["max_order"]),
        time_degree=int(ch["time_degree"]),
        ridge=None if ch["ridge"] is None else float(ch["ridge"]),
        functionals=list(ch["functionals"]),
        thresholds={str(k): {int(m): float(v) for m, v in d.items()} for k, d in (ch["thresholds"] or {}).items()},
        oracle=OracleConfig(n_max=int(orc["n_max"]), quad_nodes=int(orc["quad_nodes"]), tolerance=float(orc["tolerance"])),
        suites=list(cfg["suites"]),
        threshold=float(cfg["policy"]["threshold"]),
        exact_tol=float(cfg["policy"]["exact"]),
        output=dict(cfg["output"]),
        raw=cfg,
        source=source,
    )


def load_config(path: str | FsPath, overrides: dict | None = None) -> SuiteConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if overrides:
        raw = _merge(raw or {}, overrides)
    return build_config(raw, source=str(path))
