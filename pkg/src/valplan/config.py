"""Configuration files for the command-line interface.

A run is described by one JSON document with three sections: ``evidence``
(four marginal distributions, the risk-distribution family and the
correlation mode), ``targets`` (sample-size rules plus the net-benefit
threshold), and ``run`` (seed, draw counts, fixed n or grid, engine mode
and search hyperparameters).  Validation errors name the offending key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .evidence import (EvidencePrior, Marginal, marginal_from_moments,
                       marginal_from_upper95, pointmass)
from .planner import SearchConfig
from .precision import SampleSizeRule

LOCATION_NAMES = ("intercept", "oe_ratio", "mean_calibration")
RISK_FAMILIES = ("beta", "logitnormal", "probitnormal")

_MARGINAL_TARGETS = ("prevalence", "cstat", "slope") + LOCATION_NAMES


@dataclass(frozen=True)
class RunSettings:
    seed: int
    s_draws: int = 10_000
    n: int | None = None
    n_grid: tuple = ()
    mode: str = "sample_based"
    slope_se: str = "model"
    smoother_span: float = 0.75
    workers: int = 1
    search: SearchConfig = field(default_factory=SearchConfig)


@dataclass(frozen=True)
class PlanConfig:
    prior: EvidencePrior
    family: str
    rules: tuple
    nb_threshold: float
    nb_baseline: str | int
    run: RunSettings
    bootstrap_settings: dict = field(default_factory=dict)
    frequentist_points: dict | None = None
    source_path: str = ""


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}", "missing required key")
    return mapping[key]


def _parse_marginal(node: dict, path: str) -> Marginal:
    family = _require(node, "family", path)
    try:
        if family == "pointmass":
            return pointmass(float(_require(node, "value", path)))
        if "mean" in node and "sd" in node:
            return marginal_from_moments(family, float(node["mean"]), float(node["sd"]))
        if "mean" in node and "upper95" in node:
            return marginal_from_upper95(family, float(node["mean"]),
                                         float(node["upper95"]))
        if family == "beta":
            return Marginal("beta", float(_require(node, "a", path)),
                            float(_require(node, "b", path)))
        if family == "normal":
            return Marginal("normal", float(_require(node, "mean", path)),
                            float(_require(node, "sd", path)))
        if family in ("lognormal", "logitnormal"):
            return Marginal(family, float(_require(node, "mu", path)),
                            float(_require(node, "sigma", path)))
    except ConfigError:
        raise
    except (DomainError, ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.family", f"unknown marginal family {family!r}")


def _parse_rule(node: dict, idx: int) -> SampleSizeRule:
    path = f"targets.rules[{idx}]"
    crit = _require(node, "criterion", path)
    try:
        return SampleSizeRule(
            criterion=crit,
            metric=node.get("metric"),
            tau=float(node["tau"]) if "tau" in node else None,
            q=float(node["q"]) if "q" in node else None,
            level=float(node["level"]) if "level" in node else None)
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(path: str | Path, overrides: dict | None = None) -> PlanConfig:
    """Load and validate a plan configuration.

    ``overrides`` maps run keys (seed, s_draws, n, workers) to replacement
    values, taking precedence over the file.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "config file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc

    ev = _require(raw, "evidence", "<root>")
    family = ev.get("risk_family", "logitnormal")
    if family not in RISK_FAMILIES:
        raise ConfigError("evidence.risk_family",
                          f"must be one of {RISK_FAMILIES}, got {family!r}")

    margs = _require(ev, "marginals", "evidence")
    unknown = set(margs) - set(_MARGINAL_TARGETS)
    if unknown:
        raise ConfigError("evidence.marginals",
                          f"unknown marginal name(s): {sorted(unknown)}")
    location_kinds = [k for k in LOCATION_NAMES if k in margs]
    if len(location_kinds) != 1:
        raise ConfigError(
            "evidence.marginals",
            "exactly one calibration-location marginal is required "
            f"(one of {LOCATION_NAMES}), found {location_kinds or 'none'}")
    for name in ("prevalence", "cstat", "slope"):
        if name not in margs:
            raise ConfigError(f"evidence.marginals.{name}", "missing marginal")
    location_kind = location_kinds[0]

    parsed = {name: _parse_marginal(margs[name], f"evidence.marginals.{name}")
              for name in margs}

    corr_node = ev.get("correlation", {"mode": "independent"})
    mode_corr = corr_node.get("mode", "independent")
    if mode_corr not in ("independent", "user", "bootstrap"):
        raise ConfigError("evidence.correlation.mode",
                          f"must be independent|user|bootstrap, got {mode_corr!r}")
    matrix = None
    if mode_corr == "user":
        matrix = np.asarray(_require(corr_node, "matrix", "evidence.correlation"),
                            dtype=float)
    bootstrap_settings = dict(corr_node.get("bootstrap", {}))

    try:
        prior = EvidencePrior(
            prevalence=parsed["prevalence"], cstat=parsed["cstat"],
            slope=parsed["slope"], location=parsed[location_kind],
            location_kind=location_kind, rank_correlation=matrix,
            correlation_source=mode_corr)
    except DomainError as exc:
        raise ConfigError("evidence", str(exc)) from exc

    tg = raw.get("targets", {})
    rules = tuple(_parse_rule(r, i) for i, r in enumerate(tg.get("rules", [])))
    z = float(tg.get("nb_threshold", 0.2))
    if not 0 < z < 1:
        raise ConfigError("targets.nb_threshold", f"must lie in (0,1), got {z}")
    baseline = tg.get("nb_baseline", "best_current")
    if baseline != "best_current":
        if baseline not in (0, 1, 2, "none", "model", "all"):
            raise ConfigError("targets.nb_baseline",
                              "must be best_current or a strategy (none|model|all)")
        baseline = {"none": 0, "model": 1, "all": 2}.get(baseline, baseline)

    fp = raw.get("frequentist_points")
    if fp is not None:
        for key in ("prevalence", "cstat", "slope"):
            if key not in fp:
                raise ConfigError(f"frequentist_points.{key}", "missing point value")
        loc_keys = [k for k in LOCATION_NAMES if k in fp]
        if len(loc_keys) != 1:
            raise ConfigError("frequentist_points",
                              f"exactly one of {LOCATION_NAMES} is required")
        fp = {"prevalence": float(fp["prevalence"]), "cstat": float(fp["cstat"]),
              "slope": float(fp["slope"]), "location": float(fp[loc_keys[0]]),
              "location_kind": loc_keys[0]}

    rn = dict(raw.get("run", {}))
    for key, val in (overrides or {}).items():
        if val is not None:
            rn[key] = val
    if "seed" not in rn or rn["seed"] is None:
        raise ConfigError("run.seed", "a seed is mandatory (reproducibility contract)")

    search_node = dict(rn.get("search", {}))
    try:
        search = SearchConfig(**search_node)
    except (DomainError, TypeError) as exc:
        raise ConfigError("run.search", str(exc)) from exc

    try:
        run = RunSettings(
            seed=int(rn["seed"]),
            s_draws=int(rn.get("s_draws", 10_000)),
            n=int(rn["n"]) if rn.get("n") is not None else None,
            n_grid=tuple(int(v) for v in rn.get("n_grid", ())),
            mode=str(rn.get("mode", "sample_based")),
            slope_se=str(rn.get("slope_se", "model")),
            smoother_span=float(rn.get("smoother_span", 0.75)),
            workers=int(rn.get("workers", 1)),
            search=search)
    except (ValueError, TypeError) as exc:
        raise ConfigError("run", str(exc)) from exc
    if run.mode not in ("sample_based", "two_step"):
        raise ConfigError("run.mode", f"must be sample_based|two_step, got {run.mode!r}")
    if run.slope_se not in ("model", "formula"):
        raise ConfigError("run.slope_se", f"must be model|formula, got {run.slope_se!r}")
    if run.s_draws < 1:
        raise ConfigError("run.s_draws", "must be >= 1")
    if run.workers < 1:
        raise ConfigError("run.workers", "must be >= 1")
    if run.n_grid and list(run.n_grid) != sorted(set(run.n_grid)):
        raise ConfigError("run.n_grid", "must be strictly ascending")

    return PlanConfig(prior=prior, family=family, rules=rules, nb_threshold=z,
                      nb_baseline=baseline, run=run,
                      bootstrap_settings=bootstrap_settings,
                      frequentist_points=fp, source_path=str(path))


def resolve_points(config: PlanConfig) -> dict:
    """Point estimates for the frequentist baseline.

    Explicit ``frequentist_points`` win; otherwise the marginal means are
    used with the configured location kind.
    """
    if config.frequentist_points is not None:
        return dict(config.frequentist_points)
    point = config.prior.mean_point()
    point["location_kind"] = config.prior.location_kind
    return point
