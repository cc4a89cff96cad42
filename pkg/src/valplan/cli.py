"""Batch command-line interface.

Three subcommands share one JSON config:

  prec   anticipated precision / VoI metrics at a fixed sample size
  samp   minimum sample size satisfying the configured rules
  riley  conventional fixed-value baseline sample sizes

Outputs are a human-readable ``summary.txt`` plus machine-readable CSVs;
every number in the summary also appears in a CSV.  Identical config and
seed produce byte-identical outputs regardless of the worker count.

Exit codes: 0 success, 2 validation error, 3 numeric failure,
4 infeasible target.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import PlanConfig, parse_config, resolve_points
from .errors import (ConfigError, DomainError, InfeasibleTargetError,
                     NumericError, PriorInfeasibleError)
from .evidence import bootstrap_correlation, default_pilot_size, draw_theta, \
    theta_from_point
from .planner import plan
from .precision import (METRICS, calibration_error_bands, conventional_min_n,
                        conventional_width_fns, preposterior_widths, qciw)
from .voi import evsi_curve, true_operating_point, _voi_from_components

_EXIT_VALIDATION = 2
_EXIT_NUMERIC = 3
_EXIT_INFEASIBLE = 4


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _write_csv(path: Path, provenance: list[str], header: list[str], rows):
    lines = [f"# {p}" for p in provenance]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _provenance(cfg: PlanConfig, command: str, overrides: dict) -> list[str]:
    parts = [f"valplan {command}", f"config={cfg.source_path}",
             f"seed={cfg.run.seed}"]
    applied = {k: v for k, v in overrides.items() if v is not None}
    if applied:
        parts.append("overrides=" + ",".join(f"{k}={v}" for k, v in sorted(applied.items())))
    return [" ".join(parts)]


def _resolve_prior(cfg: PlanConfig, rng: np.random.Generator):
    """Apply bootstrap correlation recovery when configured."""
    prior = cfg.prior
    if prior.correlation_source != "bootstrap":
        return prior, None
    point = prior.mean_point()
    theta0 = theta_from_point(point, prior.location_kind, cfg.family)
    n_pilot = int(cfg.bootstrap_settings.get("n_pilot") or default_pilot_size(prior))
    b = int(cfg.bootstrap_settings.get("replicates", 500))
    matrix = bootstrap_correlation(theta0, n_pilot, b, rng,
                                   location_kind=prior.location_kind)
    from dataclasses import replace
    return replace(prior, rank_correlation=matrix), {"n_pilot": n_pilot, "replicates": b}


def cmd_prec(cfg: PlanConfig, out_dir: Path, overrides: dict) -> int:
    run = cfg.run
    if run.n is None and not run.n_grid:
        raise ConfigError("run.n", "prec needs a fixed n (or an n_grid)")
    n_main = run.n if run.n is not None else run.n_grid[-1]
    grid = list(run.n_grid) if run.n_grid else [n_main]

    root = np.random.default_rng(run.seed)
    boot_rng, theta_rng, width_rng, voi_rng, curve_rng, band_rng = root.spawn(6)
    prior, boot_info = _resolve_prior(cfg, boot_rng)

    thetas = draw_theta(prior, run.s_draws, cfg.family, theta_rng)
    widths = preposterior_widths(None, n_main, run.s_draws, run.mode, width_rng,
                                 family=cfg.family, slope_se=run.slope_se,
                                 thetas=thetas)
    se, sp = true_operating_point(thetas, cfg.nb_threshold)
    voi = _voi_from_components(thetas, se, sp, cfg.nb_threshold, n_main,
                               cfg.nb_baseline, rng=voi_rng)
    curve = evsi_curve(None, cfg.nb_threshold, grid, run.s_draws, curve_rng,
                       baseline=cfg.nb_baseline, family=cfg.family, thetas=thetas)
    bands = calibration_error_bands(None, n_main, run.s_draws, None, band_rng,
                                    family=cfg.family, span=run.smoother_span,
                                    thetas=thetas)

    prov = _provenance(cfg, "prec", overrides)
    if boot_info:
        prov.append(f"bootstrap correlation: n_pilot={boot_info['n_pilot']} "
                    f"replicates={boot_info['replicates']}")
    qs = sorted({r.q for r in cfg.rules if r.criterion == "qciw"} | {0.9})

    summary_rows = []
    for metric in METRICS:
        w = widths[metric]
        row = {"quantity": f"eciw_{metric}", "value": w.widths.mean(),
               "mc_se": w.widths.std(ddof=1) / np.sqrt(w.widths.size)}
        summary_rows.append(row)
        for q in qs:
            summary_rows.append({"quantity": f"qciw{int(round(q * 100))}_{metric}",
                                 "value": qciw(w.widths, q), "mc_se": float("nan")})
        summary_rows.append({"quantity": f"flag_rate_{metric}",
                             "value": w.flag_rate, "mc_se": float("nan")})
    summary_rows += [
        {"quantity": "nb_assurance", "value": voi.assurance, "mc_se": voi.mc_se_assurance},
        {"quantity": "evpi", "value": voi.evpi, "mc_se": float("nan")},
        {"quantity": "evsi", "value": voi.evsi, "mc_se": voi.mc_se_evsi},
        {"quantity": "r_evsi", "value": voi.r_evsi, "mc_se": float("nan")},
        {"quantity": "nb_flag_rate", "value": voi.flag_rate, "mc_se": float("nan")},
    ]

    _write_csv(out_dir / "summary.csv", prov, ["quantity", "value", "mc_se"],
               [(r["quantity"], r["value"], r["mc_se"]) for r in summary_rows])
    for metric in METRICS:
        _write_csv(out_dir / f"widths_{metric}.csv", prov, ["width"],
                   [(w,) for w in widths[metric].widths])
    _write_csv(out_dir / "voi_curve.csv", prov,
               ["n", "evsi", "r_evsi", "assurance", "mc_se",
                "mc_se_assurance", "evpi", "flag_rate"],
               [(r["n"], r["evsi"], r["r_evsi"], r["assurance"], r["mc_se"],
                 r["mc_se_assurance"], r["evpi"], r["flag_rate"]) for r in curve])
    _write_csv(out_dir / "calibration_bands.csv", prov,
               ["pi", "error_q025", "error_median", "error_q975"],
               zip(bands.grid, bands.lower, bands.median, bands.upper))

    lines = [f"Anticipated precision and VoI at n={n_main} "
             f"(S={run.s_draws}, mode={run.mode}, risks={cfg.family})", ""]
    lines.append(f"{'quantity':<24}{'value':>14}{'mc_se':>14}")
    for r in summary_rows:
        lines.append(f"{r['quantity']:<24}{_fmt(r['value']):>14}{_fmt(r['mc_se']):>14}")
    if voi.note:
        lines += ["", f"note: {voi.note}"]
    if bands.n_dropped:
        lines += ["", f"calibration bands: {bands.n_dropped} grid evaluations dropped"]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_samp(cfg: PlanConfig, out_dir: Path, overrides: dict) -> int:
    run = cfg.run
    if not cfg.rules:
        raise ConfigError("targets.rules", "samp needs at least one rule")
    root = np.random.default_rng(run.seed)
    boot_rng, plan_rng = root.spawn(2)
    prior, boot_info = _resolve_prior(cfg, boot_rng)

    result = plan(prior, list(cfg.rules), run.search, plan_rng,
                  family=cfg.family, mode=run.mode, slope_se=run.slope_se,
                  z=cfg.nb_threshold, baseline=cfg.nb_baseline,
                  s_diagnostics=run.s_draws, workers=run.workers)

    prov = _provenance(cfg, "samp", overrides)
    if boot_info:
        prov.append(f"bootstrap correlation: n_pilot={boot_info['n_pilot']} "
                    f"replicates={boot_info['replicates']}")

    comp_rows = []
    for comp in result.components:
        rule = comp.rule
        comp_rows.append((rule.name, rule.criterion, rule.metric or "nb",
                          rule.tau if rule.tau is not None else rule.level,
                          rule.q if rule.q is not None else "",
                          comp.n, comp.estimate, comp.mc_se, comp.confirm_rounds,
                          ";".join(comp.warnings)))
    _write_csv(out_dir / "components.csv", prov,
               ["rule", "criterion", "metric", "target", "q", "n",
                "estimate", "mc_se", "confirm_rounds", "warnings"], comp_rows)

    diag = result.diagnostics
    voi = diag["voi"]
    diag_rows = [("final_n", result.final_n, "")]
    for metric in METRICS:
        diag_rows.append((f"eciw_{metric}", diag[f"eciw_{metric}"], ""))
        diag_rows.append((f"qciw90_{metric}", diag[f"qciw90_{metric}"], ""))
        diag_rows.append((f"flag_rate_{metric}", diag[f"flag_rate_{metric}"], ""))
    diag_rows += [("nb_assurance", voi.assurance, voi.mc_se_assurance),
                  ("evpi", voi.evpi, ""), ("evsi", voi.evsi, voi.mc_se_evsi),
                  ("r_evsi", voi.r_evsi, "")]
    _write_csv(out_dir / "summary.csv", prov, ["quantity", "value", "mc_se"],
               diag_rows)

    for comp in result.components:
        name = comp.rule.name
        if comp.rule.criterion in ("eciw", "qciw"):
            header = ["iteration", "n", "width"]
            rows = [(int(t), int(n), w) for t, n, w in comp.trace]
        else:
            header = ["n", "value"]
            rows = [(int(n), v) for n, v in comp.trace]
        _write_csv(out_dir / f"trace_{name}.csv", prov, header, rows)

    lines = [f"Minimum sample sizes (seed={run.seed}, mode={run.mode}, "
             f"risks={cfg.family})", ""]
    lines.append(f"{'rule':<22}{'n':>8}{'estimate':>14}{'mc_se':>12}{'rounds':>8}")
    for comp in result.components:
        lines.append(f"{comp.rule.name:<22}{comp.n:>8}"
                     f"{_fmt(comp.estimate):>14}{_fmt(comp.mc_se):>12}"
                     f"{comp.confirm_rounds:>8}")
    lines += ["", f"final n = {result.final_n} (max over components)", "",
              "diagnostics at final n:"]
    for name, value, mc in diag_rows:
        lines.append(f"  {name:<22}{_fmt(value):>14}"
                     + (f"  (mc_se {_fmt(mc)})" if mc != "" else ""))
    warn = [w for comp in result.components for w in comp.warnings]
    if warn:
        lines += [""] + [f"warning: {w}" for w in warn]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_riley(cfg: PlanConfig, out_dir: Path, overrides: dict) -> int:
    points = resolve_points(cfg)
    location_kind = points.pop("location_kind")
    if "location" not in points:
        points["location"] = cfg.prior.location.mean()
    targets = {}
    for rule in cfg.rules:
        if rule.criterion in ("eciw", "qciw") and rule.metric not in targets:
            targets[rule.metric] = rule.tau
    if not targets:
        raise ConfigError("targets.rules", "riley needs at least one width rule")

    fns = conventional_width_fns(points, cfg.family, location_kind)
    ns = conventional_min_n(points, cfg.family, targets, location_kind)
    n_floor = cfg.run.search.n_min

    prov = _provenance(cfg, "riley", overrides)
    rows = []
    for metric, tau in targets.items():
        n = ns[metric]
        rows.append((metric, tau, n, fns[metric](n), fns[metric](n_floor)))
    _write_csv(out_dir / "riley.csv", prov,
               ["metric", "target_width", "n", "width_at_n",
                f"width_at_{n_floor}"], rows)

    lines = ["Conventional fixed-value sample sizes", "",
             f"{'metric':<10}{'target':>10}{'n':>8}{'width_at_n':>14}"
             f"{'width_at_' + str(n_floor):>16}"]
    for metric, tau, n, w_n, w_floor in rows:
        lines.append(f"{metric:<10}{_fmt(tau):>10}{n:>8}{_fmt(w_n):>14}"
                     f"{_fmt(w_floor):>16}")
    lines += ["", f"final n = {max(ns.values())} (max over components)"]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="valplan",
        description="Sample-size planning for external validation of risk "
                    "prediction models")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_txt in (("prec", "precision/VoI at a fixed sample size"),
                           ("samp", "solve for the minimum sample size"),
                           ("riley", "conventional fixed-value baseline")):
        p = sub.add_parser(name, help=help_txt)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--n", type=int, default=None, help="override run.n")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--s-draws", type=int, default=None,
                       help="override run.s_draws")
        p.add_argument("--out-dir", default="valplan_out",
                       help="output directory (default: valplan_out)")
        p.add_argument("--workers", type=int, default=None,
                       help="override run.workers (results are identical "
                            "for any worker count)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "n": args.n, "s_draws": args.s_draws,
                 "workers": args.workers}
    try:
        cfg = parse_config(args.config, overrides)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = {"prec": cmd_prec, "samp": cmd_samp, "riley": cmd_riley}[args.command]
        return handler(cfg, out_dir, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_VALIDATION
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_VALIDATION
    except InfeasibleTargetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INFEASIBLE
    except (NumericError, PriorInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
