"""Minimum sample-size search.

Width rules (expected or quantile CI width) are solved by Robbins-Monro
stochastic approximation on log N, one parameter draw and one width
realization per iteration, followed by a mandatory fresh-draw confirmation
at the candidate N.  Assurance and relative-EVSI rules exploit the
vectorized VoI engine: a doubling bracket plus integer bisection with
common random numbers, then the same confirmation.  A plan solves each
rule independently and reports the maximum component as the final N.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import DomainError, InfeasibleTargetError
from .evidence import EvidencePrior, ThetaSample, draw_theta, theta_from_point
from .precision import (METRICS, WALD, SampleSizeRule, _estimate_rows,
                        _simulate_rows, information_terms, preposterior_widths,
                        qciw, riley_min_n, se_cstat, se_log_oe)
from .voi import _voi_from_components, true_operating_point


@dataclass(frozen=True)
class SearchConfig:
    """Hyperparameters of the stochastic sample-size search."""

    n_min: int = 20
    n_max: int = 10_000_000
    rm_step_scale: float = 1.0
    rm_iterations: int = 4000
    confirm_draws: int = 5000
    confirm_alpha: float = 0.05

    def __post_init__(self):
        if self.n_min < 20:
            raise DomainError(f"n_min must be >= 20, got {self.n_min}")
        if self.n_max > 10_000_000 or self.n_max <= self.n_min:
            raise DomainError(f"n_max must lie in (n_min, 1e7], got {self.n_max}")
        if self.rm_iterations < 500:
            raise DomainError(f"rm_iterations must be >= 500, got {self.rm_iterations}")
        if self.confirm_draws < 100:
            raise DomainError(f"confirm_draws must be >= 100, got {self.confirm_draws}")
        if not 0 < self.confirm_alpha < 0.5:
            raise DomainError(f"confirm_alpha must lie in (0, 0.5), got {self.confirm_alpha}")


@dataclass(frozen=True)
class ComponentResult:
    """Solved sample size for one rule, with its confirmation estimate."""

    rule: SampleSizeRule
    n: int
    estimate: float
    mc_se: float
    confirm_rounds: int
    trace: np.ndarray = field(repr=False)
    warnings: tuple = ()


@dataclass(frozen=True)
class PlanResult:
    components: tuple
    final_n: int
    diagnostics: dict

    def component(self, name: str) -> ComponentResult:
        for comp in self.components:
            if comp.rule.name == name:
                return comp
        raise KeyError(name)


def _one_width(thetas_row: ThetaSample, n: int, metric: str, mode: str,
               slope_se: str, rng: np.random.Generator) -> float:
    """A single pre-posterior width draw; NaN when the draw is flagged."""
    if mode == "two_step":
        from .precision import _widths_two_step
        packs = _widths_two_step(thetas_row, n, rng)
        w, flag = packs[METRICS.index(metric)]
        return float(w[0]) if not flag[0] else float("nan")

    _, y, x_pi = _simulate_rows(thetas_row, n, rng)
    phi_hat = float(y.mean())
    if metric == "oe":
        if not 0 < phi_hat < 1:
            return float("nan")
        return float(WALD * se_log_oe(phi_hat, n))
    res = _estimate_rows(y, x_pi)
    if metric == "cstat":
        if not 0 < phi_hat < 1 or bool((y.sum() in (0, y.size))):
            return float("nan")
        return float(WALD * se_cstat(res.c_hat[0], phi_hat, n))
    if res.flagged[0]:
        return float("nan")
    if slope_se == "model":
        return float(WALD * res.se_beta[0])
    i_a, i_b, i_ab = information_terms(
        thetas_row.family, thetas_row.p1, thetas_row.p2,
        thetas_row.alpha, thetas_row.slope,
        alpha_eval=res.alpha, slope_eval=res.beta)
    det = float(i_a[0] * i_b[0] - i_ab[0] * i_ab[0])
    if det <= 0:
        return float("nan")
    return float(WALD * np.sqrt(i_a[0] / (n * det)))


def _warm_start(prior: EvidencePrior, rule: SampleSizeRule, cfg: SearchConfig,
                family: str) -> int:
    """Frequentist solve at the prior means, used to initialize the search."""
    try:
        point = prior.mean_point()
        theta0 = theta_from_point(point, prior.location_kind, family)
        if rule.metric == "oe":
            # Match the engine's log-scale width convention.
            from .precision import _smallest_n
            n0 = _smallest_n(lambda n: float(WALD * se_log_oe(theta0.phi, n)),
                             rule.tau)
        else:
            n0 = riley_min_n(rule.metric, theta0, rule.tau)
    except Exception:
        n0 = int(np.sqrt(cfg.n_min * cfg.n_max))
    return int(np.clip(n0, cfg.n_min, cfg.n_max))


def solve_width_rule(prior: EvidencePrior, rule: SampleSizeRule, cfg: SearchConfig,
                     rng: np.random.Generator, *, family: str = "logitnormal",
                     mode: str = "sample_based",
                     slope_se: str = "model") -> ComponentResult:
    """Smallest N whose expected (or q-quantile) CI width meets the target.

    Robbins-Monro on log N with gain rm_step_scale/t: the ECIW update steps
    by the width residual (w - tau), the QCIW update by the exceedance
    indicator against (1 - q).  The averaged tail iterate is rounded up and
    then confirmed with fresh draws; a failed confirmation raises N by 5%
    and repeats.
    """
    if rule.criterion not in ("eciw", "qciw"):
        raise DomainError(f"solve_width_rule expects a width rule, got {rule.criterion!r}")

    pool = draw_theta(prior, cfg.rm_iterations, family, rng)
    x = float(np.log(_warm_start(prior, rule, cfg, family)))
    lo, hi = np.log(cfg.n_min), np.log(cfg.n_max)
    trace = np.empty((cfg.rm_iterations, 3))
    x_hist = np.empty(cfg.rm_iterations)

    for t in range(1, cfg.rm_iterations + 1):
        n_t = int(np.clip(round(np.exp(x)), cfg.n_min, cfg.n_max))
        w = _one_width(pool.subset([t - 1]), n_t, rule.metric, mode, slope_se, rng)
        if np.isfinite(w):
            a_t = cfg.rm_step_scale / t
            if rule.criterion == "eciw":
                x += a_t * (w - rule.tau)
            else:
                x += a_t * (float(w > rule.tau) - (1.0 - rule.q))
            x = float(np.clip(x, lo, hi))
        trace[t - 1] = (t, n_t, w)
        x_hist[t - 1] = x

    tail = x_hist[cfg.rm_iterations // 2:]
    n_rm = int(np.ceil(np.exp(tail.mean())))

    warnings_out = []
    quarter = np.exp(x_hist[3 * cfg.rm_iterations // 4:])
    if (quarter.max() - quarter.min()) / max(quarter[-1], 1.0) > 0.5:
        warnings_out.append(
            "Robbins-Monro trace oscillated by more than 50% of its final "
            "value over the last quarter of iterations")

    n_c = int(np.clip(n_rm, cfg.n_min, cfg.n_max))
    z_conf = float(ndtri(1.0 - cfg.confirm_alpha))
    rounds = 0
    while True:
        rounds += 1
        draws = preposterior_widths(prior, n_c, cfg.confirm_draws, mode, rng,
                                    family=family, slope_se=slope_se)[rule.metric]
        w = draws.widths
        k = w.size
        if rule.criterion == "eciw":
            est = float(w.mean())
            mc_se = float(w.std(ddof=1) / np.sqrt(k))
            violated = est - rule.tau > z_conf * mc_se
        else:
            p_hat = float((w <= rule.tau).mean())
            est = qciw(w, rule.q)
            half = z_conf * np.sqrt(rule.q * (1 - rule.q) / k)
            lo_i = int(np.clip(np.ceil((rule.q - half) * k) - 1, 0, k - 1))
            hi_i = int(np.clip(np.ceil((rule.q + half) * k) - 1, 0, k - 1))
            ws = np.sort(w)
            mc_se = float((ws[hi_i] - ws[lo_i]) / (2 * z_conf))
            violated = p_hat < rule.q - z_conf * np.sqrt(rule.q * (1 - rule.q) / k)
        if not violated:
            break
        n_next = int(np.ceil(1.05 * n_c))
        if n_next > cfg.n_max:
            raise InfeasibleTargetError(
                f"rule {rule.name}: target {rule.tau} not satisfiable within "
                f"n_max={cfg.n_max} (estimate {est:.4f} at n={n_c})")
        n_c = n_next

    return ComponentResult(rule, n_c, est, mc_se, rounds, trace,
                           tuple(warnings_out))


def solve_assurance_rule(prior: EvidencePrior, z: float, level: float,
                         cfg: SearchConfig, rng: np.random.Generator, *,
                         family: str = "logitnormal",
                         baseline: str | int = "best_current",
                         criterion: str = "nb_assurance") -> ComponentResult:
    """Smallest N reaching an assurance (or relative-EVSI) level.

    The response is monotone in N, so a doubling bracket followed by integer
    bisection suffices; all evaluations share one parameter sample and one
    uniform matrix (common random numbers), and the result is confirmed with
    fresh draws as in the width solver.
    """
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    if criterion not in ("nb_assurance", "revsi"):
        raise DomainError(f"unknown VoI criterion {criterion!r}")

    thetas = draw_theta(prior, cfg.confirm_draws, family, rng)
    se, sp = true_operating_point(thetas, z)
    u = rng.random((len(thetas), 3))
    trace = []

    def value(n):
        res = _voi_from_components(thetas, se, sp, z, n, baseline, u=u)
        if criterion == "nb_assurance":
            v, mc = res.assurance, res.mc_se_assurance
        else:
            v = res.r_evsi
            mc = res.mc_se_evsi / res.evpi if res.evpi > 0 else 0.0
        trace.append((n, v))
        return v, mc

    n = cfg.n_min
    v, mc = value(n)
    if v >= level - mc:
        n_hi = n
    else:
        while True:
            if n >= cfg.n_max:
                raise InfeasibleTargetError(
                    f"{criterion} level {level} unreachable below n_max={cfg.n_max}; "
                    f"estimated asymptote {v:.4f} (MC SE {mc:.4f})")
            n = min(2 * n, cfg.n_max)
            v, mc = value(n)
            if v >= level - mc:
                break
        lo, n_hi = n // 2, n
        while lo + 1 < n_hi:
            mid = (lo + n_hi) // 2
            v, mc = value(mid)
            if v >= level - mc:
                n_hi = mid
            else:
                lo = mid

    z_conf = float(ndtri(1.0 - cfg.confirm_alpha))
    n_c = n_hi
    rounds = 0
    while True:
        rounds += 1
        fresh = draw_theta(prior, cfg.confirm_draws, family, rng)
        se_f, sp_f = true_operating_point(fresh, z)
        res = _voi_from_components(fresh, se_f, sp_f, z, n_c, baseline, rng=rng)
        if criterion == "nb_assurance":
            est, mc_se = res.assurance, res.mc_se_assurance
            slack = z_conf * np.sqrt(level * (1 - level) / cfg.confirm_draws)
        else:
            est = res.r_evsi
            mc_se = res.mc_se_evsi / res.evpi if res.evpi > 0 else 0.0
            slack = z_conf * mc_se
        if est >= level - slack:
            break
        n_next = int(np.ceil(1.05 * n_c))
        if n_next > cfg.n_max:
            raise InfeasibleTargetError(
                f"{criterion} level {level} not confirmed within n_max={cfg.n_max} "
                f"(estimate {est:.4f} at n={n_c})")
        n_c = n_next

    return ComponentResult(
        SampleSizeRule(criterion, level=level), n_c, est, mc_se, rounds,
        np.asarray(trace, dtype=float))


def _solve_component(args):
    (prior, rule, cfg, child, family, mode, slope_se, z, baseline) = args
    if rule.criterion in ("eciw", "qciw"):
        return solve_width_rule(prior, rule, cfg, child, family=family,
                                mode=mode, slope_se=slope_se)
    return solve_assurance_rule(prior, z, rule.level, cfg, child, family=family,
                                baseline=baseline, criterion=rule.criterion)


def plan(prior: EvidencePrior, rules: list, cfg: SearchConfig,
         rng: np.random.Generator, *, family: str = "logitnormal",
         mode: str = "sample_based", slope_se: str = "model",
         z: float = 0.2, baseline: str | int = "best_current",
         s_diagnostics: int = 5000, workers: int = 1) -> PlanResult:
    """Solve every rule independently and report the maximum component N.

    Components use independent substreams spawned from ``rng`` in rule
    order, so results do not depend on the worker count.  At the final N the
    full diagnostic set is evaluated: ECIW and QCIW(0.9) for each metric,
    plus assurance, EVPI, EVSI and relative EVSI at the threshold.
    """
    if not rules:
        raise DomainError("at least one rule is required")
    streams = rng.spawn(len(rules) + 1)
    jobs = [(prior, rule, cfg, streams[i], family, mode, slope_se, z, baseline)
            for i, rule in enumerate(rules)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            components = tuple(pool.map(_solve_component, jobs))
    else:
        components = tuple(_solve_component(j) for j in jobs)

    final_n = max(c.n for c in components)

    diag_rng = streams[-1]
    thetas = draw_theta(prior, s_diagnostics, family, diag_rng)
    widths = preposterior_widths(None, final_n, s_diagnostics, mode, diag_rng,
                                 family=family, slope_se=slope_se, thetas=thetas)
    se, sp = true_operating_point(thetas, z)
    voi = _voi_from_components(thetas, se, sp, z, final_n, baseline, rng=diag_rng)
    diagnostics = {"n": final_n, "voi": voi}
    for metric in METRICS:
        w = widths[metric]
        diagnostics[f"eciw_{metric}"] = float(w.widths.mean())
        diagnostics[f"qciw90_{metric}"] = qciw(w.widths, 0.9)
        diagnostics[f"flag_rate_{metric}"] = w.flag_rate
    return PlanResult(components, final_n, diagnostics)
