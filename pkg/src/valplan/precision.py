"""Confidence-interval precision machinery.

Implements the closed-form SE equations for the c-statistic, log O/E ratio
and calibration slope, the frequentist minimum-N inversion, simulation of
future validation datasets with their estimators, and the Monte Carlo
engine producing pre-posterior draws of 95% CI widths for a given sample
size (either by simulating full datasets or by the faster two-step
normal-approximation route).

CI width conventions: c-statistic on the identity scale and O/E on the
log scale use 3.92 * SE; the frequentist O/E inversion reports the width
of the back-transformed interval, OE * (exp(1.96 SE) - exp(-1.96 SE)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit
from scipy.stats import rankdata

from ._quadrature import hermite_for_sigma, legendre01
from .errors import DomainError, InfeasibleTargetError, NumericError
from .evidence import EvidencePrior, ThetaDraw, ThetaSample, draw_theta
from .riskdist import RiskDistribution, RiskMoments, identify, latent_logit_p

METRICS = ("cstat", "oe", "slope")

WALD = 3.92  # fixed Wald multiplier: width = 3.92 * SE
_Z95 = WALD / 2.0

_NEWTON_MAX_ITER = 100
_NEWTON_TOL = 1e-10
_SLOPE_CAP = 35.0  # |slope| beyond this flags separation

_CHUNK_CELLS = 4_000_000  # max matrix cells per simulation chunk


# -- domain types ----------------------------------------------------------------


@dataclass(frozen=True)
class ValidationSample:
    """Predicted risks and binary outcomes from one (simulated) study."""

    pi: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if pi.shape != y.shape or pi.ndim != 1:
            raise DomainError("pi and y must be 1-D arrays of equal length")
        if np.any((pi <= 0) | (pi >= 1)):
            raise DomainError("predicted risks must lie strictly in (0,1)")
        if not np.isin(y, (0, 1)).all():
            raise DomainError("outcomes must be 0/1")
        if y.sum() == 0 or y.sum() == y.size:
            raise DomainError("sample must contain at least one event and one non-event")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class PrecisionDraws:
    """Pre-posterior draws of 95% CI widths for one metric."""

    metric: str
    widths: np.ndarray
    n_flagged: int = 0
    s_total: int = 0

    def __post_init__(self):
        w = np.asarray(self.widths, dtype=float)
        if w.size and (not np.all(np.isfinite(w)) or np.any(w < 0)):
            raise DomainError("widths must be finite and non-negative")
        object.__setattr__(self, "widths", w)

    @property
    def flag_rate(self) -> float:
        return self.n_flagged / self.s_total if self.s_total else 0.0


@dataclass(frozen=True)
class SampleSizeRule:
    """One sample-size criterion.

    criterion 'eciw'  : expected CI width of ``metric``       <= tau
    criterion 'qciw'  : q-th quantile of CI width of ``metric`` <= tau
    criterion 'nb_assurance': P(sample-declared strategy is truly best) >= level
    criterion 'revsi' : EVSI/EVPI at the net-benefit threshold >= level
    """

    criterion: str
    metric: str | None = None
    tau: float | None = None
    q: float | None = None
    level: float | None = None

    def __post_init__(self):
        if self.criterion in ("eciw", "qciw"):
            if self.metric not in METRICS:
                raise DomainError(f"width rule needs a metric in {METRICS}, "
                                  f"got {self.metric!r}")
            if self.tau is None or self.tau <= 0:
                raise DomainError(f"width target tau must be positive, got {self.tau}")
            if self.criterion == "qciw":
                q = 0.9 if self.q is None else self.q
                if not 0 < q < 1:
                    raise DomainError(f"quantile q must lie in (0,1), got {q}")
                object.__setattr__(self, "q", q)
        elif self.criterion in ("nb_assurance", "revsi"):
            if self.level is None or not 0 < self.level < 1:
                raise DomainError(f"probability level must lie in (0,1), got {self.level}")
        else:
            raise DomainError(f"unknown criterion {self.criterion!r}")

    @property
    def name(self) -> str:
        return f"{self.criterion}_{self.metric}" if self.metric else self.criterion


@dataclass(frozen=True)
class MetricEstimates:
    """Point estimates and plug-in CI widths from one validation sample."""

    c_hat: float
    oe_hat: float
    alpha_hat: float
    beta_hat: float
    width_cstat: float
    width_oe: float
    width_slope: float
    flagged: bool


# -- SE equations ----------------------------------------------------------------


def se_cstat(c, phi, n):
    """SE of the c-statistic estimate given true c, prevalence and size n."""
    c = np.asarray(c, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n = np.asarray(n, dtype=float)
    bracket = 1.0 + (n / 2.0 - 1.0) * (1.0 - c) / (2.0 - c) + (n / 2.0 - 1.0) * c / (1.0 + c)
    return np.sqrt(c * (1.0 - c) * bracket / (n * n * phi * (1.0 - phi)))


def se_log_oe(phi, n):
    """SE of log(O/E); depends on prevalence and size only."""
    phi = np.asarray(phi, dtype=float)
    return np.sqrt((1.0 - phi) / (np.asarray(n, dtype=float) * phi))


def information_terms(family, p1, p2, alpha, slope, alpha_eval=None, slope_eval=None):
    """Fisher information pieces of the logistic recalibration.

    Expectations run over calibrated risks p from the risk distribution,
    with predicted logit u = (logit p - alpha)/slope.  If ``alpha_eval`` /
    ``slope_eval`` are given, the Bernoulli variance is evaluated at the
    recalibrated probabilities expit(alpha_eval + slope_eval * u) instead
    of at p, which re-expresses the formula at estimated coefficients.
    Returns (I_a, I_b, I_ab), vectorized over distribution parameters.
    """
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    p2 = np.atleast_1d(np.asarray(p2, dtype=float))
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    slope = np.atleast_1d(np.asarray(slope, dtype=float))

    if family == "beta":
        from scipy.special import betaincinv
        v01, w = legendre01(256)
        L = logit(betaincinv(p1[:, None], p2[:, None], np.clip(v01, 1e-300, 1.0)))
    else:
        z, w = hermite_for_sigma(p2)
        x = p1[:, None] + p2[:, None] * z
        L = latent_logit_p(family, x)

    u = (L - alpha[:, None]) / slope[:, None]
    if alpha_eval is None:
        v = expit(L)
        v = v * (1.0 - v)
    else:
        a_e = np.atleast_1d(np.asarray(alpha_eval, dtype=float))
        b_e = np.atleast_1d(np.asarray(slope_eval, dtype=float))
        pt = expit(a_e[:, None] + b_e[:, None] * u)
        v = pt * (1.0 - pt)
    return v @ w, (u * u * v) @ w, (u * v) @ w


def se_slope(theta: ThetaDraw, n) -> float:
    """SE of the calibration slope from the population information matrix."""
    i_a, i_b, i_ab = information_terms(
        theta.risk.family, theta.risk.param1, theta.risk.param2,
        theta.model.intercept, theta.model.slope)
    det = float(i_a[0] * i_b[0] - i_ab[0] * i_ab[0])
    if det <= 0 or not np.isfinite(det):
        raise NumericError("singular information matrix: degenerate predicted-risk "
                           "distribution")
    return float(np.sqrt(float(i_a[0]) / (float(n) * det)))


def oe_interval_width(oe, phi, n):
    """95% CI width for O/E on the ratio scale around an assumed O/E."""
    s = se_log_oe(phi, n)
    return oe * (np.exp(_Z95 * s) - np.exp(-_Z95 * s))


# -- frequentist minimum N -------------------------------------------------------


def _smallest_n(width_fn, target, n_lo=4, n_max=10_000_000) -> int:
    hi = max(n_lo, 64)
    while width_fn(hi) > target:
        hi *= 2
        if hi > n_max:
            raise InfeasibleTargetError(
                f"width does not shrink below {target} for n <= {n_max}")
    lo = n_lo
    while lo < hi:
        mid = (lo + hi) // 2
        if width_fn(mid) <= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def riley_min_n(metric: str, assumed: ThetaDraw, target_width: float,
                oe: float | None = None) -> int:
    """Smallest n whose Wald 95% CI width meets the target at fixed truth.

    The O/E component measures width on the ratio scale around ``oe``
    (defaulting to the O/E implied by the assumed parameters).
    """
    if target_width <= 0:
        raise DomainError(f"target width must be positive, got {target_width}")
    if metric == "cstat":
        fn = lambda n: float(WALD * se_cstat(assumed.cstat, assumed.phi, n))
    elif metric == "oe":
        if oe is None:
            from .calibration import expected_pi
            epi = expected_pi(assumed.model.intercept, assumed.model.slope, assumed.risk)
            oe = assumed.phi / epi
        fn = lambda n: float(oe_interval_width(oe, assumed.phi, n))
    elif metric == "slope":
        fn = lambda n: WALD * se_slope(assumed, n)
    else:
        raise DomainError(f"unknown metric {metric!r}")
    return _smallest_n(fn, target_width)


def conventional_width_fns(points: dict, family: str, location_kind: str) -> dict:
    """Width-vs-n functions for the fixed-value (conventional) baseline.

    The distribution identified from (prevalence, c-statistic) plays the
    role of the predicted-risk distribution, the calibration line maps
    predicted to true risks on top of it, and the O/E component is
    evaluated at O/E = 1.
    """
    phi, c = points["prevalence"], points["cstat"]
    slope, loc = points["slope"], points["location"]
    d_pi = identify(RiskMoments(phi, c), family)

    # Mean true risk implied by the location parameter, with E(pi) = phi.
    if location_kind == "intercept":
        alpha = loc
    else:
        mean_p = loc * phi if location_kind == "oe_ratio" else phi + loc
        if not 0 < mean_p < 1:
            raise DomainError(f"{location_kind}={loc} implies mean true risk "
                              f"{mean_p:.4f} outside (0,1)")
        from scipy import optimize
        h = lambda a: float(d_pi.expect_logit_scale(
            lambda L: expit(a + slope * L))) - mean_p
        alpha = float(optimize.brentq(h, -30, 30, xtol=1e-12))

    # With identity true/eval roles swapped, information_terms integrates
    # over the predicted-risk logit directly.
    i_a, i_b, i_ab = information_terms(
        d_pi.family, d_pi.param1, d_pi.param2, 0.0, 1.0,
        alpha_eval=alpha, slope_eval=slope)
    det = float(i_a[0] * i_b[0] - i_ab[0] * i_ab[0])
    i_a0 = float(i_a[0])
    if det <= 0:
        raise NumericError("singular information matrix in the baseline slope "
                           "component")
    return {
        "cstat": lambda n: float(WALD * se_cstat(c, phi, n)),
        "oe": lambda n: float(oe_interval_width(1.0, phi, n)),
        "slope": lambda n: float(WALD * np.sqrt(i_a0 / (n * det))),
    }


def conventional_min_n(points: dict, family: str, targets: dict,
                       location_kind: str) -> dict:
    """Fixed-value baseline sample sizes; ``targets`` maps metric -> width."""
    fns = conventional_width_fns(points, family, location_kind)
    return {metric: _smallest_n(fns[metric], tau)
            for metric, tau in targets.items() if metric in fns}


# -- simulation of validation samples ---------------------------------------------


def simulate_sample(theta: ThetaDraw, n: int, rng: np.random.Generator) -> ValidationSample:
    """One future validation dataset: p from the risk distribution,
    Y ~ Bernoulli(p), pi the inverse calibration of p."""
    if n < 20:
        raise DomainError(f"simulated samples need n >= 20, got {n}")
    for _ in range(2):
        p = theta.risk.sample(n, rng)
        y = (rng.random(n) < p).astype(int)
        if 0 < y.sum() < n:
            return ValidationSample(theta.model.invert(p), y)
    raise NumericError(
        f"degenerate sample (all events or all non-events) twice at n={n}, "
        f"phi={theta.phi:.4f}")


def _simulate_rows(thetas: ThetaSample, n: int, rng: np.random.Generator):
    """Vectorized Table-style simulation; returns (p, y, logit_pi) matrices."""
    s = len(thetas)
    if thetas.family == "beta":
        p = rng.beta(thetas.p1[:, None], thetas.p2[:, None], size=(s, n))
        lp = logit(p)
    else:
        x = thetas.p1[:, None] + thetas.p2[:, None] * rng.standard_normal((s, n))
        lp = latent_logit_p(thetas.family, x)
        if thetas.family == "logitnormal":
            p = expit(x)
        else:
            from scipy.special import ndtr
            p = ndtr(x)
    y = rng.random((s, n)) < p
    x_pi = (lp - thetas.alpha[:, None]) / thetas.slope[:, None]
    return p, y, x_pi


@dataclass
class _RowEstimates:
    c_hat: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    se_beta: np.ndarray
    flagged: np.ndarray


def _estimate_rows(y, x_pi) -> _RowEstimates:
    """Row-wise estimators: rank concordance and logistic recalibration.

    Ties in predicted risk score half a concordance; the recalibration is a
    two-parameter Newton fit of y on logit(pi) with observed-information
    SEs.  Rows that fail to converge (separation) are flagged.
    """
    y = np.asarray(y, dtype=float)
    s, n = y.shape
    n1 = y.sum(axis=1)
    n0 = n - n1
    valid = (n1 > 0) & (n0 > 0)

    ranks = rankdata(x_pi, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c_hat = ((ranks * y).sum(axis=1) - n1 * (n1 + 1) / 2.0) / (n1 * n0)

    a = np.zeros(s)
    b = np.ones(s)
    se_b = np.full(s, np.nan)
    converged = np.zeros(s, dtype=bool)
    active = valid.copy()

    for _ in range(_NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x = x_pi[idx]
        yy = y[idx]
        eta = a[idx, None] + b[idx, None] * x
        p = expit(eta)
        w = p * (1.0 - p)
        ga = (yy - p).sum(axis=1)
        gb = ((yy - p) * x).sum(axis=1)
        saa = w.sum(axis=1)
        sab = (w * x).sum(axis=1)
        sbb = (w * x * x).sum(axis=1)
        det = saa * sbb - sab * sab
        bad = (det <= 1e-300) | ~np.isfinite(det)
        det = np.where(bad, 1.0, det)
        da = (sbb * ga - sab * gb) / det
        db = (saa * gb - sab * ga) / det
        step = np.maximum(np.abs(da), np.abs(db))
        with np.errstate(divide="ignore"):
            damp = np.where(step > 4.0, 4.0 / np.maximum(step, 1e-300), 1.0)  # guard overshoot
        a[idx] += damp * da
        b[idx] += damp * db
        se_b[idx] = np.sqrt(np.where(det > 0, saa / det, np.nan))
        done = (step < _NEWTON_TOL) & ~bad
        converged[idx[done]] = True
        diverged = bad | (np.abs(b[idx]) > _SLOPE_CAP)
        active[idx] = ~(done | diverged)

    flagged = ~valid | ~converged | ~np.isfinite(se_b)
    return _RowEstimates(c_hat, a, b, se_b, flagged)


def _widths_sample_based(thetas: ThetaSample, n: int, rng, slope_se: str):
    s = len(thetas)
    w_c = np.empty(s)
    w_oe = np.empty(s)
    w_b = np.empty(s)
    flag_c = np.zeros(s, dtype=bool)
    flag_oe = np.zeros(s, dtype=bool)
    flag_b = np.zeros(s, dtype=bool)

    chunk = max(1, int(_CHUNK_CELLS / max(n, 1)))
    for start in range(0, s, chunk):
        idx = np.arange(start, min(start + chunk, s))
        sub = thetas.subset(idx)
        _, y, x_pi = _simulate_rows(sub, n, rng)
        res = _estimate_rows(y, x_pi)
        phi_hat = y.mean(axis=1)
        ok = (phi_hat > 0) & (phi_hat < 1)

        with np.errstate(divide="ignore", invalid="ignore"):
            w_c[idx] = WALD * se_cstat(res.c_hat, phi_hat, n)
            w_oe[idx] = WALD * se_log_oe(phi_hat, n)
        flag_c[idx] = ~ok | ~np.isfinite(w_c[idx])
        flag_oe[idx] = ~ok | ~np.isfinite(w_oe[idx])

        if slope_se == "model":
            with np.errstate(invalid="ignore"):
                w_b[idx] = WALD * res.se_beta
        else:
            i_a, i_b, i_ab = information_terms(
                sub.family, sub.p1, sub.p2, sub.alpha, sub.slope,
                alpha_eval=res.alpha, slope_eval=res.beta)
            det = i_a * i_b - i_ab * i_ab
            with np.errstate(divide="ignore", invalid="ignore"):
                w_b[idx] = WALD * np.sqrt(i_a / (n * det))
        flag_b[idx] = res.flagged | ~np.isfinite(w_b[idx])
    return (w_c, flag_c), (w_oe, flag_oe), (w_b, flag_b)


def _widths_two_step(thetas: ThetaSample, n: int, rng):
    """Normal-approximation route: draw each estimate around its truth with
    the formula SE, then plug the draw back into the SE equation."""
    s = len(thetas)
    phi, c = thetas.phi, thetas.cstat

    se_c_true = se_cstat(c, phi, n)
    c_draw = rng.normal(c, se_c_true)
    with np.errstate(invalid="ignore"):
        w_c = WALD * se_cstat(c_draw, phi, n)
    flag_c = ~np.isfinite(w_c)

    phi_draw = rng.normal(phi, np.sqrt(phi * (1.0 - phi) / n))
    ok = (phi_draw > 0) & (phi_draw < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_oe = WALD * se_log_oe(np.where(ok, phi_draw, 0.5), n)
    flag_oe = ~ok

    i_a, i_b, i_ab = information_terms(
        thetas.family, thetas.p1, thetas.p2, thetas.alpha, thetas.slope)
    det = i_a * i_b - i_ab * i_ab
    se_b_true = np.sqrt(i_a / (n * det))
    b_draw = rng.normal(thetas.slope, se_b_true)
    i_a2, i_b2, i_ab2 = information_terms(
        thetas.family, thetas.p1, thetas.p2, thetas.alpha, thetas.slope,
        alpha_eval=thetas.alpha, slope_eval=b_draw)
    det2 = i_a2 * i_b2 - i_ab2 * i_ab2
    with np.errstate(divide="ignore", invalid="ignore"):
        w_b = WALD * np.sqrt(i_a2 / (n * det2))
    flag_b = ~np.isfinite(w_b) | (det2 <= 0)
    return (w_c, flag_c), (w_oe, flag_oe), (w_b, flag_b)


def preposterior_widths(prior: EvidencePrior | None, n: int, s: int, mode: str,
                        rng: np.random.Generator, *, family: str = "logitnormal",
                        slope_se: str = "model", thetas: ThetaSample | None = None,
                        max_flag_rate: float = 0.02) -> dict[str, PrecisionDraws]:
    """Pre-posterior CI-width draws for each metric at sample size ``n``.

    mode 'sample_based' simulates a full dataset per parameter draw and
    applies the sample estimators; mode 'two_step' draws each future
    estimate from a normal around its true value with the formula SE.
    Pass ``thetas`` to reuse one parameter sample across several calls
    (common random numbers across a grid of n).
    """
    if mode not in ("sample_based", "two_step"):
        raise DomainError(f"unknown mode {mode!r}")
    if slope_se not in ("model", "formula"):
        raise DomainError(f"unknown slope_se {slope_se!r}")
    if thetas is None:
        if prior is None:
            raise DomainError("either a prior or a ThetaSample is required")
        thetas = draw_theta(prior, s, family, rng)
    s = len(thetas)

    if mode == "sample_based":
        packs = _widths_sample_based(thetas, n, rng, slope_se)
    else:
        packs = _widths_two_step(thetas, n, rng)

    out = {}
    for metric, (w, flag) in zip(METRICS, packs):
        n_flag = int(flag.sum())
        if n_flag > max_flag_rate * s:
            raise NumericError(
                f"{n_flag}/{s} draws flagged for metric {metric} at n={n} "
                f"(limit {max_flag_rate:.0%})")
        out[metric] = PrecisionDraws(metric, w[~flag], n_flag, s)
    return out


def estimate_metrics(sample: ValidationSample, slope_se: str = "model",
                     theta: ThetaDraw | None = None) -> MetricEstimates:
    """Point estimates and plug-in 95% CI widths from one validation sample."""
    y = sample.y[None, :].astype(float)
    x_pi = logit(sample.pi)[None, :]
    res = _estimate_rows(y, x_pi)
    n = sample.n
    phi_hat = float(sample.y.mean())
    oe_hat = phi_hat / float(sample.pi.mean())
    w_c = float(WALD * se_cstat(res.c_hat[0], phi_hat, n))
    w_oe = float(WALD * se_log_oe(phi_hat, n))
    if slope_se == "model" or theta is None:
        w_b = float(WALD * res.se_beta[0])
    else:
        i_a, i_b, i_ab = information_terms(
            theta.risk.family, theta.risk.param1, theta.risk.param2,
            theta.model.intercept, theta.model.slope,
            alpha_eval=res.alpha[0], slope_eval=res.beta[0])
        w_b = float(WALD * np.sqrt(i_a / (n * (i_a * i_b - i_ab * i_ab))))
    return MetricEstimates(float(res.c_hat[0]), oe_hat, float(res.alpha[0]),
                           float(res.beta[0]), w_c, w_oe, w_b,
                           bool(res.flagged[0]))


# -- summaries --------------------------------------------------------------------


def qciw(widths: np.ndarray, q: float) -> float:
    """Empirical quantile, inverse-CDF convention: smallest w with F(w) >= q."""
    w = np.sort(np.asarray(widths, dtype=float))
    if w.size == 0:
        raise DomainError("empty width vector")
    k = int(np.ceil(q * w.size)) - 1
    return float(w[max(k, 0)])


def summarize(draws: PrecisionDraws, rule: SampleSizeRule) -> float:
    """ECIW or QCIW(q) of a width-draw vector under the given rule."""
    if draws.widths.size == 0:
        raise DomainError("no unflagged width draws to summarize")
    if rule.criterion == "eciw":
        return float(draws.widths.mean())
    if rule.criterion == "qciw":
        return qciw(draws.widths, rule.q)
    raise DomainError(f"summarize expects a width rule, got {rule.criterion!r}")


# -- calibration error bands -------------------------------------------------------


@dataclass(frozen=True)
class CalibrationBands:
    """Pointwise quantiles of smoothed-curve error around the true calibration."""

    grid: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    n_dropped: int


def _local_linear(x, y, grid, span):
    """Tricube-weighted local-linear fit of y on x, evaluated on grid."""
    n = x.size
    k = min(n, max(4, int(np.ceil(span * n))))
    d = np.abs(grid[:, None] - x[None, :])
    bw = np.partition(d, k - 1, axis=1)[:, k - 1]
    bw = np.where(bw <= 0, np.nan, bw)
    u = d / bw[:, None]
    w = np.clip(1.0 - u ** 3, 0.0, None) ** 3
    dx = x[None, :] - grid[:, None]
    s0 = w.sum(axis=1)
    s1 = (w * dx).sum(axis=1)
    s2 = (w * dx * dx).sum(axis=1)
    t0 = (w * y[None, :]).sum(axis=1)
    t1 = (w * dx * y[None, :]).sum(axis=1)
    det = s0 * s2 - s1 * s1
    with np.errstate(divide="ignore", invalid="ignore"):
        fit = (s2 * t0 - s1 * t1) / det
    fit[(det <= 1e-12) | ~np.isfinite(det)] = np.nan
    return fit


def calibration_error_bands(prior: EvidencePrior | None, n: int, s: int,
                            grid: np.ndarray | None, rng: np.random.Generator, *,
                            family: str = "logitnormal", span: float = 0.75,
                            thetas: ThetaSample | None = None) -> CalibrationBands:
    """Quantiles (2.5/50/97.5%) of smoothed calibration-curve error.

    Per parameter draw, a dataset of size ``n`` is simulated, a local-linear
    smoother of outcome on predicted risk is evaluated on the grid, and the
    true calibration curve of that draw is subtracted.  The default grid is
    the 1%..99% quantiles of a pooled pilot sample of predicted risks.
    """
    if thetas is None:
        thetas = draw_theta(prior, s, family, rng)
    s = len(thetas)

    if grid is None:
        pilot = thetas.subset(np.arange(min(s, 50)))
        _, _, x_pi = _simulate_rows(pilot, min(n, 2000), rng)
        pool = expit(x_pi.ravel())
        grid = np.quantile(pool, np.arange(1, 100) / 100.0)
    grid = np.asarray(grid, dtype=float)
    lg = logit(grid)

    errors = np.empty((s, grid.size))
    chunk = max(1, int(_CHUNK_CELLS / max(n, 1)))
    for start in range(0, s, chunk):
        idx = np.arange(start, min(start + chunk, s))
        sub = thetas.subset(idx)
        _, y, x_pi = _simulate_rows(sub, n, rng)
        pi = expit(x_pi)
        for j, row in enumerate(idx):
            fit = _local_linear(pi[j], y[j].astype(float), grid, span)
            true_curve = expit(sub.alpha[j] + sub.slope[j] * lg)
            errors[row] = fit - true_curve

    n_dropped = int(np.isnan(errors).sum())
    import warnings as _warnings
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", RuntimeWarning)
        lower, median, upper = np.nanquantile(errors, [0.025, 0.5, 0.975], axis=0)
    return CalibrationBands(grid, lower, median, upper, n_dropped)
