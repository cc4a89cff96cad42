"""Evidence priors over model-performance parameters.

Current knowledge enters as four marginal distributions (prevalence,
c-statistic, calibration slope, and one calibration-location parameter)
plus a rank-correlation matrix.  Joint draws are produced by reordering
independent marginal samples against correlated normal scores, which
preserves each marginal exactly while inducing the target Spearman
correlation.  Each accepted draw is resolved into a full parameter set:
the risk distribution identified from (prevalence, c-statistic) and the
calibration intercept solved from the location parameter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit
from scipy.stats import spearmanr

from ._quadrature import hermite_for_sigma
from .calibration import (CalibrationLocationSpec, CalibrationModel,
                          implied_mean_pi, resolve_intercept)
from .errors import DomainError, NumericError, PriorInfeasibleError
from .riskdist import RiskDistribution, identify_arrays, latent_mean

MARGINAL_FAMILIES = ("beta", "normal", "lognormal", "logitnormal", "pointmass")

# Canonical parameter order used by correlation matrices everywhere.
PARAM_ORDER = ("prevalence", "cstat", "slope", "location")

_Z975 = 1.959963984540054


@dataclass(frozen=True)
class Marginal:
    """One marginal evidence distribution.

    ``a``/``b`` are the family's native parameters: Beta shapes, normal
    mean/SD, log-normal or logit-normal location/scale on the transformed
    scale, or the point-mass value (b unused).
    """

    family: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.family not in MARGINAL_FAMILIES:
            raise DomainError(f"unknown marginal family {self.family!r}")
        if self.family == "beta" and (self.a <= 0 or self.b <= 0):
            raise DomainError(f"Beta shapes must be positive, got ({self.a}, {self.b})")
        if self.family in ("normal", "lognormal", "logitnormal") and self.b <= 0:
            raise DomainError(f"{self.family} scale must be positive, got {self.b}")

    def mean(self) -> float:
        if self.family == "beta":
            return self.a / (self.a + self.b)
        if self.family == "normal":
            return self.a
        if self.family == "lognormal":
            return float(np.exp(self.a + 0.5 * self.b ** 2))
        if self.family == "logitnormal":
            return float(latent_mean("logitnormal", self.a, self.b))
        return self.a

    def sd(self) -> float:
        if self.family == "beta":
            n = self.a + self.b
            return float(np.sqrt(self.a * self.b / (n * n * (n + 1.0))))
        if self.family == "normal":
            return self.b
        if self.family == "lognormal":
            return float(self.mean() * np.sqrt(np.expm1(self.b ** 2)))
        if self.family == "logitnormal":
            z, w = hermite_for_sigma(self.b)
            p = expit(self.a + self.b * z)
            m = p @ w
            return float(np.sqrt(max((p * p) @ w - m * m, 0.0)))
        return 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "beta":
            return rng.beta(self.a, self.b, size)
        if self.family == "normal":
            return rng.normal(self.a, self.b, size)
        if self.family == "lognormal":
            return rng.lognormal(self.a, self.b, size)
        if self.family == "logitnormal":
            return expit(rng.normal(self.a, self.b, size))
        return np.full(size, self.a)


def pointmass(value: float) -> Marginal:
    return Marginal("pointmass", float(value))


def marginal_from_moments(family: str, mean: float, sd: float) -> Marginal:
    """Method-of-moments construction of a marginal from (mean, SD)."""
    if sd < 0:
        raise DomainError(f"SD must be non-negative, got {sd}")
    if sd == 0 or family == "pointmass":
        if family == "pointmass" and sd != 0:
            raise DomainError("a point mass cannot have positive SD")
        return pointmass(mean)
    if family == "beta":
        if not 0 < mean < 1:
            raise DomainError(f"Beta mean must lie in (0,1), got {mean}")
        if sd * sd >= mean * (1 - mean):
            raise DomainError(
                f"SD^2={sd*sd:.4g} >= mean(1-mean)={mean*(1-mean):.4g}: "
                "no Beta distribution has these moments")
        kappa = mean * (1 - mean) / (sd * sd) - 1.0
        return Marginal("beta", mean * kappa, (1 - mean) * kappa)
    if family == "normal":
        return Marginal("normal", mean, sd)
    if family == "lognormal":
        if mean <= 0:
            raise DomainError(f"log-normal mean must be positive, got {mean}")
        s2 = np.log1p((sd / mean) ** 2)
        return Marginal("lognormal", float(np.log(mean) - 0.5 * s2), float(np.sqrt(s2)))
    if family == "logitnormal":
        if not 0 < mean < 1:
            raise DomainError(f"logit-normal mean must lie in (0,1), got {mean}")
        if sd * sd >= mean * (1 - mean):
            raise DomainError("SD too large for a distribution on (0,1)")

        def sd_err(sigma):
            return Marginal("logitnormal", _logitnormal_mu(mean, sigma), sigma).sd() - sd

        sigma = _expanding_brentq(sd_err, 1e-4, 10.0)
        return Marginal("logitnormal", _logitnormal_mu(mean, sigma), sigma)
    raise DomainError(f"unknown marginal family {family!r}")


def marginal_from_upper95(family: str, mean: float, upper: float) -> Marginal:
    """Marginal matching a mean and the upper bound of its 95% interval."""
    if upper <= mean:
        raise DomainError(f"upper 95% bound {upper} must exceed the mean {mean}")
    if family == "normal":
        return Marginal("normal", mean, (upper - mean) / _Z975)
    if family == "lognormal":
        if mean <= 0:
            raise DomainError(f"log-normal mean must be positive, got {mean}")
        disc = _Z975 ** 2 - 2.0 * np.log(upper / mean)
        if disc <= 0:
            raise DomainError(
                f"upper bound {upper} is unattainably far above mean {mean} "
                "for a log-normal distribution")
        sigma = _Z975 - float(np.sqrt(disc))  # smaller root keeps the scale moderate
        return Marginal("lognormal", float(np.log(mean) - 0.5 * sigma ** 2), sigma)
    if family == "beta":
        if not (0 < mean < upper < 1):
            raise DomainError("Beta requires 0 < mean < upper < 1")

        def q_err(log_kappa):
            k = np.exp(log_kappa)
            from scipy.stats import beta as beta_rv
            return beta_rv.ppf(0.975, mean * k, (1 - mean) * k) - upper

        log_k = _expanding_brentq(q_err, np.log(1e-2), np.log(1e7), decreasing=True)
        k = float(np.exp(log_k))
        return Marginal("beta", mean * k, (1 - mean) * k)
    if family == "logitnormal":
        if not (0 < mean < upper < 1):
            raise DomainError("logit-normal requires 0 < mean < upper < 1")

        def q_err(sigma):
            mu = _logitnormal_mu(mean, sigma)
            return expit(mu + _Z975 * sigma) - upper

        sigma = _expanding_brentq(q_err, 1e-4, 10.0)
        return Marginal("logitnormal", _logitnormal_mu(mean, sigma), sigma)
    raise DomainError(f"cannot build {family!r} marginal from an upper bound")


def _logitnormal_mu(mean, sigma):
    from .riskdist import _solve_latent_mu
    return _solve_latent_mu("logitnormal", mean, sigma)


def _expanding_brentq(f, lo, hi, decreasing=False):
    sgn = -1.0 if decreasing else 1.0
    f_lo, f_hi = sgn * f(lo), sgn * f(hi)
    for _ in range(80):
        if f_lo <= 0:
            break
        hi, f_hi = lo, f_lo
        lo *= 0.5
        f_lo = sgn * f(lo)
    for _ in range(80):
        if f_hi >= 0:
            break
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi = sgn * f(hi)
    if f_lo > 0 or f_hi < 0:
        raise NumericError("bracket expansion failed")
    return float(optimize.brentq(f, lo, hi, xtol=1e-12))


@dataclass(frozen=True)
class EvidencePrior:
    """Joint prior: four marginals plus a Spearman correlation matrix.

    Marginal order in the correlation matrix follows PARAM_ORDER.
    """

    prevalence: Marginal
    cstat: Marginal
    slope: Marginal
    location: Marginal
    location_kind: str
    rank_correlation: np.ndarray = field(default=None)
    correlation_source: str = "independent"

    def __post_init__(self):
        if self.location_kind not in ("intercept", "oe_ratio", "mean_calibration"):
            raise DomainError(f"unknown location kind {self.location_kind!r}")
        r = self.rank_correlation
        if r is None:
            r = np.eye(4)
        r = np.asarray(r, dtype=float)
        if r.shape != (4, 4) or not np.allclose(r, r.T, atol=1e-12):
            raise DomainError("rank correlation must be a symmetric 4x4 matrix")
        if not np.allclose(np.diag(r), 1.0, atol=1e-12):
            raise DomainError("rank correlation must have a unit diagonal")
        if np.any(np.abs(r) > 1.0 + 1e-12):
            raise DomainError("rank correlations must lie in [-1, 1]")
        if np.linalg.eigvalsh(r).min() < -1e-8:
            raise DomainError("rank correlation matrix is not positive semi-definite")
        object.__setattr__(self, "rank_correlation", r)
        if self.correlation_source not in ("independent", "user", "bootstrap"):
            raise DomainError(f"unknown correlation source {self.correlation_source!r}")

    @property
    def marginals(self) -> dict[str, Marginal]:
        return {"prevalence": self.prevalence, "cstat": self.cstat,
                "slope": self.slope, "location": self.location}

    def is_independent(self) -> bool:
        return bool(np.allclose(self.rank_correlation, np.eye(4), atol=1e-12))

    def mean_point(self) -> dict[str, float]:
        return {name: m.mean() for name, m in self.marginals.items()}


@dataclass(frozen=True)
class ThetaDraw:
    """One joint realization of the performance parameters."""

    phi: float
    cstat: float
    model: CalibrationModel
    risk: RiskDistribution


class ThetaSample:
    """Columnar container of resolved parameter draws."""

    def __init__(self, family, phi, cstat, alpha, slope, p1, p2):
        self.family = family
        self.phi = np.asarray(phi, dtype=float)
        self.cstat = np.asarray(cstat, dtype=float)
        self.alpha = np.asarray(alpha, dtype=float)
        self.slope = np.asarray(slope, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)
        self.p2 = np.asarray(p2, dtype=float)

    def __len__(self):
        return self.phi.size

    def __getitem__(self, i) -> ThetaDraw:
        return ThetaDraw(
            float(self.phi[i]), float(self.cstat[i]),
            CalibrationModel(float(self.alpha[i]), float(self.slope[i])),
            RiskDistribution(self.family, float(self.p1[i]), float(self.p2[i])))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "ThetaSample":
        return ThetaSample(self.family, self.phi[idx], self.cstat[idx],
                           self.alpha[idx], self.slope[idx],
                           self.p1[idx], self.p2[idx])


def theta_from_point(point: dict, location_kind: str, family: str) -> ThetaDraw:
    """Resolve a single ThetaDraw from point values of the four parameters."""
    from .riskdist import RiskMoments, identify
    d = identify(RiskMoments(point["prevalence"], point["cstat"]), family)
    model = resolve_intercept(
        CalibrationLocationSpec(location_kind, point["location"]),
        point["slope"], d)
    return ThetaDraw(point["prevalence"], point["cstat"], model, d)


def iman_conover(columns: np.ndarray, spearman: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Reorder independent marginal columns to match a Spearman target.

    Normal scores with Pearson correlation 2*sin(pi*rho/6) have Spearman
    correlation rho; each marginal column is permuted to share the ranks of
    its score column, so the marginal empirical distributions are unchanged.
    """
    n, k = columns.shape
    pearson = 2.0 * np.sin(np.pi * np.asarray(spearman) / 6.0)
    np.fill_diagonal(pearson, 1.0)
    evals, evecs = np.linalg.eigh(pearson)
    pearson = (evecs * np.clip(evals, 1e-10, None)) @ evecs.T
    d = np.sqrt(np.diag(pearson))
    pearson = pearson / np.outer(d, d)

    z = rng.standard_normal((n, k))
    emp = np.corrcoef(z, rowvar=False)
    # Strip the sampling correlation of the scores before imposing the target.
    scores = z @ np.linalg.inv(np.linalg.cholesky(emp)).T @ np.linalg.cholesky(pearson).T
    out = np.empty_like(columns)
    for j in range(k):
        ranks = np.argsort(np.argsort(scores[:, j]))
        out[:, j] = np.sort(columns[:, j])[ranks]
    return out


def draw_theta(prior: EvidencePrior, s: int, family: str,
               rng: np.random.Generator, *, max_rejection: float = 0.5,
               warn_rejection: float = 0.01) -> ThetaSample:
    """Draw and resolve ``s`` joint parameter realizations.

    Draws violating the regularity conditions (prevalence outside (0,1),
    c-statistic outside (0.5,1), non-positive slope, implied E(pi) outside
    (0,1)) are rejected and redrawn so that relative density within the
    valid region is preserved.  A warning is issued when the rejection rate
    exceeds ``warn_rejection``; PriorInfeasibleError when it exceeds
    ``max_rejection``.
    """
    if s < 1:
        raise DomainError(f"number of draws must be >= 1, got {s}")
    margs = [prior.prevalence, prior.cstat, prior.slope, prior.location]
    independent = prior.is_independent()

    kept = []
    total = accepted = 0
    while accepted < s:
        batch = max(256, int(1.25 * (s - accepted)) + 16)
        cols = np.column_stack([m.sample(rng, batch) for m in margs])
        if not independent:
            cols = iman_conover(cols, prior.rank_correlation, rng)
        phi, c, slope, loc = cols.T
        ok = ((phi > 0) & (phi < 1) & (c > 0.5) & (c < 1) & (slope > 0))
        if prior.location_kind == "oe_ratio":
            with np.errstate(divide="ignore", invalid="ignore"):
                epi = np.where(loc > 0, phi / np.where(loc > 0, loc, 1.0), -1.0)
            ok &= (loc > 0) & (epi > 0) & (epi < 1)
        elif prior.location_kind == "mean_calibration":
            epi = phi - loc
            ok &= (epi > 0) & (epi < 1)
        total += batch
        accepted += int(ok.sum())
        kept.append(cols[ok])
        rate = 1.0 - accepted / total
        if total >= 512 and rate > max_rejection:
            raise PriorInfeasibleError(
                f"{rate:.0%} of prior draws violate the regularity conditions; "
                "the evidence prior is incompatible with a valid model")

    rate = max(0.0, 1.0 - accepted / total)
    if rate > warn_rejection:
        warnings.warn(f"rejected {rate:.2%} of prior draws "
                      "(regularity conditions)", stacklevel=2)

    cols = np.concatenate(kept)[:s]
    phi, c, slope, loc = cols.T

    ident_cache: dict = {}
    p1, p2 = identify_arrays(phi, c, family, ident_cache)

    alpha = np.empty(s)
    alpha_cache: dict = {}
    for i in range(s):
        if prior.location_kind == "intercept":
            alpha[i] = loc[i]
            continue
        key = (loc[i], slope[i], p1[i], p2[i])
        hit = alpha_cache.get(key)
        if hit is None:
            d = RiskDistribution(family, p1[i], p2[i])
            spec = CalibrationLocationSpec(prior.location_kind, float(loc[i]))
            hit = resolve_intercept(spec, float(slope[i]), d).intercept
            alpha_cache[key] = hit
        alpha[i] = hit

    return ThetaSample(family, phi, c, alpha, slope, p1, p2)


def default_pilot_size(prior: EvidencePrior) -> int:
    """Pilot size tying bootstrap noise to prior informativeness.

    Harmonic mean of the binomial-information effective sample sizes
    m(1-m)/var of the prevalence and c-statistic marginals.
    """
    sizes = []
    for m in (prior.prevalence, prior.cstat):
        mu, sd = m.mean(), m.sd()
        if sd <= 0:
            continue
        sizes.append(mu * (1 - mu) / (sd * sd))
    if not sizes:
        return 500
    return max(50, int(round(len(sizes) / sum(1.0 / e for e in sizes))))


def bootstrap_correlation(point_theta: ThetaDraw, n_pilot: int, b: int,
                          rng: np.random.Generator,
                          location_kind: str = "oe_ratio") -> np.ndarray:
    """Rank-correlation matrix recovered by parametric bootstrap.

    Simulates ``b`` pilot datasets of size ``n_pilot`` at the point
    parameters, records the four estimates per replicate, and returns the
    Spearman correlation of the estimates (projected to the nearest PSD
    matrix with a unit diagonal).  Replicates whose recalibration fit fails
    are dropped; more than 5% dropped is an error.
    """
    if b < 100:
        raise DomainError(f"bootstrap needs at least 100 replicates, got {b}")
    if n_pilot < 50:
        raise DomainError(f"pilot size must be >= 50, got {n_pilot}")
    from .precision import _estimate_rows, _simulate_rows

    est = np.empty((b, 4))
    ok = np.ones(b, dtype=bool)
    chunk = max(1, int(4_000_000 / max(n_pilot, 1)))
    theta_cols = ThetaSample(point_theta.risk.family,
                             *[np.full(1, v) for v in (
                                 point_theta.phi, point_theta.cstat,
                                 point_theta.model.intercept,
                                 point_theta.model.slope,
                                 point_theta.risk.param1,
                                 point_theta.risk.param2)])
    for start in range(0, b, chunk):
        rows = min(chunk, b - start)
        rep = theta_cols.subset(np.zeros(rows, dtype=int))
        p, y, x_pi = _simulate_rows(rep, n_pilot, rng)
        res = _estimate_rows(y, x_pi)
        pi = expit(x_pi)
        phi_hat = y.mean(axis=1)
        if location_kind == "oe_ratio":
            loc_hat = phi_hat / pi.mean(axis=1)
        elif location_kind == "mean_calibration":
            loc_hat = phi_hat - pi.mean(axis=1)
        else:
            loc_hat = res.alpha
        est[start:start + rows, 0] = phi_hat
        est[start:start + rows, 1] = res.c_hat
        est[start:start + rows, 2] = res.beta
        est[start:start + rows, 3] = loc_hat
        ok[start:start + rows] = ~res.flagged

    dropped = b - int(ok.sum())
    if dropped > 0.05 * b:
        raise NumericError(f"{dropped}/{b} bootstrap replicates failed estimation")
    rho = np.asarray(spearmanr(est[ok])[0], dtype=float)
    np.fill_diagonal(rho, 1.0)
    evals, evecs = np.linalg.eigh(rho)
    rho = (evecs * np.clip(evals, 1e-8, None)) @ evecs.T
    d = np.sqrt(np.diag(rho))
    rho = rho / np.outer(d, d)
    np.fill_diagonal(rho, 1.0)
    return rho
