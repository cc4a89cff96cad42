"""Parametric distributions of calibrated risks on (0, 1).

A risk distribution describes the population of true (calibrated) event
probabilities.  Three quantile-identifiable families are supported: Beta,
logit-normal, and probit-normal.  The module provides the moments used for
study planning (mean, concordance probability, partial expectations,
sensitivity/specificity at a threshold) and the inverse map that recovers
distribution parameters from a target (mean, c-statistic) pair.

The c-statistic of a continuous risk distribution satisfies

    c * m * (1 - m) = E[p * F(p)] - m^2 / 2,

where m is the mean and F the CDF.  This follows from integrating the
concordance double integral by parts and lets every family use a single
smooth one-dimensional quadrature with its exact CDF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import betainc, betaincinv, expit, log_ndtr, logit, ndtr, ndtri
from scipy.stats import beta as _beta_rv

from ._quadrature import hermite_for_sigma, legendre01
from .errors import DomainError, IdentificationError, NumericError

FAMILIES = ("beta", "logitnormal", "probitnormal")

_GL_PARTIAL = 256  # nodes for quantile-substituted truncated integrals
_GL_BETA = 128     # per-panel nodes for Beta expectations (4 panels)


def _check_family(family: str) -> str:
    fam = family.lower()
    if fam not in FAMILIES:
        raise DomainError(f"unknown risk distribution family {family!r}; "
                          f"expected one of {FAMILIES}")
    return fam


@dataclass(frozen=True)
class RiskMoments:
    """Target moments for identification: mean (= prevalence) and c-statistic."""

    mean: float
    cstat: float

    def __post_init__(self):
        if not 0.0 < self.mean < 1.0:
            raise DomainError(f"mean must lie in (0,1), got {self.mean}")
        if not 0.5 < self.cstat < 1.0:
            raise DomainError(f"c-statistic must lie in (0.5,1), got {self.cstat}")


@dataclass(frozen=True)
class RiskDistribution:
    """Distribution of calibrated risks.

    Parameters
    ----------
    family : {"beta", "logitnormal", "probitnormal"}
    param1 : Beta shape ``a`` or latent-normal mean.
    param2 : Beta shape ``b`` or latent-normal SD; must be positive.
    """

    family: str
    param1: float
    param2: float

    def __post_init__(self):
        object.__setattr__(self, "family", _check_family(self.family))
        if not np.isfinite(self.param1) or not np.isfinite(self.param2):
            raise DomainError("distribution parameters must be finite")
        if self.param2 <= 0.0:
            raise DomainError(f"param2 must be positive, got {self.param2}")
        if self.family == "beta" and self.param1 <= 0.0:
            raise DomainError(f"Beta shape a must be positive, got {self.param1}")

    # -- density / distribution ------------------------------------------------

    def pdf(self, p):
        p = np.asarray(p, dtype=float)
        if self.family == "beta":
            return _beta_rv.pdf(p, self.param1, self.param2)
        mu, sig = self.param1, self.param2
        if self.family == "logitnormal":
            x = logit(p)
            jac = 1.0 / (p * (1.0 - p))
        else:
            x = ndtri(p)
            jac = np.sqrt(2.0 * np.pi) * np.exp(0.5 * x * x)
        z = (x - mu) / sig
        return np.exp(-0.5 * z * z) / (sig * np.sqrt(2.0 * np.pi)) * jac

    def cdf(self, p):
        p = np.asarray(p, dtype=float)
        if self.family == "beta":
            return betainc(self.param1, self.param2, p)
        x = logit(p) if self.family == "logitnormal" else ndtri(p)
        return ndtr((x - self.param1) / self.param2)

    def mean(self) -> float:
        """E(p); equals the outcome prevalence for calibrated risks."""
        if self.family == "beta":
            return self.param1 / (self.param1 + self.param2)
        if self.family == "probitnormal":
            return float(ndtr(self.param1 / np.hypot(1.0, self.param2)))
        m = float(latent_mean("logitnormal", self.param1, self.param2))
        if not 0.0 < m < 1.0:
            raise NumericError(f"mean quadrature returned {m} for {self}")
        return m

    def cstat(self) -> float:
        """P(p2 > p1 | Y2=1, Y1=0) under Y|p ~ Bernoulli(p)."""
        if self.family == "beta":
            return float(_beta_cstat(self.param1, self.param2))
        return float(latent_cstat(self.family, self.param1, self.param2))

    def partial_mean(self, t) -> float:
        """Lower partial expectation: integral of u*f(u) over (0, t]."""
        t = float(t)
        if not 0.0 < t < 1.0:
            raise DomainError(f"threshold must lie in (0,1), got {t}")
        if self.family == "beta":
            a, b = self.param1, self.param2
            return self.mean() * float(betainc(a + 1.0, b, t))
        x_t = logit(t) if self.family == "logitnormal" else ndtri(t)
        return float(latent_partial_mean(self.family, self.param1, self.param2, x_t))

    def sens_spec_at(self, p_threshold) -> tuple[float, float]:
        """True (sensitivity, specificity) when flagging risks above ``p_threshold``.

        se = [integral of p f(p) above t] / mean,
        sp = [integral of (1-p) f(p) below t] / (1 - mean).
        """
        t = float(p_threshold)
        if not 0.0 < t < 1.0:
            raise DomainError(f"threshold must lie in (0,1), got {t}")
        m = self.mean()
        pm = self.partial_mean(t)
        se = (m - pm) / m
        sp = (float(self.cdf(t)) - pm) / (1.0 - m)
        return float(np.clip(se, 0.0, 1.0)), float(np.clip(sp, 0.0, 1.0))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws of calibrated risks."""
        if n < 1:
            raise DomainError(f"sample size must be >= 1, got {n}")
        if self.family == "beta":
            return rng.beta(self.param1, self.param2, size=n)
        x = rng.normal(self.param1, self.param2, size=n)
        return expit(x) if self.family == "logitnormal" else ndtr(x)

    def expect_logit_scale(self, fn) -> float:
        """E[fn(logit p)] by fixed quadrature; fn must be vectorized."""
        return float(expect_logit_scale(self.family, self.param1, self.param2, fn))


# -- vectorized kernels (columnar parameters) ----------------------------------


def _link(family):
    return expit if family == "logitnormal" else ndtr


def latent_logit_p(family: str, x):
    """logit(p) for latent value x, computed stably."""
    if family == "logitnormal":
        return x
    # logit(Phi(x)) = log Phi(x) - log Phi(-x)
    return log_ndtr(x) - log_ndtr(-x)


def latent_mean(family: str, mu, sigma):
    """E(p) for latent-normal risks; vectorized over mu/sigma."""
    if family == "probitnormal":
        return ndtr(np.asarray(mu) / np.hypot(1.0, np.asarray(sigma)))
    z, w = hermite_for_sigma(sigma)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return expit(mu[..., None] + sigma[..., None] * z) @ w


def latent_cstat(family: str, mu, sigma):
    """c-statistic for latent-normal risks; vectorized over mu/sigma."""
    s = _link(family)
    z, w = hermite_for_sigma(sigma)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    p = s(mu[..., None] + sigma[..., None] * z)
    m = p @ w
    epf = (p * ndtr(z)) @ w  # F(X) standardizes to Phi at the Hermite nodes
    return (epf - 0.5 * m * m) / (m * (1.0 - m))


def latent_partial_mean(family: str, mu, sigma, x_threshold):
    """Integral of s(x) dPhi((x-mu)/sigma) below x_threshold, vectorized.

    Quantile substitution x = mu + sigma * ndtri(v) maps the truncated
    integral onto (0, F(t)), where Gauss-Legendre applies.
    """
    s = _link(family)
    v01, w01 = legendre01(_GL_PARTIAL)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    x_t = np.asarray(x_threshold, dtype=float)
    vmax = ndtr((x_t - mu) / sigma)
    v = vmax[..., None] * v01
    x = mu[..., None] + sigma[..., None] * ndtri(np.clip(v, 1e-300, 1.0))
    return vmax * (s(x) @ w01)


def _beta_cstat(a, b):
    """c-statistic of Beta risks via E_{Beta(a+1,b)}[I_p(a,b)] on 4 GL panels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    v01, w01 = legendre01(_GL_BETA)
    edges = np.array([0.0, 0.05, 0.5, 0.95, 1.0])
    acc = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v = lo + (hi - lo) * v01
        p = betaincinv(a[..., None] + 1.0, b[..., None], v)
        acc = acc + (hi - lo) * (betainc(a[..., None], b[..., None], p) @ w01)
    m = a / (a + b)
    epf = m * acc
    return (epf - 0.5 * m * m) / (m * (1.0 - m))


def expect_logit_scale(family: str, p1, p2, fn):
    """E[fn(logit p)] vectorized over distribution parameters."""
    if family == "beta":
        v01, w01 = legendre01(_GL_PARTIAL)
        a = np.asarray(p1, dtype=float)[..., None]
        b = np.asarray(p2, dtype=float)[..., None]
        p = betaincinv(a, b, np.clip(v01, 1e-300, 1.0))
        return fn(logit(p)) @ w01
    z, w = hermite_for_sigma(p2)
    mu = np.asarray(p1, dtype=float)
    sigma = np.asarray(p2, dtype=float)
    x = mu[..., None] + sigma[..., None] * z
    return fn(latent_logit_p(family, x)) @ w


# -- identification ------------------------------------------------------------

_IDENT_TOL = 1e-6
_SPREAD_BRACKET = (1e-4, 10.0)
_SPREAD_FLOOR = 1e-9
_SPREAD_CEIL = 2e3


def _solve_latent_mu(family: str, target_mean: float, sigma: float) -> float:
    """Location matching the mean at fixed sigma (mean is increasing in mu)."""
    if family == "probitnormal":
        return float(ndtri(target_mean) * np.hypot(1.0, sigma))

    def f(mu):
        return float(latent_mean(family, mu, sigma)) - target_mean

    anchor = float(logit(target_mean))
    lo, hi = anchor - 1.0 - sigma, anchor + 1.0 + sigma
    for _ in range(200):
        if f(lo) <= 0.0:
            break
        lo -= (hi - lo)
    for _ in range(200):
        if f(hi) >= 0.0:
            break
        hi += (hi - lo)
    return float(optimize.brentq(f, lo, hi, xtol=1e-12, rtol=8.9e-16))


def identify(target: RiskMoments, family: str) -> RiskDistribution:
    """Recover distribution parameters from (mean, c-statistic).

    Nested root-finding: the location (or Beta mean) is matched exactly for
    each trial spread, and the spread is solved so the c-statistic matches.
    The c-statistic is strictly increasing in the spread at fixed mean, so
    a bracketing solve on the spread is guaranteed once the bracket covers
    the target; the initial bracket expands geometrically as needed.

    Raises
    ------
    DomainError
        If the target moments are outside (0,1) x (0.5,1).
    IdentificationError
        If no spread in the expanded bracket attains the target c-statistic.
    """
    fam = _check_family(family)
    m, c = target.mean, target.cstat

    if fam == "beta":
        # (mean, concentration) parameterization decouples the two targets:
        # a = m/s, b = (1-m)/s with spread s = 1/concentration.
        def cerr(log_s):
            s = np.exp(log_s)
            return float(_beta_cstat(m / s, (1.0 - m) / s)) - c

        make = lambda s: RiskDistribution("beta", m / s, (1.0 - m) / s)
    else:
        def cerr(log_s):
            s = np.exp(log_s)
            mu = _solve_latent_mu(fam, m, s)
            return float(latent_cstat(fam, mu, s)) - c

        def make(s):
            return RiskDistribution(fam, _solve_latent_mu(fam, m, s), s)

    lo, hi = _SPREAD_BRACKET
    f_lo, f_hi = cerr(np.log(lo)), cerr(np.log(hi))
    while f_lo > 0.0 and lo > _SPREAD_FLOOR:
        hi, f_hi = lo, f_lo
        lo *= 0.25
        f_lo = cerr(np.log(lo))
    while f_hi < 0.0 and hi < _SPREAD_CEIL:
        lo, f_lo = hi, f_hi
        hi *= 4.0
        f_hi = cerr(np.log(hi))
    if f_lo > 0.0 or f_hi < 0.0:
        c_lo, c_hi = f_lo + c, f_hi + c
        raise IdentificationError(
            f"cannot attain c={c} for {fam} at mean={m}; achievable range "
            f"~ [{c_lo:.6f}, {c_hi:.6f}] over spread [{lo:.3g}, {hi:.3g}]")

    log_s = optimize.brentq(cerr, np.log(lo), np.log(hi), xtol=1e-13, rtol=8.9e-16)
    d = make(float(np.exp(log_s)))
    if abs(d.mean() - m) > _IDENT_TOL or abs(d.cstat() - c) > _IDENT_TOL:
        raise IdentificationError(
            f"identification residuals exceed {_IDENT_TOL}: "
            f"mean {d.mean():.9f} vs {m}, c {d.cstat():.9f} vs {c}")
    return d


def identify_arrays(means, cstats, family: str, cache: dict | None = None):
    """Identify many (mean, c) pairs; returns (param1, param2) arrays.

    A cache keyed on the exact float pair makes degenerate (point-mass)
    priors cost a single solve.
    """
    means = np.asarray(means, dtype=float)
    cstats = np.asarray(cstats, dtype=float)
    if cache is None:
        cache = {}
    p1 = np.empty_like(means)
    p2 = np.empty_like(means)
    for i, (m, c) in enumerate(zip(means, cstats)):
        key = (float(m), float(c))
        hit = cache.get(key)
        if hit is None:
            d = identify(RiskMoments(float(m), float(c)), family)
            hit = (d.param1, d.param2)
            cache[key] = hit
        p1[i], p2[i] = hit
    return p1, p2
