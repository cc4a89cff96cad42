"""Net benefit, optimality assurance and value-of-information metrics.

At a risk threshold z three strategies compete: treat no one (net benefit
0), treat by model, treat all.  Per parameter draw the true net benefits
follow from prevalence and the model's true sensitivity/specificity at the
threshold; a future study is summarized by its four confusion-matrix
frequencies, drawn from chained binomials without simulating individual
records.  Assurance is the probability that the strategy winning in the
future sample is truly best; EVSI/EVPI measure the expected net-benefit
gain from the study and from perfect information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import binom

from .errors import DomainError
from .evidence import EvidencePrior, ThetaDraw, ThetaSample, draw_theta
from .riskdist import latent_logit_p, latent_partial_mean

STRATEGIES = ("none", "model", "all")


@dataclass(frozen=True)
class NBTriple:
    """Net benefit of the three strategies, in true positives per patient."""

    nb_none: float
    nb_model: float
    nb_all: float

    def as_array(self) -> np.ndarray:
        return np.array([self.nb_none, self.nb_model, self.nb_all])


@dataclass(frozen=True)
class ConfusionCounts:
    n_tp: int
    n_fn: int
    n_tn: int
    n_fp: int

    def __post_init__(self):
        if min(self.n_tp, self.n_fn, self.n_tn, self.n_fp) < 0:
            raise DomainError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.n_tp + self.n_fn + self.n_tn + self.n_fp


@dataclass(frozen=True)
class VoIResult:
    assurance: float
    evpi: float
    evsi: float
    r_evsi: float
    winner_under_current_info: int
    mc_se_assurance: float
    mc_se_evsi: float
    flag_rate: float
    note: str = ""


def net_benefit(phi: float, se: float, sp: float, z: float) -> NBTriple:
    """True net benefits at threshold z given prevalence and test operating point."""
    if not 0.0 < z < 1.0:
        raise DomainError(f"threshold must lie in (0,1), got {z}")
    for name, v in (("phi", phi), ("se", se), ("sp", sp)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must lie in [0,1], got {v}")
    odds = z / (1.0 - z)
    nb_model = phi * se - (1.0 - phi) * (1.0 - sp) * odds
    nb_all = phi - (1.0 - phi) * odds
    return NBTriple(0.0, float(nb_model), float(nb_all))


def _nb_matrix(phi, se, sp, z):
    """(S, 3) net-benefit matrix in strategy order none/model/all."""
    odds = z / (1.0 - z)
    phi = np.asarray(phi, dtype=float)
    nb = np.zeros(phi.shape + (3,))
    nb[..., 1] = phi * se - (1.0 - phi) * (1.0 - sp) * odds
    nb[..., 2] = phi - (1.0 - phi) * odds
    return nb


def true_operating_point(thetas: ThetaSample, z: float):
    """Vectorized true (sensitivity, specificity) at predicted-risk threshold z.

    The threshold maps to the calibrated scale through each draw's
    calibration line before the risk-distribution integrals are taken.
    """
    lp_star = thetas.alpha + thetas.slope * np.log(z / (1.0 - z))
    if thetas.family == "beta":
        from scipy.special import betainc
        p_star = expit(lp_star)
        m = thetas.p1 / (thetas.p1 + thetas.p2)
        pm = m * betainc(thetas.p1 + 1.0, thetas.p2, p_star)
        cdf = betainc(thetas.p1, thetas.p2, p_star)
    else:
        if thetas.family == "logitnormal":
            x_star = lp_star
        else:
            from scipy.special import ndtri
            x_star = ndtri(expit(lp_star))
        m = thetas.phi
        pm = latent_partial_mean(thetas.family, thetas.p1, thetas.p2, x_star)
        cdf = _latent_cdf(thetas, x_star)
    se = np.clip((m - pm) / m, 0.0, 1.0)
    sp = np.clip((cdf - pm) / (1.0 - m), 0.0, 1.0)
    return se, sp


def _latent_cdf(thetas, x_star):
    from scipy.special import ndtr
    return ndtr((x_star - thetas.p1) / thetas.p2)


def sample_confusion(theta: ThetaDraw, z: float, n: int,
                     rng: np.random.Generator) -> ConfusionCounts:
    """Future-study confusion counts from the chained binomial scheme."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    p_star = float(theta.model.apply(z))
    se, sp = theta.risk.sens_spec_at(p_star)
    n_pos = int(rng.binomial(n, theta.phi))
    n_tp = int(rng.binomial(n_pos, se)) if n_pos else 0
    n_tn = int(rng.binomial(n - n_pos, sp)) if n - n_pos else 0
    return ConfusionCounts(n_tp, n_pos - n_tp, n_tn, n - n_pos - n_tn)


def _confusion_matrix_draws(thetas, se, sp, n, rng=None, u=None):
    """(N+, tp, tn) column arrays; with ``u`` given, inverse-CDF sampling
    couples the draws across different n (common random numbers)."""
    s = len(thetas)
    if u is not None:
        uu = np.clip(u, 1e-15, 1.0 - 1e-15)
        n_pos = binom.ppf(uu[:, 0], n, thetas.phi).astype(np.int64)
        n_tp = binom.ppf(uu[:, 1], n_pos, se).astype(np.int64)
        n_tn = binom.ppf(uu[:, 2], n - n_pos, sp).astype(np.int64)
    else:
        n_pos = rng.binomial(n, thetas.phi)
        n_tp = rng.binomial(n_pos, se)
        n_tn = rng.binomial(n - n_pos, sp)
    return n_pos, n_tp, n_tn


def _voi_from_components(thetas, se, sp, z, n, baseline, rng=None, u=None):
    s = len(thetas)
    nb_true = _nb_matrix(thetas.phi, se, sp, z)
    nb_max = nb_true.max(axis=1)

    n_pos, n_tp, n_tn = _confusion_matrix_draws(thetas, se, sp, n, rng, u)
    phi_hat = n_pos / n
    with np.errstate(divide="ignore", invalid="ignore"):
        se_hat = np.where(n_pos > 0, n_tp / np.maximum(n_pos, 1), 0.0)
        sp_hat = np.where(n - n_pos > 0, n_tn / np.maximum(n - n_pos, 1), 0.0)
    flagged = (n_pos == 0) | (n_pos == n)

    nb_sample = _nb_matrix(phi_hat, se_hat, sp_hat, z)
    winner = nb_sample.argmax(axis=1)  # ties resolve to the smaller index
    nb_of_winner = np.take_along_axis(nb_true, winner[:, None], axis=1)[:, 0]
    correct = nb_of_winner == nb_max

    enb = nb_true.mean(axis=0)
    if baseline == "best_current":
        current = float(enb.max())
        k_current = int(enb.argmax())
    else:
        k_current = int(baseline)
        current = float(enb[k_current])

    assurance = float(correct.mean())
    evpi = float(nb_max.mean() - enb.max())
    evsi = float(nb_of_winner.mean() - current)
    r_evsi = evsi / evpi if evpi > 0 else (1.0 if evsi == 0 else np.nan)

    mc_se_assurance = float(np.sqrt(assurance * (1 - assurance) / s))
    diff = nb_of_winner - nb_true[:, k_current]
    mc_se_evsi = float(diff.std(ddof=1) / np.sqrt(s)) if s > 1 else float("nan")
    note = ""
    if evsi < 0:
        note = (f"EVSI estimate {evsi:.3e} is negative (within MC error "
                f"{mc_se_evsi:.1e}); treat as zero gain")
    return VoIResult(assurance, evpi, evsi, float(r_evsi), k_current,
                     mc_se_assurance, mc_se_evsi, float(flagged.mean()), note)


def voi_run(prior: EvidencePrior | None, z: float, n: int, s: int,
            rng: np.random.Generator, *, baseline: str | int = "best_current",
            family: str = "logitnormal",
            thetas: ThetaSample | None = None, u: np.ndarray | None = None) -> VoIResult:
    """Assurance, EVPI, EVSI and their ratio for a future study of size n.

    Per draw: true net benefits and their max; a simulated future study via
    the four-frequency scheme; the sample-declared winner and its true net
    benefit.  ``baseline`` selects what EVSI is measured against: the best
    strategy under current information, or a forced default strategy index.
    Pass ``thetas``/``u`` to reuse draws and uniforms across sample sizes.
    """
    if not 0.0 < z < 1.0:
        raise DomainError(f"threshold must lie in (0,1), got {z}")
    if baseline != "best_current" and int(baseline) not in (0, 1, 2):
        raise DomainError(f"baseline must be 'best_current' or a strategy index, "
                          f"got {baseline!r}")
    if thetas is None:
        if prior is None:
            raise DomainError("either a prior or a ThetaSample is required")
        thetas = draw_theta(prior, s, family, rng)
    se, sp = true_operating_point(thetas, z)
    return _voi_from_components(thetas, se, sp, z, n, baseline, rng=rng, u=u)


def evsi_curve(prior: EvidencePrior | None, z: float, n_grid, s: int,
               rng: np.random.Generator, *, baseline: str | int = "best_current",
               family: str = "logitnormal",
               thetas: ThetaSample | None = None) -> list[dict]:
    """One VoI evaluation per grid size, with common random numbers.

    The same parameter draws and the same uniforms drive every grid point;
    confusion counts come from inverse-CDF binomial sampling so the coupling
    across sample sizes is monotone.
    """
    n_grid = [int(v) for v in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise DomainError("n_grid must be sorted strictly ascending")
    if thetas is None:
        thetas = draw_theta(prior, s, family, rng)
    se, sp = true_operating_point(thetas, z)
    u = rng.random((len(thetas), 3))
    rows = []
    for n in n_grid:
        res = _voi_from_components(thetas, se, sp, z, n, baseline, u=u)
        rows.append({"n": n, "evsi": res.evsi, "r_evsi": res.r_evsi,
                     "assurance": res.assurance, "mc_se": res.mc_se_evsi,
                     "mc_se_assurance": res.mc_se_assurance,
                     "evpi": res.evpi, "flag_rate": res.flag_rate})
    return rows


def enbs(evsi: float, n: int, m_scale: float, w_cost: float) -> float:
    """Expected net benefit of sampling: population-scaled EVSI minus cost."""
    if evsi < 0:
        raise DomainError(f"EVSI must be non-negative, got {evsi}")
    if m_scale <= 0 or w_cost < 0:
        raise DomainError("population scale must be positive and cost non-negative")
    return m_scale * evsi - w_cost * n
