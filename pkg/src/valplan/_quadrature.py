"""Shared fixed-node quadrature rules.

Gauss-Hermite handles expectations of smooth functions under a normal
latent variable to near machine precision.  Gauss-Legendre on (0, 1) is
used after quantile substitution, which turns truncated integrals over a
distribution into integrals of a bounded smooth function of the uniform
variable.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite, roots_legendre

# Node count switches to the larger rule when the latent SD is big enough
# that the logistic/probit transition needs finer resolution.
_GH_SMALL = 128
_GH_LARGE = 512
_GH_SIGMA_SWITCH = 1.5


@lru_cache(maxsize=None)
def hermite(n: int):
    """Nodes/weights for E[f(Z)], Z ~ N(0,1): sum(w * f(sqrt(2)*t))."""
    t, w = roots_hermite(n)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)


@lru_cache(maxsize=None)
def legendre01(n: int):
    """Nodes/weights for the unit interval: integral ~ sum(w * f(v))."""
    z, w = roots_legendre(n)
    return 0.5 * (z + 1.0), 0.5 * w


def hermite_for_sigma(sigma) -> tuple:
    """Pick a Hermite rule adequate for latent SD ``sigma`` (scalar or array max)."""
    s = float(np.max(sigma)) if np.ndim(sigma) else float(sigma)
    return hermite(_GH_LARGE if s > _GH_SIGMA_SWITCH else _GH_SMALL)


def latent_expect(func, mu, sigma):
    """E[func(X)] for X ~ N(mu, sigma^2), vectorized over mu/sigma arrays.

    ``mu`` and ``sigma`` broadcast against each other; the Hermite nodes run
    along the last axis.  ``func`` must accept the broadcast node matrix.
    """
    z, w = hermite_for_sigma(sigma)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    x = mu[..., None] + sigma[..., None] * z
    return func(x) @ w
