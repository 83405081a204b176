"""Matrix-variate and multivariate samplers on explicit RNG streams.

All samplers take either an :class:`~ica_sens.rng.RngSeed` or a ready
``numpy.random.Generator``.  Draw order within each sampler is fixed and
documented so that outputs are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .rng import RngSeed


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngSeed):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValidationError(f"expected RngSeed or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T equal to the input matrix."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def _check_square_symmetric(sigma, name="sigma"):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise ValidationError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.abs(sigma).max()))
    if np.abs(sigma - sigma.T).max() > 1e-10 * scale:
        raise ValidationError(f"{name} is not symmetric within tolerance")
    return sigma


def pd_check(sigma, eps_scale: float = 1e-10):
    """Attempt a Cholesky factorization with a pivot floor.

    Returns a :class:`CholeskyFactor` when every pivot exceeds
    ``eps_scale`` times the largest diagonal entry, and ``None``
    otherwise.  Rejection is the only failure mode: the matrix is never
    regularized or repaired.
    """
    sigma = _check_square_symmetric(sigma)
    d = sigma.shape[0]
    max_diag = float(sigma.diagonal().max(initial=0.0))
    if max_diag <= 0.0:
        return None
    eps = eps_scale * max_diag

    lower = np.zeros((d, d))
    for j in range(d):
        pivot = sigma[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= eps:
            return None
        lower[j, j] = math.sqrt(pivot)
        if j + 1 < d:
            lower[j + 1 :, j] = (sigma[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return CholeskyFactor(lower=lower)


def _require_factor(sigma, factor):
    if factor is not None:
        return factor
    factor = pd_check(sigma)
    if factor is None:
        raise ValidationError("covariance matrix is not positive definite")
    return factor


def mvn_sample(mean, sigma, n: int, rng, *, factor: CholeskyFactor | None = None):
    """Draw ``n`` multivariate normal vectors, shape ``(n, d)``.

    Passing a precomputed ``factor`` skips the Cholesky step in hot
    loops; the draws themselves are unaffected.
    """
    mean = np.asarray(mean, dtype=float)
    factor = _require_factor(sigma, factor)
    if mean.shape != (factor.dim,):
        raise ValidationError(f"mean has shape {mean.shape}, expected ({factor.dim},)")
    if n <= 0:
        raise ValidationError("sample count must be positive")
    g = as_generator(rng)
    z = g.standard_normal((n, factor.dim))
    return mean + z @ factor.lower.T


def mvt_sample(mean, sigma, nu: float, n: int, rng, *, factor: CholeskyFactor | None = None):
    """Draw from a multivariate Student t with scale matrix ``sigma``.

    Construction: x = mean + y * sqrt(nu / u) with y normal(0, sigma)
    and u chi-square(nu), drawn in that order.  ``nu = inf`` is accepted
    as a sentinel for the normal limit and delegates to
    :func:`mvn_sample` exactly.  For nu > 2 the covariance of x is
    nu / (nu - 2) times ``sigma``.
    """
    if not nu > 0:
        raise ValidationError(f"degrees of freedom must be positive, got {nu}")
    if math.isinf(nu):
        return mvn_sample(mean, sigma, n, rng, factor=factor)
    mean = np.asarray(mean, dtype=float)
    factor = _require_factor(sigma, factor)
    if n <= 0:
        raise ValidationError("sample count must be positive")
    g = as_generator(rng)
    y = g.standard_normal((n, factor.dim)) @ factor.lower.T
    u = g.chisquare(nu, size=n)
    return mean + y * np.sqrt(nu / u)[:, None]


def mvlognormal_sample(mu_log, sigma_log, n: int, rng, *, factor: CholeskyFactor | None = None):
    """Componentwise exponential of a multivariate normal draw."""
    return np.exp(mvn_sample(mu_log, sigma_log, n, rng, factor=factor))


def wishart_sample(scale, df: float, n: int, rng):
    """Draw ``n`` Wishart matrices via the Bartlett decomposition.

    Shape ``(n, d, d)``; the mean of the distribution is ``df * scale``.
    Draw order: one (n, d, d) block of standard normals, then the d
    chi-square columns.
    """
    scale = _check_square_symmetric(scale, "scale")
    d = scale.shape[0]
    if not df > d - 1:
        raise ValidationError(f"wishart requires df > d - 1, got df={df} at d={d}")
    if n <= 0:
        raise ValidationError("sample count must be positive")
    factor = pd_check(scale)
    if factor is None:
        raise ValidationError("wishart scale matrix is not positive definite")
    g = as_generator(rng)

    a = np.tril(g.standard_normal((n, d, d)), -1)
    chi = g.chisquare(df - np.arange(d), size=(n, d))
    if np.any(chi <= 0.0):  # chi-square draws are almost surely positive
        raise NumericError("degenerate chi-square draw in wishart sampler")
    idx = np.arange(d)
    a[:, idx, idx] = np.sqrt(chi)

    la = factor.lower @ a
    return la @ np.transpose(la, (0, 2, 1))
