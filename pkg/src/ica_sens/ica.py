"""Individual-level causal association between a surrogate and a true
endpoint.

For a patient with potential outcomes (T0, T1, S0, S1) the treatment
effects are DT = T1 - T0 and DS = S1 - S0.  The association measure is

    ICA = 1 - exp(-2 * I(DT, DS))

with I the mutual information.  Under joint normality it reduces to the
squared correlation of the effect pair; under a joint Student t an
additional tail term depending only on the degrees of freedom enters.
The measure is computed three ways here: in closed form from moments
(normal), in closed form with the tail correction (Student t), and
nonparametrically from samples through a k-nearest-neighbour mutual
information estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import MomentSpec
from .errors import NumericError, ValidationError
from .samplers import as_generator
from .special import digamma, log_gamma

# Rows map (T0, T1, S0, S1) to (DT, DS).
EFFECT_CONTRAST = np.array([[-1.0, 1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 1.0]])

_ONE_BELOW = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class DeltaMoments:
    """Mean and covariance of the treatment-effect pair (DT, DS)."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def correlation(self) -> float:
        denom = math.sqrt(self.cov[0, 0] * self.cov[1, 1])
        if denom <= 0.0:
            raise ValidationError("degenerate effect covariance")
        return float(self.cov[0, 1] / denom)


@dataclass(frozen=True)
class IcaValue:
    """An association value plus how it was obtained."""

    value: float
    method: str
    mi: float | None = None


def delta_moments(spec: MomentSpec) -> DeltaMoments:
    """Project full moments onto the effect pair via the contrast rows."""
    mean = EFFECT_CONTRAST @ spec.mu
    cov = EFFECT_CONTRAST @ spec.sigma @ EFFECT_CONTRAST.T
    return DeltaMoments(mean=mean, cov=cov)


def rho_delta(spec: MomentSpec) -> float:
    """Correlation of (DT, DS) implied by a completed moment spec."""
    return delta_moments(spec).correlation


def rho_delta_homoscedastic(rho_t0s0, rho_t1s1, rho_t1s0, rho_t0s1, rho_t0t1, rho_s0s1) -> float:
    """Effect correlation when all four outcome variances are equal.

    In that case the variances cancel and only the six correlations
    remain.  Requires rho_t0t1 < 1 and rho_s0s1 < 1.
    """
    if rho_t0t1 >= 1.0 or rho_s0s1 >= 1.0:
        raise ValidationError("within-endpoint correlations must be < 1")
    num = rho_t0s0 + rho_t1s1 - rho_t1s0 - rho_t0s1
    den = 2.0 * math.sqrt((1.0 - rho_t0t1) * (1.0 - rho_s0s1))
    return num / den


# Above this threshold the closed form loses accuracy to cancellation
# (its error grows like nu * eps while the value decays like nu**-2),
# so an asymptotic series takes over.  Both branches agree to ~1e-8
# relative error at the boundary.
_ZETA_SERIES_FROM = 256.0


def zeta(nu):
    """Tail contribution to the mutual information of a bivariate t.

    Positive for finite nu, strictly decreasing, and vanishing in the
    normal limit (nu = inf is accepted).  Vectorized over nu.
    """
    scalar = np.ndim(nu) == 0
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if nu.size and not np.all(nu > 0.0):
        raise ValidationError("degrees of freedom must be positive")

    out = np.zeros_like(nu)
    finite = np.isfinite(nu)
    direct = finite & (nu < _ZETA_SERIES_FROM)
    far = finite & ~direct

    if direct.any():
        v = nu[direct]
        half = 0.5 * v
        out[direct] = (
            2.0 * (log_gamma(half) - log_gamma(half + 0.5) + 0.5 * np.log(half))
            + (1.0 + v) * (digamma(half + 0.5) - digamma(half))
            - (2.0 + v) / v
        )
    if far.any():
        v = nu[far]
        inv = 1.0 / v
        out[far] = inv * inv * (0.5 + inv * (-1.0 / 3.0 + inv * (-0.25 + inv * 0.6)))

    return float(out[0]) if scalar else out


def ica_normal(rho: float) -> float:
    """Association under joint normality: the squared effect correlation."""
    if not -1.0 <= rho <= 1.0:
        raise ValidationError(f"correlation must lie in [-1, 1], got {rho}")
    return rho * rho


def ica_t(rho: float, nu: float) -> float:
    """Association under a joint Student t with ``nu`` degrees of freedom.

    Equals 1 - (1 - rho**2) * exp(-2 * zeta(nu)); never below the
    normal-case value, and equal to it at nu = inf.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValidationError(f"correlation must lie in [-1, 1], got {rho}")
    z = zeta(nu)
    return 1.0 - (1.0 - rho * rho) * math.exp(-2.0 * z)


def ica_from_mi(mi: float) -> float:
    """Map a mutual information estimate to the association scale.

    Estimates can come out slightly negative for near-independent data;
    they are clamped to zero first, so the result lies in [0, 1).  Huge
    estimates would round to exactly 1.0 in floats and are pinned just
    below it to keep the range half-open.
    """
    out = -math.expm1(-2.0 * max(0.0, mi))
    return min(out, _ONE_BELOW)


def delta_from_outcomes(y):
    """Treatment-effect pairs from potential-outcome rows (T0, T1, S0, S1)."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != 4:
        raise ValidationError(f"expected shape (n, 4), got {y.shape}")
    return y @ EFFECT_CONTRAST.T


def _strict_radius_counts_1d(values, radius):
    """Count neighbours j != i with computed |v_j - v_i| <= radius_i.

    The comparison must apply to the rounded distance (matching the
    joint-space query semantics), not to interval endpoints, so the
    searchsorted positions are corrected by walking until the actual
    difference crosses the radius.  Rounded subtraction is monotone,
    hence each accepted set is a contiguous run in sorted order.
    """
    n = values.size
    order = np.argsort(values, kind="stable")
    ranked = values[order]

    def _walk(pos, accept, step):
        for _ in range(n):
            mask = accept(pos)
            if not mask.any():
                return pos
            pos[mask] += step
        raise NumericError("radius count correction failed to terminate")

    hi = np.searchsorted(ranked, values + radius, side="right")
    hi = _walk(hi, lambda p: (p < n) & (ranked[np.minimum(p, n - 1)] - values <= radius), 1)
    hi = _walk(hi, lambda p: (p > 0) & (ranked[np.maximum(p - 1, 0)] - values > radius), -1)

    lo = np.searchsorted(ranked, values - radius, side="left")
    lo = _walk(lo, lambda p: (p > 0) & (values - ranked[np.maximum(p - 1, 0)] <= radius), -1)
    lo = _walk(lo, lambda p: (p < n) & (values - ranked[np.minimum(p, n - 1)] > radius), 1)

    return hi - lo - 1


def knn_mutual_information(x, y, k: int = 10, rng=None, jitter: float = 1e-10) -> float:
    """k-nearest-neighbour mutual information estimate for a pair of
    scalar variables.

    Uses max-norm distances in the joint space; the k-th neighbour
    distance of each point sets a radius, and marginal neighbour counts
    within that radius (strict inequality) enter a digamma formula.
    When ``rng`` is given, both coordinates receive deterministic
    uniform jitter on (-jitter, jitter) to break ties; pass one whenever
    the data may contain duplicates.
    """
    x = np.ascontiguousarray(x, dtype=float).ravel()
    y = np.ascontiguousarray(y, dtype=float).ravel()
    n = x.size
    if y.size != n:
        raise ValidationError("x and y must have equal length")
    if not 1 <= k < n:
        raise ValidationError(f"need 1 <= k < n, got k={k}, n={n}")

    if rng is not None:
        g = as_generator(rng)
        x = x + g.uniform(-jitter, jitter, n)
        y = y + g.uniform(-jitter, jitter, n)

    points = np.column_stack((x, y))
    tree = cKDTree(points, leafsize=8, balanced_tree=False)
    dist, _ = tree.query(points, k=k + 1, p=np.inf)
    eps = dist[:, -1]
    if np.any(eps <= 0.0):
        raise ValidationError(
            "duplicate points collapse the neighbour radius; pass rng= to jitter ties"
        )
    # Strict inequality |d| < eps realized as |d| <= pred(eps) in floats.
    radius = np.nextafter(eps, 0.0)

    nx = _strict_radius_counts_1d(x, radius)
    ny = _strict_radius_counts_1d(y, radius)
    return float(
        digamma(float(k))
        + digamma(float(n))
        - np.mean(digamma(nx + 1.0) + digamma(ny + 1.0))
    )
