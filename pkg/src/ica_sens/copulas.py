"""Bivariate copula families: CDF, density, conditionals, and rank
correlation calibration.

Four parametric families are supported (gaussian, clayton, gumbel,
frank) plus the independence copula.  Everything is evaluated in log
space where the natural formulas overflow, so large dependence
parameters remain usable.  The conditional CDF ``h(u | v)`` is the
derivative of C(u, v) in its second argument; its inverse is closed
form for every family except gumbel, which falls back to bisection.

Calibration maps a population Spearman correlation to the family
parameter.  The gaussian map is closed form; the Archimedean families
integrate the copula CDF with an adaptive two-dimensional
Gauss-Kronrod rule and invert the map with a bracketing root finder on
a log-parameter scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .errors import NumericError, ValidationError

PARAMETRIC_FAMILIES = ("gaussian", "clayton", "gumbel", "frank")
FAMILIES = PARAMETRIC_FAMILIES + ("independence",)

# Inputs are clamped into [EPS_U, 1 - EPS_U] before evaluation.
EPS_U = 1e-10

# Largest magnitude of Spearman correlation the Archimedean calibration
# will solve for; beyond this the parameters are numerically extreme.
RHO_S_MAX = 0.999

# Parameters below these thresholds are treated as exact independence.
_TINY_CLAYTON = 1e-8
_TINY_FRANK = 1e-8
_TINY_GUMBEL = 1e-12

_CLAMP_EVENTS = {"count": 0}


def clamp_events() -> int:
    """Number of times an input landed outside [EPS_U, 1 - EPS_U]."""
    return _CLAMP_EVENTS["count"]


def reset_clamp_events():
    _CLAMP_EVENTS["count"] = 0


def _clamp(x):
    x = np.asarray(x, dtype=float)
    out_of_range = (x < EPS_U) | (x > 1.0 - EPS_U)
    if out_of_range.any():
        _CLAMP_EVENTS["count"] += int(out_of_range.sum())
        x = np.clip(x, EPS_U, 1.0 - EPS_U)
    return x


@dataclass(frozen=True)
class Copula:
    """A family tag plus its dependence parameter (None = independence)."""

    family: str
    param: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown copula family {self.family!r}")
        if self.family == "independence":
            if self.param is not None:
                raise ValidationError("independence copula takes no parameter")
            return
        p = self.param
        if p is None or not np.isfinite(p):
            raise ValidationError(f"{self.family} copula needs a finite parameter")
        if self.family == "gaussian" and not -1.0 < p < 1.0:
            raise ValidationError(f"gaussian parameter must lie in (-1, 1), got {p}")
        if self.family == "clayton" and not p >= 0.0:
            raise ValidationError(f"clayton parameter must be >= 0, got {p}")
        if self.family == "gumbel" and not p >= 1.0:
            raise ValidationError(f"gumbel parameter must be >= 1, got {p}")

    def is_independence(self) -> bool:
        if self.family == "independence":
            return True
        if self.family == "clayton":
            return self.param <= _TINY_CLAYTON
        if self.family == "gumbel":
            return self.param - 1.0 <= _TINY_GUMBEL
        if self.family == "frank":
            return abs(self.param) <= _TINY_FRANK
        return self.param == 0.0


# ---------------------------------------------------------------------------
# gaussian


def _gaussian_h(rho, u, v):
    x, y = ndtri(u), ndtri(v)
    return ndtr((x - rho * y) / math.sqrt(1.0 - rho * rho))


def _gaussian_h_inv(rho, w, v):
    return ndtr(ndtri(w) * math.sqrt(1.0 - rho * rho) + rho * ndtri(v))


def _gaussian_density(rho, u, v):
    x, y = ndtri(u), ndtri(v)
    r2 = 1.0 - rho * rho
    return np.exp(-(rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)) / math.sqrt(r2)


def _gaussian_cdf(rho, u, v):
    # one-dimensional reduction: integrate the conditional over the
    # smaller tail; adequate for tests and calibration cross-checks
    from scipy.stats import multivariate_normal

    x, y = ndtri(u), ndtri(v)
    cov = np.array([[1.0, rho], [rho, 1.0]])
    pts = np.column_stack([np.broadcast_to(x, np.broadcast(x, y).shape).ravel(),
                           np.broadcast_to(y, np.broadcast(x, y).shape).ravel()])
    out = multivariate_normal(mean=[0.0, 0.0], cov=cov).cdf(pts)
    return np.asarray(out).reshape(np.broadcast(x, y).shape)


# ---------------------------------------------------------------------------
# clayton


def _clayton_ln_a(theta, u, v):
    # ln(u**-theta + v**-theta - 1), stable for extreme theta
    a = -theta * np.log(u)
    b = -theta * np.log(v)
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


def _clayton_cdf(theta, u, v):
    return np.exp(-_clayton_ln_a(theta, u, v) / theta)


def _clayton_h(theta, u, v):
    ln_a = _clayton_ln_a(theta, u, v)
    return np.exp(-(theta + 1.0) * np.log(v) - (1.0 + 1.0 / theta) * ln_a)


def _clayton_h_inv(theta, w, v):
    # closed-form inverse of the conditional CDF
    t = -theta * np.log(v) + np.log(np.expm1(-(theta / (1.0 + theta)) * np.log(w)))
    return np.exp(-np.logaddexp(0.0, t) / theta)


def _clayton_density(theta, u, v):
    ln_a = _clayton_ln_a(theta, u, v)
    return np.exp(
        math.log1p(theta)
        - (theta + 1.0) * (np.log(u) + np.log(v))
        - (2.0 + 1.0 / theta) * ln_a
    )


# ---------------------------------------------------------------------------
# gumbel


def _gumbel_parts(theta, u, v):
    lx = np.log(-np.log(u))
    ly = np.log(-np.log(v))
    ln_s = np.logaddexp(theta * lx, theta * ly)
    return lx, ly, ln_s


def _gumbel_cdf(theta, u, v):
    _, _, ln_s = _gumbel_parts(theta, u, v)
    return np.exp(-np.exp(ln_s / theta))


def _gumbel_h(theta, u, v):
    _, ly, ln_s = _gumbel_parts(theta, u, v)
    return np.exp(-np.exp(ln_s / theta) + (theta - 1.0) * ly + (1.0 / theta - 1.0) * ln_s - np.log(v))


def _gumbel_density(theta, u, v):
    lx, ly, ln_s = _gumbel_parts(theta, u, v)
    spow = np.exp(ln_s / theta)
    return np.exp(
        -spow
        + (theta - 1.0) * (lx + ly)
        + (2.0 / theta - 2.0) * ln_s
        - np.log(u)
        - np.log(v)
        + np.log1p((theta - 1.0) / spow)
    )


def _gumbel_h_inv(theta, w, v):
    # no closed form: bisection on u; the conditional is monotone, so
    # the interval halves every step down to float resolution
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast(w, v).shape
    lo = np.full(shape, EPS_U)
    hi = np.full(shape, 1.0 - EPS_U)
    wb = np.broadcast_to(w, shape)
    vb = np.broadcast_to(v, shape)
    for _ in range(52):
        mid = 0.5 * (lo + hi)
        below = _gumbel_h(theta, mid, vb) < wb
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# frank
#
# Throughout, s = -theta; ln_em1(z) = ln|expm1(z)| is evaluated in a
# branch-stable way so both signs of the parameter share one code path.


def _ln_abs_expm1(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z > 0
    big = z > 30.0
    mid = pos & ~big
    out[mid] = np.log(np.expm1(z[mid]))  # full precision, no overflow below e^30
    out[big] = z[big] + np.log1p(-np.exp(-z[big]))
    out[~pos] = np.log1p(-np.exp(z[~pos]))  # ln(1 - e^z) = ln|expm1(z)| for z < 0
    return out


def _frank_cdf(theta, u, v):
    if theta > 0:
        # rotating one margin flips the parameter sign
        return v - _frank_cdf(-theta, 1.0 - u, v)
    s = -theta  # s > 0, so every expm1 argument below is positive
    l_s = math.log(math.expm1(s)) if s <= 30.0 else s + math.log1p(-math.exp(-s))
    ln_p = _ln_abs_expm1(s * u) + _ln_abs_expm1(s * v) - l_s
    return np.logaddexp(0.0, ln_p) / s


def _frank_h(theta, u, v):
    s = -theta
    ln_g = s * (u - v) + _ln_abs_expm1(s * (1.0 - u)) - _ln_abs_expm1(s * u)
    # h = 1 / (1 + g) with g > 0
    return np.where(ln_g > 0, np.exp(-ln_g) / (1.0 + np.exp(-ln_g)), 1.0 / (1.0 + np.exp(ln_g)))


def _frank_h_inv(theta, w, v):
    s = -theta
    base = s * v + np.log1p(-w)
    num = np.logaddexp(base, np.log(w) + s)
    den = np.logaddexp(base, np.log(w))
    return (num - den) / s


def _q_ratio(z):
    # e^z / expm1(z) = -1 / expm1(-z), stable away from z = 0
    return -1.0 / np.expm1(-z)


def _frank_density(theta, u, v):
    s = -theta
    h = _frank_h(theta, u, v)
    return h * (1.0 - h) * s * (_q_ratio(s * (1.0 - u)) + _q_ratio(s * u) - 1.0)


# ---------------------------------------------------------------------------
# dispatch

_CDF = {"gaussian": _gaussian_cdf, "clayton": _clayton_cdf, "gumbel": _gumbel_cdf, "frank": _frank_cdf}
_H = {"gaussian": _gaussian_h, "clayton": _clayton_h, "gumbel": _gumbel_h, "frank": _frank_h}
_H_INV = {"gaussian": _gaussian_h_inv, "clayton": _clayton_h_inv, "gumbel": _gumbel_h_inv, "frank": _frank_h_inv}
_DENSITY = {
    "gaussian": _gaussian_density,
    "clayton": _clayton_density,
    "gumbel": _gumbel_density,
    "frank": _frank_density,
}


def _dispatch(table, cop: Copula, a, b, identity):
    a = _clamp(a)
    b = _clamp(b)
    if cop.is_independence():
        out = identity(a, b)
    else:
        out = table[cop.family](cop.param, a, b)
    return out


def copula_cdf(cop: Copula, u, v):
    """C(u, v): probability mass of the lower-left quadrant."""
    out = _dispatch(_CDF, cop, u, v, lambda a, b: a * b)
    return np.clip(out, 0.0, 1.0)


def copula_density(cop: Copula, u, v):
    """Copula density c(u, v) = d2 C / du dv."""
    return _dispatch(_DENSITY, cop, u, v, lambda a, b: np.ones(np.broadcast(a, b).shape))


def copula_h(cop: Copula, u, v):
    """Conditional CDF of the first argument given the second."""
    out = _dispatch(_H, cop, u, v, lambda a, b: a + 0.0 * b)
    return np.clip(out, 0.0, 1.0)


def copula_h_inverse(cop: Copula, w, v):
    """Inverse of :func:`copula_h` in its first argument."""
    out = _dispatch(_H_INV, cop, w, v, lambda a, b: a + 0.0 * b)
    return np.clip(out, EPS_U, 1.0 - EPS_U)


def copula_sample(cop: Copula, n: int, rng):
    """Draw ``n`` pairs by conditional inversion: v, w uniform, u = h^-1(w | v)."""
    from .samplers import as_generator

    g = as_generator(rng)
    v = g.random(n)
    w = g.random(n)
    u = copula_h_inverse(cop, w, v)
    return np.column_stack((u, v))


# ---------------------------------------------------------------------------
# Gauss-Kronrod panel integration of the copula CDF
#
# 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule,
# on [-1, 1]; the difference between the two estimates drives panel
# refinement.

_K15_NODES = np.array(
    [
        -0.9914553711208126,
        -0.9491079123427585,
        -0.8648644233597691,
        -0.7415311855993945,
        -0.5860872354676911,
        -0.4058451513773972,
        -0.2077849550078985,
        0.0,
        0.2077849550078985,
        0.4058451513773972,
        0.5860872354676911,
        0.7415311855993945,
        0.8648644233597691,
        0.9491079123427585,
        0.9914553711208126,
    ]
)
_K15_WEIGHTS = np.array(
    [
        0.02293532201052922,
        0.06309209262997855,
        0.1047900103222502,
        0.1406532597155259,
        0.1690047266392679,
        0.1903505780647854,
        0.2044329400752989,
        0.2094821410847278,
        0.2044329400752989,
        0.1903505780647854,
        0.1690047266392679,
        0.1406532597155259,
        0.1047900103222502,
        0.06309209262997855,
        0.02293532201052922,
    ]
)
# Gauss-7 weights sit on every second Kronrod node.
_G7_WEIGHTS = np.array(
    [
        0.1294849661688697,
        0.2797053914892767,
        0.3818300505051189,
        0.4179591836734694,
        0.3818300505051189,
        0.2797053914892767,
        0.1294849661688697,
    ]
)
_G7_IDX = np.arange(1, 15, 2)

# tensor weights, flattened over the 225 (or 49) node grid
_WK = np.outer(_K15_WEIGHTS, _K15_WEIGHTS).ravel()
_WG = np.outer(_G7_WEIGHTS, _G7_WEIGHTS).ravel()


def _panel_nodes(panels):
    """Map the K15 x K15 tensor grid into each panel.

    ``panels`` has rows (u0, u1, v0, v1); returns flattened (m*225, 2)
    coordinates plus the per-panel jacobian factors.
    """
    half_u = 0.5 * (panels[:, 1] - panels[:, 0])
    mid_u = 0.5 * (panels[:, 1] + panels[:, 0])
    half_v = 0.5 * (panels[:, 3] - panels[:, 2])
    mid_v = 0.5 * (panels[:, 3] + panels[:, 2])
    uu = mid_u[:, None, None] + half_u[:, None, None] * _K15_NODES[None, :, None]
    vv = mid_v[:, None, None] + half_v[:, None, None] * _K15_NODES[None, None, :]
    uu, vv = np.broadcast_arrays(uu, vv)
    return uu.reshape(len(panels), -1), vv.reshape(len(panels), -1), half_u * half_v


def _panel_estimates(cop, panels):
    uu, vv, jac = _panel_nodes(panels)
    vals = copula_cdf(cop, uu.ravel(), vv.ravel()).reshape(len(panels), 15, 15)
    flat = vals.reshape(len(panels), -1)
    i_k = flat @ _WK * jac
    gauss = vals[:, _G7_IDX][:, :, _G7_IDX].reshape(len(panels), -1)
    i_g = gauss @ _WG * jac
    return i_k, np.abs(i_k - i_g)


def integrate_cdf(cop: Copula, tol: float = 1e-9, max_panels: int = 8192) -> float:
    """Adaptive panel integral of C(u, v) over the unit square."""
    grid = np.linspace(0.0, 1.0, 5)
    panels = np.array(
        [(grid[i], grid[i + 1], grid[j], grid[j + 1]) for i in range(4) for j in range(4)]
    )
    values, errors = _panel_estimates(cop, panels)

    for _ in range(40):
        if errors.sum() <= tol:
            return float(values.sum())
        if len(panels) >= max_panels:
            break
        # split every panel holding more than its share of the budget
        share = tol / (2.0 * len(panels))
        split = errors > share
        if not split.any():
            split = errors >= errors.max()
        keep_p, keep_v, keep_e = panels[~split], values[~split], errors[~split]
        parents = panels[split]
        mu = 0.5 * (parents[:, 0] + parents[:, 1])
        mv = 0.5 * (parents[:, 2] + parents[:, 3])
        children = np.concatenate(
            [
                np.stack([parents[:, 0], mu, parents[:, 2], mv], axis=1),
                np.stack([mu, parents[:, 1], parents[:, 2], mv], axis=1),
                np.stack([parents[:, 0], mu, mv, parents[:, 3]], axis=1),
                np.stack([mu, parents[:, 1], mv, parents[:, 3]], axis=1),
            ]
        )
        child_v, child_e = _panel_estimates(cop, children)
        panels = np.concatenate([keep_p, children])
        values = np.concatenate([keep_v, child_v])
        errors = np.concatenate([keep_e, child_e])

    if errors.sum() > 10.0 * tol:
        raise NumericError(
            f"copula integral did not reach tolerance (err={errors.sum():.2e}, panels={len(panels)})"
        )
    return float(values.sum())


def spearman_of(cop: Copula, tol: float = 1e-9) -> float:
    """Population Spearman correlation of a copula."""
    if cop.is_independence():
        return 0.0
    if cop.family == "gaussian":
        return 6.0 / math.pi * math.asin(0.5 * cop.param)
    return 12.0 * integrate_cdf(cop, tol=tol) - 3.0


# search brackets on the transformed parameter scale
_BRACKETS = {
    "clayton": (math.log(1e-7), math.log(1e4)),
    "gumbel": (math.log(1e-7), math.log(1e3)),  # in log(theta - 1)
    "frank": (math.log(1e-6), math.log(4e3)),
}


def _param_from_log(family: str, x: float) -> float:
    if family == "gumbel":
        return 1.0 + math.exp(x)
    return math.exp(x)


@lru_cache(maxsize=200_000)
def spearman_to_parameter(family: str, rho_s: float) -> float | None:
    """Solve for the family parameter with the given population Spearman.

    gaussian accepts any rho_s in (-1, 1) and is closed form.  clayton
    and gumbel cover only positive association; frank covers both signs
    but not exact zero, which (like near-zero targets for the others)
    returns the independence-limit parameter.  The Archimedean solvers
    bracket on a log-parameter scale and are limited to
    |rho_s| <= RHO_S_MAX.
    """
    if family == "independence":
        if abs(rho_s) > 1e-6:
            raise ValidationError("independence copula cannot carry correlation")
        return None
    if family not in PARAMETRIC_FAMILIES:
        raise ValidationError(f"unknown copula family {family!r}")
    if family == "gaussian":
        if not -1.0 < rho_s < 1.0:
            raise ValidationError(f"gaussian needs rho_s in (-1, 1), got {rho_s}")
        return 2.0 * math.sin(math.pi * rho_s / 6.0)

    if abs(rho_s) <= 1e-6:
        return {"clayton": 0.0, "gumbel": 1.0, "frank": 0.0}[family]
    if family in ("clayton", "gumbel") and rho_s < 0:
        raise ValidationError(f"{family} cannot represent negative rank correlation")
    if abs(rho_s) > RHO_S_MAX:
        raise ValidationError(
            f"|rho_s| above {RHO_S_MAX} is outside the calibrated range for {family}"
        )

    sign = 1.0
    target = rho_s
    if family == "frank" and rho_s < 0:
        sign, target = -1.0, -rho_s  # frank is antisymmetric in its parameter

    def gap(x):
        return spearman_of(Copula(family, _param_from_log(family, x))) - target

    lo, hi = _BRACKETS[family]
    g_lo, g_hi = gap(lo), gap(hi)
    if not g_lo < 0.0 < g_hi:
        raise NumericError(f"calibration bracket failed for {family} at rho_s={rho_s}")
    x = brentq(gap, lo, hi, xtol=1e-12, rtol=8.9e-16)
    return sign * _param_from_log(family, x)
