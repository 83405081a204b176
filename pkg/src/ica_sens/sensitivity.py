"""Sensitivity analysis over the unverifiable cross-arm correlations.

A single patient never reveals both potential outcomes, so four of the
six correlations of (T0, T1, S0, S1) cannot be estimated.  The
sensitivity loop draws candidates for that unidentified block, keeps
the ones compatible with a positive definite covariance, propagates
each one to an association value, and reports the resulting
distribution.  Association values are computed analytically where a
closed form exists and otherwise by simulating potential-outcome
vectors and estimating mutual information nonparametrically.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import IdentifiableMoments, complete_moments
from .errors import NumericError, ValidationError
from .ica import (
    delta_from_outcomes,
    ica_from_mi,
    ica_normal,
    ica_t,
    knn_mutual_information,
    rho_delta,
)
from .rng import RngSeed
from .samplers import as_generator, mvlognormal_sample, mvn_sample, mvt_sample, pd_check

THETA_FIELDS = ("rho_t1s0", "rho_t0s1", "rho_t0t1", "rho_s0s1")

# Substream tags: one namespace per role, replicate index appended.
_TAG_THETA = 1
_TAG_OUTCOMES = 2
_TAG_JITTER = 3

FAMILIES = ("normal", "t", "lognormal", "dvine")


@dataclass(frozen=True)
class ThetaU:
    """One candidate for the four unidentified correlations."""

    rho_t1s0: float
    rho_t0s1: float
    rho_t0t1: float
    rho_s0s1: float

    def __post_init__(self):
        for name in THETA_FIELDS:
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [-1, 1], got {v}")

    def as_tuple(self):
        return (self.rho_t1s0, self.rho_t0s1, self.rho_t0t1, self.rho_s0s1)


@dataclass(frozen=True)
class ThetaScheme:
    """Prior over the unidentified block.

    ``uniform`` draws each component i.i.d. from U(lo, hi); ``fixed``
    always proposes the given values (useful for what-if runs and for
    pinning a single completion).
    """

    kind: str = "uniform"
    lo: float = -1.0
    hi: float = 1.0
    values: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ValidationError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "uniform":
            if not -1.0 <= self.lo < self.hi <= 1.0:
                raise ValidationError("uniform scheme needs -1 <= lo < hi <= 1")
        elif self.values is None or len(self.values) != 4:
            raise ValidationError("fixed scheme needs exactly four values")

    @classmethod
    def unrestricted(cls):
        return cls(kind="uniform", lo=-1.0, hi=1.0)

    @classmethod
    def positive_restricted(cls, lo: float = 0.1, hi: float = 0.9):
        return cls(kind="uniform", lo=lo, hi=hi)

    @classmethod
    def fixed(cls, theta: ThetaU):
        return cls(kind="fixed", values=theta.as_tuple())

    def propose(self, g: np.random.Generator) -> ThetaU:
        if self.kind == "fixed":
            return ThetaU(*self.values)
        draw = g.uniform(self.lo, self.hi, 4)
        return ThetaU(*draw)


@dataclass(frozen=True)
class SensitivityConfig:
    """Settings for one sensitivity run.

    ``family`` selects the outcome model: ``normal`` (optionally
    analytic), ``t`` with ``nu`` degrees of freedom (optionally
    analytic), ``lognormal`` (moments are interpreted on the log
    scale), or ``dvine`` with the four pair-copula families given in
    ``vine_families`` for the unidentified slots.
    """

    n_replicates: int = 1000
    m_outcomes: int = 2000
    k_neighbors: int = 10
    max_rejections: int = 100_000
    scheme: ThetaScheme = field(default_factory=ThetaScheme.unrestricted)
    family: str = "normal"
    analytic: bool = True
    nu: float = 5.0
    vine_families: tuple[str, str, str, str] = ("gaussian",) * 4
    threads: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.n_replicates <= 0 or self.m_outcomes <= 1:
            raise ValidationError("n_replicates and m_outcomes must be positive")
        if not 1 <= self.k_neighbors < self.m_outcomes:
            raise ValidationError("need 1 <= k_neighbors < m_outcomes")
        if self.max_rejections < 0:
            raise ValidationError("max_rejections must be non-negative")
        if self.family == "t" and not self.nu > 0:
            raise ValidationError("t family needs nu > 0")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        if self.family in ("lognormal", "dvine") and self.analytic:
            object.__setattr__(self, "analytic", False)


@dataclass(frozen=True)
class IcaDistribution:
    """Replicate-level output of a sensitivity run."""

    theta: np.ndarray  # (n, 4) in THETA_FIELDS order
    ica: np.ndarray  # (n,)
    mi: np.ndarray  # (n,), nan for analytic replicates
    rejections: np.ndarray  # (n,) draws discarded before acceptance
    family: str
    config: SensitivityConfig

    def __len__(self):
        return len(self.ica)


def sample_theta_u(im: IdentifiableMoments, scheme: ThetaScheme, rng, max_rejections: int = 100_000):
    """Rejection-sample one admissible completion.

    Proposals come from ``scheme``; a proposal is accepted when the
    completed covariance matrix passes the positive definiteness check.
    Returns ``(theta, rejections)``.  Raises
    :class:`~ica_sens.errors.NumericError` when the budget is spent,
    which for a fixed scheme means the pinned values are inadmissible.
    """
    g = as_generator(rng)
    rejections = 0
    while True:
        theta = scheme.propose(g)
        spec = complete_moments(im, theta)
        if pd_check(spec.sigma) is not None:
            return theta, rejections
        rejections += 1
        if scheme.kind == "fixed":
            raise NumericError("fixed theta values give a covariance that is not positive definite")
        if rejections > max_rejections:
            raise NumericError(
                f"no admissible completion found after {max_rejections} rejections"
            )


def _normal_replicate(im, cfg, seed, rep):
    theta, rejections = sample_theta_u(
        im, cfg.scheme, seed.generator(_TAG_THETA, rep), cfg.max_rejections
    )
    spec = complete_moments(im, theta)
    rho = rho_delta(spec)
    if cfg.analytic:
        return theta, ica_normal(rho), math.nan, rejections
    x = mvn_sample(spec.mu, spec.sigma, cfg.m_outcomes, seed.generator(_TAG_OUTCOMES, rep))
    d = delta_from_outcomes(x)
    mi = knn_mutual_information(
        d[:, 0], d[:, 1], k=cfg.k_neighbors, rng=seed.generator(_TAG_JITTER, rep)
    )
    return theta, ica_from_mi(mi), mi, rejections


def _t_replicate(im, cfg, seed, rep):
    theta, rejections = sample_theta_u(
        im, cfg.scheme, seed.generator(_TAG_THETA, rep), cfg.max_rejections
    )
    spec = complete_moments(im, theta)
    if cfg.analytic:
        return theta, ica_t(rho_delta(spec), cfg.nu), math.nan, rejections
    x = mvt_sample(spec.mu, spec.sigma, cfg.nu, cfg.m_outcomes, seed.generator(_TAG_OUTCOMES, rep))
    d = delta_from_outcomes(x)
    mi = knn_mutual_information(
        d[:, 0], d[:, 1], k=cfg.k_neighbors, rng=seed.generator(_TAG_JITTER, rep)
    )
    return theta, ica_from_mi(mi), mi, rejections


def _lognormal_replicate(im, cfg, seed, rep):
    theta, rejections = sample_theta_u(
        im, cfg.scheme, seed.generator(_TAG_THETA, rep), cfg.max_rejections
    )
    spec = complete_moments(im, theta)
    y = mvlognormal_sample(spec.mu, spec.sigma, cfg.m_outcomes, seed.generator(_TAG_OUTCOMES, rep))
    d = delta_from_outcomes(y)
    mi = knn_mutual_information(
        d[:, 0], d[:, 1], k=cfg.k_neighbors, rng=seed.generator(_TAG_JITTER, rep)
    )
    return theta, ica_from_mi(mi), mi, rejections


def _dvine_replicate(im, cfg, seed, rep):
    # local import: the vine machinery sits on top of this module's types
    from .vine import RhoAssignment, build_vine, dvine_sample, slot_feasible, to_canonical

    g = seed.generator(_TAG_THETA, rep)
    rejections = 0
    while True:
        draw = cfg.scheme.propose(g)
        # the four dials become Spearman targets for the free vine
        # slots, matched by variable pair: (s0,s1), (t0,s1 | s0),
        # (s0,t1 | s1), (t0,t1 | s0,s1); stored under the usual theta
        # column names
        slots = (draw.rho_s0s1, draw.rho_t0s1, draw.rho_t1s0, draw.rho_t0t1)
        if all(slot_feasible(f, r) for f, r in zip(cfg.vine_families, slots)):
            break
        rejections += 1
        if cfg.scheme.kind == "fixed":
            raise NumericError("fixed slot correlations are infeasible for the chosen families")
        if rejections > cfg.max_rejections:
            raise NumericError(f"no feasible slot correlations after {cfg.max_rejections} rejections")
    vine = build_vine(im, cfg.vine_families, RhoAssignment("unrestricted", slots))
    y = dvine_sample(vine, cfg.m_outcomes, seed.generator(_TAG_OUTCOMES, rep))
    d = delta_from_outcomes(to_canonical(y))
    mi = knn_mutual_information(
        d[:, 0], d[:, 1], k=cfg.k_neighbors, rng=seed.generator(_TAG_JITTER, rep)
    )
    return draw, ica_from_mi(mi), mi, rejections


_REPLICATE = {
    "normal": _normal_replicate,
    "t": _t_replicate,
    "lognormal": _lognormal_replicate,
    "dvine": _dvine_replicate,
}


def _run_block(args):
    im_json, cfg, seed, reps = args
    im = IdentifiableMoments.from_json(im_json)
    fn = _REPLICATE[cfg.family]
    return [fn(im, cfg, seed, rep) for rep in reps]


def run_sensitivity(im: IdentifiableMoments, cfg: SensitivityConfig, seed: RngSeed) -> IcaDistribution:
    """Run the full sensitivity loop.

    Replicate ``rep`` draws only from substreams tagged with its own
    index, so the output is identical for any ``threads`` setting; the
    thread count only changes wall-clock time.
    """
    if not isinstance(seed, RngSeed):
        raise ValidationError("run_sensitivity needs an RngSeed so replicates get stable streams")
    reps = list(range(cfg.n_replicates))
    if cfg.threads > 1 and cfg.n_replicates > 1:
        chunks = [reps[i :: cfg.threads] for i in range(cfg.threads)]
        payloads = [(im.to_json(), cfg, seed, chunk) for chunk in chunks if chunk]
        results = [None] * cfg.n_replicates
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            for chunk, block in zip([c for c in chunks if c], pool.map(_run_block, payloads)):
                for rep, row in zip(chunk, block):
                    results[rep] = row
    else:
        fn = _REPLICATE[cfg.family]
        results = [fn(im, cfg, seed, rep) for rep in reps]

    theta = np.array([r[0].as_tuple() for r in results])
    ica = np.array([r[1] for r in results])
    mi = np.array([r[2] for r in results])
    rejections = np.array([r[3] for r in results], dtype=np.int64)
    return IcaDistribution(
        theta=theta, ica=ica, mi=mi, rejections=rejections, family=cfg.family, config=cfg
    )


_QUANTS = (0.05, 0.25, 0.5, 0.75, 0.95)


def summarize(dist: IcaDistribution) -> dict:
    """Distribution summary with linear-interpolation quantiles."""
    ica = dist.ica
    if len(ica) == 0:
        raise ValidationError("empty distribution")
    q = np.quantile(ica, _QUANTS, method="linear")
    return {
        "n": int(len(ica)),
        "family": dist.family,
        "mean": float(ica.mean()),
        "sd": float(ica.std(ddof=1)) if len(ica) > 1 else 0.0,
        "min": float(ica.min()),
        "q05": float(q[0]),
        "q25": float(q[1]),
        "q50": float(q[2]),
        "q75": float(q[3]),
        "q95": float(q[4]),
        "max": float(ica.max()),
        "rejections_total": int(dist.rejections.sum()),
        "rejections_mean": float(dist.rejections.mean()),
    }
