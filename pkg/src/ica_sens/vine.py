"""D-vine models over the four potential outcomes.

The chain order is (T0, S0, S1, T1).  Two pair copulas sit on
arm-internal pairs whose correlations the data identify; those stay
gaussian at the estimated correlations.  The other four slots (one
unconditional, three conditional) are free: they carry the untestable
assumptions, chosen by family and Spearman correlation.  Margins are
the estimated per-arm normals, so every model in the grid shares the
observable bivariate margins no matter which families fill the free
slots.

Conditional copulas are constant in the conditioning values (the
simplified-vine restriction); that is structural here, since a slot is
a single :class:`~ica_sens.copulas.Copula` with a fixed parameter.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .copulas import (
    PARAMETRIC_FAMILIES,
    RHO_S_MAX,
    Copula,
    copula_h,
    copula_h_inverse,
    spearman_to_parameter,
)
from .data import IdentifiableMoments
from .errors import ValidationError
from .ica import ica_from_mi, knn_mutual_information
from .rng import RngSeed
from .samplers import as_generator

VINE_ORDER = ("t0", "s0", "s1", "t1")
# column permutation from vine order to (t0, t1, s0, s1)
_CANONICAL_FROM_VINE = (0, 3, 1, 2)

FREE_SLOTS = ("s0s1", "t0s1_s0", "s0t1_s1", "t0t1_s0s1")
_CONDITIONAL_ONLY = ("t0s1_s0", "s0t1_s1")  # forced off in the CI scheme

SCHEMES = ("unrestricted", "positive_restricted", "conditional_independence")

# Spearman values this close to zero are treated as exact independence.
_RHO_ZERO = 1e-6

_TAG_ASSIGN = 11
_TAG_UNIFORMS = 12
_TAG_JITTER = 13


@dataclass(frozen=True)
class RhoAssignment:
    """Spearman targets for the four free slots; None means independence."""

    scheme: str
    values: tuple[float | None, float | None, float | None, float | None]

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if len(self.values) != len(FREE_SLOTS):
            raise ValidationError(f"need {len(FREE_SLOTS)} slot values")
        for slot, v in zip(FREE_SLOTS, self.values):
            if v is None:
                continue
            if not -1.0 < v < 1.0:
                raise ValidationError(f"slot {slot}: rho_s {v} outside (-1, 1)")


def sample_rho_assignment(scheme: str, rng, *, rho_lo: float = 0.1, rho_hi: float = 0.9) -> RhoAssignment:
    """Draw one set of free-slot Spearman values under a scheme.

    unrestricted draws each slot from U(-1, 1), redrawing the rare
    values beyond |rho_s| = 0.999 that the Archimedean calibration
    cannot reach.  positive_restricted draws from U(rho_lo, rho_hi).
    conditional_independence fixes the two singly-conditioned slots to
    independence and draws the other two as in positive_restricted.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}")
    if not 0.0 < rho_lo < rho_hi < 1.0:
        raise ValidationError(f"need 0 < rho_lo < rho_hi < 1, got [{rho_lo}, {rho_hi}]")
    if rho_hi > RHO_S_MAX:
        raise ValidationError(f"rho_hi must not exceed {RHO_S_MAX}")
    g = as_generator(rng)

    def draw_unrestricted():
        while True:
            v = g.uniform(-1.0, 1.0)
            if abs(v) <= RHO_S_MAX:
                return v

    if scheme == "unrestricted":
        values = tuple(draw_unrestricted() for _ in FREE_SLOTS)
    elif scheme == "positive_restricted":
        values = tuple(g.uniform(rho_lo, rho_hi) for _ in FREE_SLOTS)
    else:
        values = tuple(
            None if slot in _CONDITIONAL_ONLY else g.uniform(rho_lo, rho_hi) for slot in FREE_SLOTS
        )
    return RhoAssignment(scheme, values)


def slot_feasible(family: str, rho_s: float | None) -> bool:
    """Whether a family can be calibrated to a slot's Spearman target."""
    if rho_s is None or abs(rho_s) <= _RHO_ZERO:
        return True  # independence limit exists in every family
    if family == "independence":
        return False
    if abs(rho_s) > RHO_S_MAX:
        return False
    if family in ("clayton", "gumbel"):
        return rho_s > 0.0
    return family in ("gaussian", "frank")


@dataclass(frozen=True)
class VineSpec:
    """Fully calibrated model: four normal margins plus six pair copulas."""

    margins: tuple[tuple[float, float], ...]  # (mean, sd) in VINE_ORDER
    c_t0s0: Copula
    c_s0s1: Copula
    c_s1t1: Copula
    c_t0s1_s0: Copula
    c_s0t1_s1: Copula
    c_t0t1_s0s1: Copula

    def __post_init__(self):
        if len(self.margins) != 4:
            raise ValidationError("need four margins")
        for mu, sd in self.margins:
            if not (np.isfinite(mu) and np.isfinite(sd) and sd > 0):
                raise ValidationError(f"bad margin ({mu}, {sd})")

    def free_copulas(self) -> tuple[Copula, ...]:
        return (self.c_s0s1, self.c_t0s1_s0, self.c_s0t1_s1, self.c_t0t1_s0s1)


def _slot_copula(family: str, rho_s: float | None, param: float | None = None) -> Copula:
    if rho_s is None or abs(rho_s) <= _RHO_ZERO or family == "independence":
        return Copula("independence")
    if param is None:
        param = spearman_to_parameter(family, rho_s)
    return Copula(family, param)


def build_vine(
    im: IdentifiableMoments,
    families: tuple[str, str, str, str],
    rho: RhoAssignment,
    *,
    params: tuple[float | None, ...] | None = None,
) -> VineSpec:
    """Assemble a model from data moments, free-slot families, and targets.

    ``params`` can carry pre-calibrated family parameters (same order as
    FREE_SLOTS) to skip the Spearman inversion, e.g. from a calibration
    table shared across a grid.
    """
    if len(families) != len(FREE_SLOTS):
        raise ValidationError(f"need {len(FREE_SLOTS)} slot families")
    for fam, rho_s in zip(families, rho.values):
        if not slot_feasible(fam, rho_s):
            raise ValidationError(f"family {fam!r} cannot hit rho_s {rho_s}")
    if params is None:
        params = (None,) * len(FREE_SLOTS)
    free = tuple(
        _slot_copula(fam, rho_s, param) for fam, rho_s, param in zip(families, rho.values, params)
    )
    margins = (
        (im.mu_t0, float(np.sqrt(im.var_t0))),
        (im.mu_s0, float(np.sqrt(im.var_s0))),
        (im.mu_s1, float(np.sqrt(im.var_s1))),
        (im.mu_t1, float(np.sqrt(im.var_t1))),
    )
    return VineSpec(
        margins=margins,
        c_t0s0=Copula("gaussian", im.rho_t0s0),
        c_s0s1=free[0],
        c_s1t1=Copula("gaussian", im.rho_t1s1),
        c_t0s1_s0=free[1],
        c_s0t1_s1=free[2],
        c_t0t1_s0s1=free[3],
    )


def _dvine_uniforms(spec: VineSpec, w: np.ndarray) -> np.ndarray:
    """Inverse-Rosenblatt transform of iid uniforms into vine uniforms.

    Every conditional CDF along the chain is expressed through h and
    h-inverse of the six pair copulas; all families here are
    exchangeable, so h serves for conditioning on either argument.
    """
    c12, c23, c34 = spec.c_t0s0, spec.c_s0s1, spec.c_s1t1
    c13_2, c24_3, c14_23 = spec.c_t0s1_s0, spec.c_s0t1_s1, spec.c_t0t1_s0s1

    u1 = w[:, 0]
    u2 = copula_h_inverse(c12, w[:, 1], u1)
    a12 = copula_h(c12, u1, u2)  # F(x1 | x2)
    t3 = copula_h_inverse(c13_2, w[:, 2], a12)  # F(x3 | x2)
    u3 = copula_h_inverse(c23, t3, u2)
    f1_23 = copula_h(c13_2, a12, t3)  # F(x1 | x2, x3)
    f2_3 = copula_h(c23, u2, u3)
    t4 = copula_h_inverse(c14_23, w[:, 3], f1_23)  # F(x4 | x2, x3)
    t4 = copula_h_inverse(c24_3, t4, f2_3)  # F(x4 | x3)
    u4 = copula_h_inverse(c34, t4, u3)
    return np.column_stack((u1, u2, u3, u4))


def dvine_sample(spec: VineSpec, n: int, rng) -> np.ndarray:
    """Draw ``n`` outcome rows in VINE_ORDER with the model's normal margins."""
    if n < 1:
        raise ValidationError(f"need n >= 1, got {n}")
    g = as_generator(rng)
    u = _dvine_uniforms(spec, g.random((n, 4)))
    z = ndtri(np.clip(u, 1e-15, 1.0 - 1e-15))
    mu = np.array([m for m, _ in spec.margins])
    sd = np.array([s for _, s in spec.margins])
    return mu + sd * z


def to_canonical(samples: np.ndarray) -> np.ndarray:
    """Reorder vine-order columns (t0, s0, s1, t1) to (t0, t1, s0, s1)."""
    return samples[:, _CANONICAL_FROM_VINE]


# ---------------------------------------------------------------------------
# the 4^4 grid


@dataclass(frozen=True)
class GridRow:
    rho_id: int
    families: tuple[str, str, str, str]  # FREE_SLOTS order
    ica_c: float  # nan when infeasible
    ica_n: float
    feasible: bool

    @property
    def diff(self) -> float:
        return self.ica_c - self.ica_n


@dataclass(frozen=True)
class GridResult:
    scheme: str
    assignments: tuple[RhoAssignment, ...]
    rows: tuple[GridRow, ...]


def _model_key(families, rho: RhoAssignment):
    # canonical identity of a model: independence slots collapse so the
    # family label stops mattering there
    key = []
    for fam, rho_s in zip(families, rho.values):
        if rho_s is None or abs(rho_s) <= _RHO_ZERO:
            key.append(("independence", None))
        else:
            key.append((fam, rho_s))
    return tuple(key)


def build_calibration_table(assignments) -> dict:
    """Pre-solve every (family, rho_s) pair the grid will need."""
    table = {}
    for rho in assignments:
        for rho_s in rho.values:
            if rho_s is None or abs(rho_s) <= _RHO_ZERO:
                continue
            for fam in PARAMETRIC_FAMILIES:
                if slot_feasible(fam, rho_s):
                    table[(fam, rho_s)] = spearman_to_parameter(fam, rho_s)
    return table


def _grid_one_assignment(im, rho_id, rho, base_uniforms, jitter_rng, k_neighbors, table):
    """All 4^4 cells for one rho draw, deduplicated by model identity."""
    combos = list(itertools.product(PARAMETRIC_FAMILIES, repeat=len(FREE_SLOTS)))
    cache: dict = {}
    all_gauss = _model_key(("gaussian",) * 4, rho)

    def compute(key):
        if key in cache:
            return cache[key]
        families = tuple(fam for fam, _ in key)
        params = tuple(None if r is None else table[(fam, r)] for fam, r in key)
        spec = build_vine(im, families, rho, params=params)
        x = _dvine_uniforms(spec, base_uniforms)
        z = ndtri(np.clip(x, 1e-15, 1.0 - 1e-15))
        mu = np.array([m for m, _ in spec.margins])
        sd = np.array([s for _, s in spec.margins])
        y = mu + sd * z
        dt = y[:, 3] - y[:, 0]
        ds = y[:, 2] - y[:, 1]
        mi = knn_mutual_information(dt, ds, k=k_neighbors, rng=jitter_rng)
        cache[key] = ica_from_mi(mi)
        return cache[key]

    ica_n = compute(all_gauss)
    rows = []
    for combo in combos:
        if all(slot_feasible(fam, r) for fam, r in zip(combo, rho.values)):
            ica_c = compute(_model_key(combo, rho))
            rows.append(GridRow(rho_id, combo, ica_c, ica_n, True))
        else:
            rows.append(GridRow(rho_id, combo, float("nan"), ica_n, False))
    return rows


def _grid_block(payload):
    im_json, scheme, seed, stream, ids, values_chunk, table_items, m_y, k_neighbors = payload
    im = IdentifiableMoments.from_json(im_json)
    rng = RngSeed(seed, stream)
    table = dict(table_items)
    out = []
    for rho_id, values in zip(ids, values_chunk):
        rho = RhoAssignment(scheme, values)
        base = rng.generator(_TAG_UNIFORMS, rho_id).random((m_y, 4))
        jitter = rng.generator(_TAG_JITTER, rho_id)
        out.append(_grid_one_assignment(im, rho_id, rho, base, jitter, k_neighbors, table))
    return out


def grid_compare(
    im: IdentifiableMoments,
    scheme: str,
    n_rho: int,
    m_y: int,
    rng: RngSeed,
    *,
    k_neighbors: int = 10,
    rho_lo: float = 0.1,
    rho_hi: float = 0.9,
    threads: int = 1,
) -> GridResult:
    """Paired-ICA table over the family grid for ``n_rho`` Spearman draws.

    Every cell of one draw reuses the same base uniforms, so the
    ICA_C - ICA_N contrast isolates the family choice from Monte Carlo
    noise; the all-gaussian cell is its own pair and differs by zero
    exactly.  Infeasible (family, rho) cells are kept as rows with a
    feasible=False flag and NaN ICA_C.
    """
    if not isinstance(rng, RngSeed):
        raise ValidationError("grid_compare needs an RngSeed for reproducible fan-out")
    if n_rho < 1 or m_y < 8:
        raise ValidationError(f"need n_rho >= 1 and m_y >= 8, got {n_rho}, {m_y}")
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")

    g_assign = rng.generator(_TAG_ASSIGN)
    assignments = tuple(
        sample_rho_assignment(scheme, g_assign, rho_lo=rho_lo, rho_hi=rho_hi) for _ in range(n_rho)
    )
    table = build_calibration_table(assignments)
    table_items = tuple(sorted(table.items()))
    im_json = im.to_json()

    ids = list(range(n_rho))
    payloads = [
        (
            im_json,
            scheme,
            rng.seed,
            rng.stream,
            ids[i :: threads],
            [assignments[j].values for j in ids[i::threads]],
            table_items,
            m_y,
            k_neighbors,
        )
        for i in range(threads)
        if ids[i::threads]
    ]
    if threads == 1:
        blocks = [_grid_block(payloads[0])]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(_grid_block, payloads))

    # stitch chunks back into draw order
    per_id: dict[int, list] = {}
    for payload, block in zip(payloads, blocks):
        for rho_id, rows in zip(payload[4], block):
            per_id[rho_id] = rows
    rows = tuple(itertools.chain.from_iterable(per_id[i] for i in ids))
    return GridResult(scheme=scheme, assignments=assignments, rows=rows)
