"""Trial data, identifiable moments, and completed joint-moment models.

The estimable side of a two-arm trial with a true endpoint T and a
surrogate S consists of the per-arm means and variances of both
endpoints and the within-arm correlations rho(T0, S0) and rho(T1, S1).
Because each patient is observed under one treatment only, the four
cross-arm correlations are not estimable; :func:`complete_moments`
combines the estimable part with a candidate for those four values into
a full mean vector and covariance matrix on the vector
(T0, T1, S0, S1).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import OutputError, ValidationError
from .samplers import as_generator, pd_check

# Canonical component order used for all 4-dimensional moment objects.
COMPONENTS = ("t0", "t1", "s0", "s1")

# Default column mapping for the vision-trial CSV layout
# (id, treat, diff24, diff52): the week-52 change is the true endpoint,
# the week-24 change the surrogate.
DEFAULT_COLUMNS = {"id": "id", "treat": "treat", "true": "diff52", "surrogate": "diff24"}


@dataclass(frozen=True)
class TrialDataset:
    """Per-patient observations from a two-arm trial."""

    treat: np.ndarray
    true_outcome: np.ndarray
    surrogate: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        treat = np.asarray(self.treat)
        t = np.asarray(self.true_outcome, dtype=float)
        s = np.asarray(self.surrogate, dtype=float)
        if not (len(treat) == len(t) == len(s)):
            raise ValidationError("treat, true_outcome and surrogate must have equal length")
        if len(treat) == 0:
            raise ValidationError("dataset is empty")
        if not np.isin(treat, (0, 1)).all():
            raise ValidationError("treat must contain only 0 (control) and 1 (treated)")
        if not (np.isfinite(t).all() and np.isfinite(s).all()):
            raise ValidationError("outcome columns contain non-finite values")
        for arm in (0, 1):
            if int((treat == arm).sum()) < 2:
                raise ValidationError(f"arm {arm} needs at least 2 observations")
        object.__setattr__(self, "treat", treat.astype(np.int8))
        object.__setattr__(self, "true_outcome", t)
        object.__setattr__(self, "surrogate", s)

    def arm(self, which: int):
        """Return (true, surrogate) arrays for one arm."""
        mask = self.treat == which
        return self.true_outcome[mask], self.surrogate[mask]

    @property
    def n_per_arm(self):
        return int((self.treat == 0).sum()), int((self.treat == 1).sum())


def _map_treat(raw):
    values = sorted(set(raw))
    if set(values) <= {0, 1}:
        return {0: 0, 1: 1}
    if values == [-1, 1]:
        return {-1: 0, 1: 1}
    if values == [1, 2]:
        return {1: 0, 2: 1}
    raise ValidationError(
        f"cannot infer treatment coding from values {values}; pass treat_map explicitly"
    )


def load_dataset(path, columns=None, row_filter=None, treat_map=None) -> TrialDataset:
    """Load a trial CSV.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row.
    columns : dict, optional
        Mapping with keys ``treat``, ``true``, ``surrogate`` and
        optionally ``id``, giving the corresponding header names.
        Defaults to the vision-trial layout (treat, diff52, diff24, id).
    row_filter : callable, optional
        Called with each row as a dict of raw strings; rows for which it
        returns falsy are skipped.
    treat_map : dict, optional
        Explicit mapping from raw treatment codes (as integers) to 0/1.
        When omitted, the codings {0,1}, {-1,1} and {1,2} are recognized.

    Rows with an empty treatment, true or surrogate field are dropped.
    """
    spec = dict(DEFAULT_COLUMNS)
    if columns:
        spec.update(columns)
    for key in ("treat", "true", "surrogate"):
        if key not in spec or not spec[key]:
            raise ValidationError(f"column mapping is missing {key!r}")

    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read dataset: {exc}") from exc

    treat_raw, t_vals, s_vals, ids = [], [], [], []
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("treat", "true", "surrogate"):
            if spec[key] not in header:
                raise ValidationError(f"column {spec[key]!r} not found in {list(header)}")
        has_id = spec.get("id") in header
        for row in reader:
            if row_filter is not None and not row_filter(row):
                continue
            raw = [row[spec["treat"]], row[spec["true"]], row[spec["surrogate"]]]
            if any(v is None or v.strip() == "" for v in raw):
                continue
            try:
                treat_raw.append(int(float(raw[0])))
                t_vals.append(float(raw[1]))
                s_vals.append(float(raw[2]))
            except ValueError as exc:
                raise ValidationError(f"malformed row {row!r}: {exc}") from exc
            if has_id:
                ids.append(row[spec["id"]])

    if not treat_raw:
        raise ValidationError("no usable rows after filtering")
    mapping = dict(treat_map) if treat_map else _map_treat(treat_raw)
    try:
        treat = np.array([mapping[v] for v in treat_raw], dtype=np.int8)
    except KeyError as exc:
        raise ValidationError(f"treatment code {exc} missing from treat_map") from exc

    id_arr = np.array(ids) if ids else None
    return TrialDataset(treat=treat, true_outcome=np.array(t_vals), surrogate=np.array(s_vals), ids=id_arr)


@dataclass(frozen=True)
class IdentifiableMoments:
    """Estimable first and second moments of a two-arm trial."""

    mu_t0: float
    mu_t1: float
    mu_s0: float
    mu_s1: float
    var_t0: float
    var_t1: float
    var_s0: float
    var_s1: float
    rho_t0s0: float
    rho_t1s1: float
    n0: int
    n1: int

    def __post_init__(self):
        for name in ("var_t0", "var_t1", "var_s0", "var_s1"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("rho_t0s0", "rho_t1s1"):
            r = getattr(self, name)
            if not -1.0 < r < 1.0:
                raise ValidationError(f"{name} must lie in (-1, 1), got {r}")
        if self.n0 < 0 or self.n1 < 0:
            raise ValidationError("arm sizes must be non-negative")

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IdentifiableMoments":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid moments JSON: {exc}") from exc
        names = {f.name for f in fields(cls)}
        unknown = set(payload) - names
        if unknown:
            raise ValidationError(f"unknown moment fields: {sorted(unknown)}")
        missing = names - set(payload)
        if missing:
            raise ValidationError(f"missing moment fields: {sorted(missing)}")
        return cls(**payload)


def estimate_identifiable_moments(ds: TrialDataset) -> IdentifiableMoments:
    """Sample means, variances (ddof=1) and within-arm correlations."""
    t0, s0 = ds.arm(0)
    t1, s1 = ds.arm(1)

    def corr(a, b):
        sa, sb = a.std(ddof=1), b.std(ddof=1)
        if sa == 0.0 or sb == 0.0:
            raise ValidationError("degenerate (constant) outcome column in one arm")
        r = float(np.corrcoef(a, b)[0, 1])
        # guard against rounding just outside the open interval
        return min(max(r, -1.0 + 1e-15), 1.0 - 1e-15)

    return IdentifiableMoments(
        mu_t0=float(t0.mean()),
        mu_t1=float(t1.mean()),
        mu_s0=float(s0.mean()),
        mu_s1=float(s1.mean()),
        var_t0=float(t0.var(ddof=1)),
        var_t1=float(t1.var(ddof=1)),
        var_s0=float(s0.var(ddof=1)),
        var_s1=float(s1.var(ddof=1)),
        rho_t0s0=corr(t0, s0),
        rho_t1s1=corr(t1, s1),
        n0=ds.n_per_arm[0],
        n1=ds.n_per_arm[1],
    )


@dataclass(frozen=True)
class MomentSpec:
    """Complete mean vector and covariance on (T0, T1, S0, S1).

    The correlation matrix is stored alongside the covariance so that
    correlations put in by :func:`complete_moments` can be read back
    bit for bit, without a round trip through products of standard
    deviations.
    """

    mu: np.ndarray
    sigma: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        corr = np.asarray(self.corr, dtype=float)
        if mu.shape != (4,) or sigma.shape != (4, 4) or corr.shape != (4, 4):
            raise ValidationError("MomentSpec requires mu (4,), sigma (4,4), corr (4,4)")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "corr", corr)

    @property
    def sds(self):
        return np.sqrt(self.sigma.diagonal())

    def rho(self, a: str, b: str) -> float:
        i, j = COMPONENTS.index(a), COMPONENTS.index(b)
        return float(self.corr[i, j])

    def is_pd(self) -> bool:
        return pd_check(self.sigma) is not None


def complete_moments(im: IdentifiableMoments, theta) -> MomentSpec:
    """Assemble full moments from the estimable part plus four candidate
    cross-arm correlations.

    ``theta`` may be a :class:`~ica_sens.sensitivity.ThetaU` or any
    object with fields rho_t1s0, rho_t0s1, rho_t0t1, rho_s0s1.  The
    result is not guaranteed to be positive definite; use
    :func:`~ica_sens.samplers.pd_check` to decide admissibility.
    """
    for name in ("rho_t1s0", "rho_t0s1", "rho_t0t1", "rho_s0s1"):
        r = getattr(theta, name)
        if not -1.0 <= r <= 1.0:
            raise ValidationError(f"{name} must lie in [-1, 1], got {r}")

    corr = np.eye(4)

    def put(a, b, value):
        i, j = COMPONENTS.index(a), COMPONENTS.index(b)
        corr[i, j] = corr[j, i] = value

    put("t0", "s0", im.rho_t0s0)
    put("t1", "s1", im.rho_t1s1)
    put("t1", "s0", theta.rho_t1s0)
    put("t0", "s1", theta.rho_t0s1)
    put("t0", "t1", theta.rho_t0t1)
    put("s0", "s1", theta.rho_s0s1)

    sd = np.sqrt(np.array([im.var_t0, im.var_t1, im.var_s0, im.var_s1]))
    sigma = corr * np.outer(sd, sd)
    mu = np.array([im.mu_t0, im.mu_t1, im.mu_s0, im.mu_s1])
    return MomentSpec(mu=mu, sigma=sigma, corr=corr)


def synthetic_trial(n0, n1, mu_t, mu_s, sd_t, sd_s, rho0, rho1, rng) -> TrialDataset:
    """Generate a two-arm dataset with bivariate normal (T, S) per arm.

    ``mu_t``, ``mu_s``, ``sd_t``, ``sd_s`` are (control, treated) pairs;
    ``rho0`` and ``rho1`` are the within-arm correlations.  Useful for
    demos and as a stand-in for trial data of the vision-trial shape.
    """
    g = as_generator(rng)
    cols = {"treat": [], "t": [], "s": []}
    for arm, n, rho in ((0, n0, rho0), (1, n1, rho1)):
        if not -1.0 < rho < 1.0:
            raise ValidationError("within-arm correlations must lie in (-1, 1)")
        z = g.standard_normal((n, 2))
        t = mu_t[arm] + sd_t[arm] * z[:, 0]
        s = mu_s[arm] + sd_s[arm] * (rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1])
        cols["treat"].extend([arm] * n)
        cols["t"].extend(t.tolist())
        cols["s"].extend(s.tolist())
    return TrialDataset(
        treat=np.array(cols["treat"]),
        true_outcome=np.array(cols["t"]),
        surrogate=np.array(cols["s"]),
        ids=np.arange(1, n0 + n1 + 1),
    )
