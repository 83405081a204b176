"""Two-sample energy test for equality of multivariate distributions."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ValidationError
from .samplers import as_generator


def energy_statistic(x: np.ndarray, y: np.ndarray) -> float:
    """Scaled E-statistic mn/(m+n) * (2 E|X-Y| - E|X-X'| - E|Y-Y'|)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m, n = len(x), len(y)
    d_xy = cdist(x, y).mean()
    d_xx = cdist(x, x).sum() / (m * m)
    d_yy = cdist(y, y).sum() / (n * n)
    return m * n / (m + n) * (2.0 * d_xy - d_xx - d_yy)


def energy_two_sample(
    x: np.ndarray,
    y: np.ndarray,
    rng,
    *,
    n_permutations: int = 199,
    max_per_group: int = 1500,
) -> tuple[float, float]:
    """Permutation p-value for H0: X and Y share one distribution.

    Groups larger than ``max_per_group`` are subsampled without
    replacement to bound the O(N^2) distance matrix.  The returned
    p-value uses the add-one convention (1 + #{T_perm >= T_obs}) /
    (n_permutations + 1), which is exact-level under H0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValidationError(f"incompatible sample shapes {x.shape}, {y.shape}")
    if len(x) < 2 or len(y) < 2:
        raise ValidationError("need at least two points per group")
    if n_permutations < 1:
        raise ValidationError(f"need n_permutations >= 1, got {n_permutations}")
    g = as_generator(rng)
    if len(x) > max_per_group:
        x = x[g.choice(len(x), max_per_group, replace=False)]
    if len(y) > max_per_group:
        y = y[g.choice(len(y), max_per_group, replace=False)]

    m, n = len(x), len(y)
    z = np.concatenate([x, y])
    d = cdist(z, z)
    row_sum = d.sum(axis=1)
    total = row_sum.sum()

    def stat_from_mask(a):
        # a: (k, N) 0/1 matrix selecting the first group per permutation
        ad = a @ d
        s_xx = (ad * a).sum(axis=1)
        s_x_all = a @ row_sum
        s_xy = s_x_all - s_xx
        s_yy = total - 2.0 * s_x_all + s_xx
        t = 2.0 * s_xy / (m * n) - s_xx / (m * m) - s_yy / (n * n)
        return m * n / (m + n) * t

    obs = stat_from_mask(np.concatenate([np.ones(m), np.zeros(n)])[None, :])[0]

    masks = np.zeros((n_permutations, m + n))
    for i in range(n_permutations):
        masks[i, g.choice(m + n, m, replace=False)] = 1.0
    perm = stat_from_mask(masks)
    p = (1.0 + np.count_nonzero(perm >= obs)) / (n_permutations + 1.0)
    return float(obs), float(p)
