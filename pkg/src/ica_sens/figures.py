"""Figure rendering for the batch commands.

Each helper takes plain arrays and writes one PNG next to the CSV it
illustrates.  matplotlib is imported lazily with the Agg backend so
headless runs work and ``--no-figures`` runs never pay the import.
PNG metadata is pinned so identical inputs give identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import OutputError

_PNG_META = {"Software": "ica-sens"}
_DPI = 120


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    try:
        fig.savefig(path, dpi=_DPI, metadata=_PNG_META)
    except OSError as e:
        raise OutputError(f"cannot write figure {path}: {e}") from e
    finally:
        _plt().close(fig)
    return path


def fig_zeta_curve(nu: np.ndarray, zeta: np.ndarray, path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(nu, zeta, color="tab:blue")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("degrees of freedom")
    ax.set_ylabel("mutual-information excess of the t pair")
    ax.set_title("Tail-weight correction vs degrees of freedom")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, Path(path))


def fig_t_curves(
    nu_list: list, rho_sq: np.ndarray, ica_t: np.ndarray, ica_n: np.ndarray, path
) -> Path:
    """One panel: agreement curves for t pairs, identity for the normal."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for i, nu in enumerate(nu_list):
        ax.plot(ica_n[i], ica_t[i], label=f"t pair, df={nu:g}")
    lo, hi = 0.0, 1.0
    ax.plot([lo, hi], [lo, hi], color="black", lw=0.8, ls="--", label="normal pair")
    _ = rho_sq
    ax.set_xlabel("normal-pair agreement index")
    ax.set_ylabel("t-pair agreement index")
    ax.set_title("Heavy tails inflate the agreement index")
    ax.legend(frameon=False, fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, Path(path))


def fig_lognormal_study(ica_n: np.ndarray, d: np.ndarray, path) -> Path:
    plt = _plt()
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0))
    axes[0].scatter(ica_n, d, s=12, alpha=0.6, color="tab:blue")
    axes[0].axhline(0.0, color="black", lw=0.8)
    axes[0].set_xlabel("normal-theory agreement index")
    axes[0].set_ylabel("estimated minus normal-theory index")
    axes[0].set_title("Skewed-outcome excess per setting")
    axes[0].grid(True, alpha=0.3)
    axes[1].hist(d[np.isfinite(d)], bins=30, color="tab:blue", alpha=0.8)
    axes[1].axvline(0.0, color="black", lw=0.8)
    axes[1].set_xlabel("estimated minus normal-theory index")
    axes[1].set_ylabel("settings")
    axes[1].set_title("Distribution of the excess")
    axes[1].grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, Path(path))


def fig_sensitivity_hist(ica: np.ndarray, path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(ica, bins=40, color="tab:blue", alpha=0.85)
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("agreement index")
    ax.set_ylabel("replicates")
    ax.set_title("Agreement index under sampled unidentified correlations")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, Path(path))


def fig_vine_grid(ica_n: np.ndarray, diff: np.ndarray, path) -> Path:
    """Scatter of copula-vs-normal gap against the all-normal index."""
    plt = _plt()
    ok = np.isfinite(ica_n) & np.isfinite(diff)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.scatter(ica_n[ok], diff[ok], s=4, alpha=0.25, color="tab:blue")
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel("all-normal agreement index")
    ax.set_ylabel("copula-cell index minus all-normal index")
    ax.set_title("Dependence-shape sensitivity across copula cells")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, Path(path))
