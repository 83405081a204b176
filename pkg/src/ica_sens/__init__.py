"""Sensitivity analysis for individual-level causal surrogacy measures.

The package quantifies how well a surrogate endpoint tracks a true
endpoint at the individual level when the joint distribution of
potential outcomes is only partially identified by trial data.  It
provides closed-form association indices for normal and heavy-tailed
outcome models, nearest-neighbour mutual-information estimation for
simulated models, samplers over the unidentifiable correlation space,
D-vine copula model grids, and batch commands that write reproducible
CSV/JSON/PNG artifacts under a manifest.

Submodules group the functionality; the names most users need are
re-exported here.
"""

__version__ = "0.1.0"

from .data import (
    IdentifiableMoments,
    MomentSpec,
    TrialDataset,
    complete_moments,
    estimate_identifiable_moments,
    load_dataset,
    synthetic_trial,
)
from .errors import IcaSensError, NumericError, OutputError, ValidationError
from .experiments import (
    COMMANDS,
    CommandResult,
    LogNormalStudyConfig,
    cmd_lognormal_study,
    cmd_rerun,
    cmd_sensitivity,
    cmd_t_curves,
    cmd_vine_grid,
    cmd_zeta_curve,
    default_threads,
    vine_grid_summary,
)
from .ica import (
    DeltaMoments,
    IcaValue,
    delta_from_outcomes,
    delta_moments,
    ica_from_mi,
    ica_normal,
    ica_t,
    knn_mutual_information,
    rho_delta,
    rho_delta_homoscedastic,
    zeta,
)
from .manifest import ExperimentManifest, config_hash, file_digest, load_manifest, write_manifest
from .rng import RngSeed
from .samplers import (
    CholeskyFactor,
    mvlognormal_sample,
    mvn_sample,
    mvt_sample,
    pd_check,
    wishart_sample,
)
from .sensitivity import (
    IcaDistribution,
    SensitivityConfig,
    ThetaScheme,
    ThetaU,
    run_sensitivity,
    sample_theta_u,
    summarize,
)
from .stats import energy_statistic, energy_two_sample
from .vine import (
    FREE_SLOTS,
    SCHEMES,
    VINE_ORDER,
    GridResult,
    GridRow,
    RhoAssignment,
    VineSpec,
    build_vine,
    dvine_sample,
    grid_compare,
    sample_rho_assignment,
    slot_feasible,
    to_canonical,
)

__all__ = [
    "__version__",
    # errors
    "IcaSensError",
    "ValidationError",
    "NumericError",
    "OutputError",
    # reproducible randomness
    "RngSeed",
    # association indices
    "DeltaMoments",
    "IcaValue",
    "delta_from_outcomes",
    "delta_moments",
    "ica_from_mi",
    "ica_normal",
    "ica_t",
    "knn_mutual_information",
    "rho_delta",
    "rho_delta_homoscedastic",
    "zeta",
    # trial data and moment completion
    "TrialDataset",
    "IdentifiableMoments",
    "MomentSpec",
    "load_dataset",
    "estimate_identifiable_moments",
    "complete_moments",
    "synthetic_trial",
    # samplers
    "CholeskyFactor",
    "pd_check",
    "mvn_sample",
    "mvt_sample",
    "mvlognormal_sample",
    "wishart_sample",
    # sensitivity analysis
    "ThetaU",
    "ThetaScheme",
    "SensitivityConfig",
    "IcaDistribution",
    "sample_theta_u",
    "run_sensitivity",
    "summarize",
    # two-sample diagnostics
    "energy_statistic",
    "energy_two_sample",
    # D-vine copula grids
    "VINE_ORDER",
    "FREE_SLOTS",
    "SCHEMES",
    "RhoAssignment",
    "VineSpec",
    "sample_rho_assignment",
    "slot_feasible",
    "build_vine",
    "dvine_sample",
    "to_canonical",
    "GridRow",
    "GridResult",
    "grid_compare",
    # batch commands and manifests
    "COMMANDS",
    "CommandResult",
    "LogNormalStudyConfig",
    "cmd_zeta_curve",
    "cmd_t_curves",
    "cmd_lognormal_study",
    "cmd_sensitivity",
    "cmd_vine_grid",
    "cmd_rerun",
    "default_threads",
    "vine_grid_summary",
    "ExperimentManifest",
    "config_hash",
    "file_digest",
    "load_manifest",
    "write_manifest",
]
