"""Instrumental-variables estimation for randomized trials with time-varying,
absorbing exposure.

The package is organised as

``panel``
    participant-by-wave data model, CSV ingest and emit.
``regression``
    OLS / 2SLS with CR1 cluster covariance, Wald, Hansen J and the joint
    2SLS-vs-OLS difference test.
``estimators``
    incremental and cumulative exposure effects, any-exposure IV, as-treated
    OLS and the comparison table.
``characterization``
    complier and always-taker group means, IMCO diagnostic.
``simulation``
    data-generating processes, population oracle and Monte Carlo studies.
"""

from .characterization import (
    EmptyCell,
    GroupMean,
    ThinCell,
    any_exposure_group_means,
    disaggregated_at_nt_mean,
    disaggregated_complier_mean,
    group_means_table,
    imco_diagnostic,
    immediate_at_mean,
    immediate_complier_mean,
    later_at_mean,
    marginal_at_mean,
)
from .estimators import (
    EmptyArm,
    ZeroFirstStage,
    acr_weights,
    any_exposure_iv,
    any_exposure_series,
    any_exposure_stacked,
    as_treated_ols,
    cumulative_effects,
    cumulative_series,
    hausman_table,
    incremental_effects,
    itt,
    wald_late_wave1,
    wave_summary,
)
from .panel import (
    NEVER,
    PanelDataset,
    PanelError,
    ParticipantRecord,
    emit_csv,
    exposure,
    exposure_level,
    ingest_csv,
    ingest_frame,
    validate_panel,
)
from .regression import (
    DesignMatrices,
    EstimateTable,
    NotOverIdentified,
    RankError,
    TestResult,
    hansen_j,
    iv_2sls,
    joint_difference_test,
    ols,
    wald_test,
)
from .simulation import (
    PRESETS,
    ConfigError,
    DgpConfig,
    LatentType,
    mc_study,
    population_oracle,
    population_panel,
    preset,
    sample_dataset,
)

__version__ = "0.1.0"
