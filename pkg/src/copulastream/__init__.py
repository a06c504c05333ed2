"""Streaming Gaussian-copula imputation and correlation change detection."""

__version__ = "0.1.0"

from .copula import (
    ConstantSchedule,
    CopulaModel,
    DecayingSchedule,
    OnlineEmState,
    fit_minibatch,
    fit_offline,
    impute_matrix,
    impute_row,
    load_model,
    mstep_offline,
    online_update,
    save_model,
    scale_to_correlation,
)
from .cpd import (
    CpdResult,
    DetectionRecord,
    FdrState,
    correlation_deviation,
    fdr_alpha,
    mc_cpd_test,
    online_cpd_loop,
    sample_gc_batch,
    sample_gc_row,
)
from .errors import (
    ConfigError,
    CopulaStreamError,
    DataError,
    DomainError,
    MisuseError,
    NotFittedError,
    NumericalError,
    OracleInfeasibleError,
    SchemaError,
)
from .estimator import GaussianCopulaImputer, OnlineChangePointDetector
from .marginals import ColumnKind, LatentRegion, MarginalModel, parse_schema
from .metrics import ScoreReport, mae_rmse, score_report, smae
from .synth import SynthConfig, SynthStream, generate_stream, mask_mnar, random_correlation
from .truncnorm import (
    EStepResult,
    RowObservation,
    row_estep,
    truncmvn_oracle,
    truncnorm_moments,
)

__all__ = [
    "ColumnKind",
    "ConfigError",
    "ConstantSchedule",
    "CopulaModel",
    "CopulaStreamError",
    "CpdResult",
    "DataError",
    "DecayingSchedule",
    "DetectionRecord",
    "DomainError",
    "EStepResult",
    "FdrState",
    "GaussianCopulaImputer",
    "LatentRegion",
    "MarginalModel",
    "MisuseError",
    "NotFittedError",
    "NumericalError",
    "OnlineChangePointDetector",
    "OnlineEmState",
    "OracleInfeasibleError",
    "RowObservation",
    "SchemaError",
    "ScoreReport",
    "SynthConfig",
    "SynthStream",
    "correlation_deviation",
    "fdr_alpha",
    "fit_minibatch",
    "fit_offline",
    "generate_stream",
    "impute_matrix",
    "impute_row",
    "load_model",
    "mae_rmse",
    "mask_mnar",
    "mc_cpd_test",
    "mstep_offline",
    "online_cpd_loop",
    "online_update",
    "parse_schema",
    "random_correlation",
    "row_estep",
    "sample_gc_batch",
    "sample_gc_row",
    "save_model",
    "scale_to_correlation",
    "score_report",
    "smae",
    "truncmvn_oracle",
    "truncnorm_moments",
]
