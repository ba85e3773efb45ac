"""Progression models for repeated measures.

Maximum-likelihood estimation of continuous-time nonlinear mean structures
with an unstructured residual covariance, the categorical-visit baseline
model they extend, inference on treatment effects quantified on the outcome
or the time axis, and a Monte-Carlo trial-simulation harness for power,
type-1-error, coverage, and estimate-distribution studies.
"""

__version__ = "0.1.0"

from .data import (
    SubjectRecord,
    TrialDataset,
    VisitSchedule,
    load_long_csv,
    observed_rows,
    write_long_csv,
)
from .errors import (
    ContractError,
    EvaluationError,
    FitError,
    InitializationError,
    ParseError,
    PmrmError,
    SingularInformationError,
    ValidationError,
)
from .estimation import (
    CovarianceSpec,
    FitOptions,
    FitResult,
    fit_model,
    log_likelihood,
    standard_errors,
)
from .harness import (
    METHODS,
    StudyConfig,
    StudyReport,
    coverage_summary,
    derive_true_time_effect,
    emit_report,
    load_report,
    recalibrate_cutoffs,
    run_study,
)
from .inference import (
    TestResult,
    auc_contrast,
    lrt_proportional_slowing,
    type3_treatment_test,
    wald_test,
)
from .interpolation import Interpolant, build_interpolant, evaluate
from .models import (
    MeanModelSpec,
    ParameterVector,
    design_vector,
    initial_parameters,
    mean_value,
)
from .simulation import (
    Cs1Scenario,
    PoolScenario,
    apply_effect_mean_level,
    apply_effect_subject_level,
    cs1_active_means,
    cs3_improvement_trial,
    cs3_subgroup_trial,
    estimate_pool_deltas,
    generate_cs1_trial,
    resample_pool,
    synthetic_pool,
)
