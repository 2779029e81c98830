"""Change-point Cox regression, bootstrap intervals for the change point and
the limiting law of its estimator."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .bootstrap import (BootstrapConfig, BootstrapDraws, ConfidenceInterval, percentile_ci,
                        resample_classical, resample_conditional, run_bootstrap)
from .data import (ChangePointParams, CovariatePath, Dataset, Subject, event_times,
                   read_dataset, risk_set, write_dataset)
from .errors import CPCoxError
from .estimators import (CensoringEstimate, FittedModel, SmoothHazard, StepCumHazard, breslow,
                         conditional_survival_smooth, conditional_survival_step,
                         kernel_smooth_hazard, km_censoring, sample_censoring)
from .harness import CoverageRow, ExperimentSpec, km_curves, run_experiment
from .likelihood import (FitResult, ProfileFitConfig, fit_mple, log_partial_likelihood,
                         s_nk, score_and_hessian)
from .limit_law import LimitDraw, LimitLawConfig, derive_limit_config, sample_limit
from .simulate import ScenarioConfig, sample_dataset, sample_survival_time
