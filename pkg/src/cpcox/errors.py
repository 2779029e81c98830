"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit
it as JSON.
"""


class CPCoxError(Exception):
    code = "error"


class EmptyRiskSet(CPCoxError):
    code = "empty_risk_set"


class NoEvents(CPCoxError):
    code = "no_events"


class NonConvergence(CPCoxError):
    code = "non_convergence"


class NonCategorical(CPCoxError):
    code = "non_categorical"


class FitFailed(CPCoxError):
    code = "fit_failed"


class TooManyFailures(CPCoxError):
    code = "too_many_failures"


class EmptyDraws(CPCoxError):
    code = "empty_draws"


class NonDiscreteCovariates(CPCoxError):
    code = "non_discrete_covariates"


class WindowExhausted(CPCoxError):
    code = "window_exhausted"
