PACKAGE_NAME = "aipw_gmm"
ARTIFACT_VERSION = "1.0.0"

# Propensity clamp, overridable through AIPW_GMM_CLAMP_LO / AIPW_GMM_CLAMP_HI.
DEFAULT_CLAMP_LO = 0.01
DEFAULT_CLAMP_HI = 1.0

# Share of observations sitting on the lower clamp before an overlap warning.
OVERLAP_WARNING_SHARE = 0.10
# Share of failed Monte Carlo replications before a report is flagged.
FAILURE_FLAG_SHARE = 0.05

SIEVE_RIDGE_SCALE = 1e-8
WEIGHT_RIDGE_SCALE = 1e-10
MAX_STEP_HALVINGS = 30

DEFAULT_CV_FOLDS = 5
DEFAULT_SEED = 20240101

SIGNIFICANCE_STARS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))
DEPENDENCE_T_THRESHOLD = 1.96

MISSING_PATTERNS = ("M1", "M2", "M3", "M4")
