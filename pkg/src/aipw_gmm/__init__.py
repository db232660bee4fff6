from .Internal import (
    estimate,
    simulate,
    diagnose,
    load_csv,
    EstimationOutcome,
    DiagnosisOutcome,
)
from .Core.Model import Dataset, LinearModel, ParametricModel, MissingPattern, classify_pattern
from .Core.Sieve import SieveSpec
from .Core.Nuisance import Assumption, PatternMode
from .Core.Moments import MomentKind
from .Core.GMM import GmmConfig, GmmResult, WeightMode
from .Simulation.DGP import SimScenario
from .Utils.Config import RoleConfig

__all__ = [
    "estimate",
    "simulate",
    "diagnose",
    "load_csv",
    "EstimationOutcome",
    "DiagnosisOutcome",
    "Dataset",
    "LinearModel",
    "ParametricModel",
    "MissingPattern",
    "classify_pattern",
    "SieveSpec",
    "Assumption",
    "PatternMode",
    "MomentKind",
    "GmmConfig",
    "GmmResult",
    "WeightMode",
    "SimScenario",
    "RoleConfig",
]
