# Logging first, so every submodule logger inherits the handler.
import logging

logging.basicConfig(level=logging.INFO, format="%(message)s", datefmt="[%X]")
logger = logging.getLogger(__name__)

import os
from dataclasses import dataclass, field
from os import PathLike
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .Core.GMM import GmmConfig, GmmResult, WeightMode, solve
from .Core.Model import Dataset, LinearModel, ModelSpec
from .Core.Moments import MomentKind, build_context
from .Core.Nuisance import (
    Assumption, NuisanceFit, OutcomeSource, PatternMode, SieveChoice, check_pattern_support, fit_imputations,
    fit_mechanism,
)
from .Core.Sieve import RateGuard, SieveSpec, rate_guard
from .Diagnostics import (
    DependenceReport, PatternTable, recommend_assumption, tabulate_patterns, test_rd_on_y, test_ry_on_d,
)
from .IO.Ingest import ingest
from .Simulation.DGP import SimScenario, preset_scenarios
from .Simulation.Runner import SimReport, run_scenario
from .Utils.Aliases import assumption_map, estimator_map, normalize_alias
from .Utils.Config import RoleConfig
from .Utils.Constants import DEFAULT_CV_FOLDS
from .Utils.Errors import ConfigurationError, PatternSupportError


@dataclass
class EstimationOutcome:
    result: GmmResult
    patterns: PatternTable
    assumption: Assumption
    pattern_mode: PatternMode
    sieve_specs: Dict[str, str] = field(default_factory=dict)
    rate_advisories: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "estimates": self.result.to_dict(),
            "patterns": self.patterns.to_dict(),
            "assumption": self.assumption.value,
            "pattern_mode": self.pattern_mode.value,
            "sieve_specs": dict(self.sieve_specs),
            "rate_advisories": list(self.rate_advisories),
            "notes": list(self.notes),
        }


@dataclass
class DiagnosisOutcome:
    patterns: PatternTable
    ry_on_d: Optional[DependenceReport]
    rd_on_y: Optional[DependenceReport]
    recommendation: str
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "patterns": self.patterns.to_dict(),
            "ry_on_d": None if self.ry_on_d is None else self.ry_on_d.to_dict(),
            "rd_on_y": None if self.rd_on_y is None else self.rd_on_y.to_dict(),
            "recommendation": self.recommendation,
            "notes": list(self.notes),
        }


def load_csv(csv_path: Union[str, PathLike], roles: Union[RoleConfig, dict]) -> Dataset:
    """
    Loads a CSV file with the given column roles.

    Args:
        csv_path (str | PathLike): UTF-8 CSV with a header row.
        roles (RoleConfig | dict): Outcome, treatment, instruments, covariates and missing-value tokens.
    """
    if isinstance(roles, dict):
        roles = RoleConfig(**roles)
    return ingest(os.fspath(csv_path), roles)


def _rate_advisories(nuisance: NuisanceFit) -> List[str]:
    advisories = []
    fits = [("E[Y|Z,X]", nuisance.e_y_given_zx), ("E[Y|D,Z,X]", nuisance.e_y_given_dzx)]
    if nuisance.e_d_given_zx is not None:
        fits.append(("E[D|Z,X]", nuisance.e_d_given_zx))
    for label, fit in fits:
        if fit.subsample is None:
            continue
        guard: RateGuard = rate_guard(int(fit.subsample.sum()), fit.K, len(fit.input_columns), fit.spec.eta)
        if not guard.ok:
            advisories.append(f"{label}: {guard.message}")
    return advisories


def estimate(
        dataset: Dataset,
        assumption: Union[str, Assumption] = Assumption.SMAR,
        estimator: Union[str, MomentKind] = MomentKind.AIPW,
        sieve: SieveChoice = SieveSpec(),
        d_support: Optional[Sequence[float]] = None,
        pattern_mode: Union[str, PatternMode] = PatternMode.STRICT,
        weight_mode: Union[str, WeightMode] = WeightMode.OPTIMAL_TWO_STEP,
        ey_source: Union[str, OutcomeSource] = OutcomeSource.INCOMPLETE_D,
        clamp_bounds: Optional[Tuple[float, float]] = None,
        model: Optional[ModelSpec] = None,
        cv_folds: int = DEFAULT_CV_FOLDS,
        seed: int = 0,
        max_iterations: int = 100,
        tolerance: float = 1e-10,
) -> EstimationOutcome:
    """
    Estimates the structural parameters with the complete-case, IPW or AIPW moment.

    Args:
        dataset (Dataset): The sample.
        assumption (str | Assumption, optional): 'MAR' or 'SMAR'. Defaults to SMAR.
        estimator (str | MomentKind, optional): 'CC', 'IPW' or 'AIPW'. Defaults to AIPW.
        sieve (SieveSpec | list[SieveSpec], optional): Basis for every nuisance regression, or candidates
            to choose from by cross-validation.
        d_support (list[float], optional): Support of a discrete treatment; imputations then integrate over
            it.
        pattern_mode (str | PatternMode, optional): 'strict' needs all four missingness patterns; 'general'
            switches AIPW to the variant that tolerates empty patterns.
        weight_mode (str | WeightMode, optional): GMM weighting. Defaults to the optimal two-step weight.
        ey_source (str | OutcomeSource, optional): Subsample for E[Y | Z, X].
        clamp_bounds (tuple[float, float], optional): Propensity clamp; defaults to the environment.
        model (ModelSpec, optional): Structural model; defaults to g = beta_D d + x' beta_X.
    """
    assumption = Assumption(normalize_alias(assumption_map, assumption))
    kind = MomentKind(normalize_alias(estimator_map, estimator))
    pattern_mode = PatternMode(pattern_mode)
    if kind == MomentKind.AIPW and pattern_mode == PatternMode.GENERAL:
        kind = MomentKind.AIPW_GENERAL
    spec = model or LinearModel(n_covariates=dataset.x.shape[1])
    if spec.beta_dim > dataset.z.shape[1]:
        raise ConfigurationError(
            f"{dataset.z.shape[1]} instrument column(s) cannot identify {spec.beta_dim} parameters; add instruments "
            "or use covariates as instruments."
        )
    patterns = tabulate_patterns(dataset)
    notes: List[str] = []
    sieve_specs: Dict[str, str] = {}
    advisories: List[str] = []

    mechanism = None
    nuisance = None
    if kind != MomentKind.CC:
        mechanism = fit_mechanism(dataset, assumption, sieve, pattern_mode=pattern_mode,
                                  clamp_bounds=clamp_bounds, cv_folds=cv_folds, seed=seed)
        sieve_specs.update({k: v.label() for k, v in mechanism.specs.items()})
    else:
        check_pattern_support(dataset, PatternMode.GENERAL)
    if kind.augmented:
        nuisance = fit_imputations(dataset, assumption, sieve, d_support=d_support, ey_source=ey_source,
                                   pattern_mode=pattern_mode, cv_folds=cv_folds, seed=seed)
        sieve_specs.update({k: v.label() for k, v in nuisance.specs.items()})
        advisories = _rate_advisories(nuisance)
        if nuisance.ey_source != OutcomeSource(ey_source):
            notes.append(f"E[Y|Z,X] fell back to the '{nuisance.ey_source.value}' subsample.")
        if assumption == Assumption.SMAR:
            notes.append("Standard errors include the correction for the estimated outcome propensity under SMAR.")
    if kind == MomentKind.AIPW_GENERAL:
        notes.append("General-pattern AIPW moment in use.")
    if assumption == Assumption.SMAR and kind != MomentKind.CC and not dataset.r_y[dataset.r_d].all():
        if not test_ry_on_d(dataset).rejects():
            notes.append("R^Y does not depend on D among rows with D observed; MAR would also be valid and "
                         "is more efficient.")

    ctx = build_context(dataset, spec, assumption, mechanism=mechanism, nuisance=nuisance, sieve=sieve,
                        pattern_mode=pattern_mode)
    config = GmmConfig(kind=kind, weight_mode=WeightMode(weight_mode), max_iterations=max_iterations,
                       tolerance=tolerance)
    result = solve(ctx, config)
    if not result.converged:
        notes.append("The optimizer did not converge; treat the estimates with caution.")
    return EstimationOutcome(result=result, patterns=patterns, assumption=assumption, pattern_mode=pattern_mode,
                             sieve_specs=sieve_specs, rate_advisories=advisories, notes=notes)


def simulate(
        scenario: Union[SimScenario, str, None] = None,
        threads: Optional[int] = None,
        **overrides,
) -> List[SimReport]:
    """
    Runs Monte Carlo scenarios.

    Args:
        scenario (SimScenario | str, optional): A scenario, or the name of a preset ('table1', 'table2').
            Defaults to a single scenario built from the overrides.
        threads (int, optional): Worker threads; defaults to AIPW_GMM_THREADS or 1.
        **overrides: SimScenario fields applied to every scenario.
    """
    if isinstance(scenario, str):
        scenarios = preset_scenarios(scenario, **overrides)
    elif scenario is None:
        scenarios = [SimScenario(**overrides)]
    else:
        scenarios = [SimScenario(**{**scenario.model_dump(), **overrides})] if overrides else [scenario]
    reports = []
    for item in scenarios:
        logger.info(f"Simulating gamma={item.gamma:g}, n={item.n}, R={item.replications}, misspec={item.misspec}.")
        reports.append(run_scenario(item, threads=threads))
    return reports


def diagnose(
        dataset: Dataset,
        covariates: Optional[Sequence[str]] = None,
        robust: bool = True,
) -> DiagnosisOutcome:
    """
    Tabulates missingness patterns and runs the two dependence regressions.

    Args:
        dataset (Dataset): The sample.
        covariates (list[str], optional): Covariates to control for; defaults to all.
        robust (bool, optional): HC1 standard errors when True (default), classical otherwise.
    """
    patterns = tabulate_patterns(dataset)
    notes: List[str] = []
    if patterns.counts["M1"] == patterns.n:
        notes.append("No missingness detected; CC is unbiased and efficient here.")
        return DiagnosisOutcome(patterns=patterns, ry_on_d=None, rd_on_y=None,
                                recommendation="no missingness", notes=notes)
    if patterns.monotone:
        notes.append("Missingness is monotone (no outcome observed without the treatment); "
                     "use the general pattern mode to estimate.")

    ry_on_d = rd_on_y = None
    try:
        ry_on_d = test_ry_on_d(dataset, covariates, robust)
    except PatternSupportError as e:
        logger.warning(str(e))
    try:
        rd_on_y = test_rd_on_y(dataset, covariates, robust)
    except PatternSupportError as e:
        logger.warning(str(e))
    if ry_on_d is None or rd_on_y is None:
        recommendation = "undetermined"
    else:
        recommendation = recommend_assumption(ry_on_d, rd_on_y)
    return DiagnosisOutcome(patterns=patterns, ry_on_d=ry_on_d, rd_on_y=rd_on_y, recommendation=recommendation,
                            notes=notes)
