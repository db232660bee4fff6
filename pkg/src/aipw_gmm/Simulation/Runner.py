import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .DGP import SimScenario, generate
from ..Core.GMM import GmmConfig, solve
from ..Core.Model import Dataset, LinearModel
from ..Core.Moments import MomentContext, MomentKind, build_context
from ..Core.Nuisance import Assumption, fit_imputations, fit_mechanism
from ..Core.Sieve import fit_intercept_only
from ..Utils.Constants import FAILURE_FLAG_SHARE
from ..Utils.Errors import AipwGmmError, ConfigurationError
from ..Utils.Shared import context

logger = logging.getLogger(__name__)

ESTIMATORS = (MomentKind.CC, MomentKind.IPW, MomentKind.AIPW)


def inject_misspecification(ctx: MomentContext, misspec: str) -> MomentContext:
    """
    Replaces one nuisance with a deliberately wrong version:
    wrong_y_imputations and wrong_d_imputation swap in intercept-only regressions on the same subsamples,
    wrong_py_omits_D refits p_y1 on (Z, X) only.
    """
    if misspec == "none":
        return ctx
    dataset = ctx.dataset
    nuisance = ctx.nuisance
    if misspec in ("wrong_y_imputations", "wrong_d_imputation") and nuisance is None:
        raise ConfigurationError(f"{misspec} needs fitted imputations in the context.")
    zx = dataset.conditioning_inputs(nuisance.zx_columns) if nuisance is not None else None
    y, d = dataset.y_filled, dataset.d_filled

    if misspec == "wrong_y_imputations":
        ey_mask = nuisance.masks["E[Y|Z,X]"]
        m1 = nuisance.masks["E[Y|D,Z,X]"]
        nuisance = replace(
            nuisance,
            e_y_given_zx=fit_intercept_only(y[ey_mask], zx[ey_mask]).with_subsample(ey_mask),
            e_y_given_dzx=fit_intercept_only(y[m1], np.column_stack([d[m1], zx[m1]])).with_subsample(m1),
        )
    elif misspec == "wrong_d_imputation":
        r_d = nuisance.masks["E[D|Z,X]"]
        if nuisance.d_support is not None:
            probs = tuple(
                fit_intercept_only((d[r_d] == v).astype(np.float64), zx[r_d]).with_subsample(r_d)
                for v in nuisance.d_support
            )
            nuisance = replace(nuisance, d_probs=probs)
        else:
            nuisance = replace(nuisance, e_d_given_zx=fit_intercept_only(d[r_d], zx[r_d]).with_subsample(r_d))
    elif misspec == "wrong_py_omits_D":
        mechanism = ctx.require_mechanism()
        # Under MAR the outcome propensity conditions on (Z, X) only; p_d and p_y0 are unchanged.
        refit = fit_mechanism(dataset, Assumption.MAR, ctx.sieve, pattern_mode=ctx.pattern_mode,
                              clamp_bounds=mechanism.clamp_bounds)
        return ctx.with_mechanism(replace(mechanism, p_y1=refit.p_y1))
    else:
        raise ConfigurationError(f"Unknown misspecification {misspec!r}.")
    return replace(ctx, nuisance=nuisance, imputed=nuisance.impute(dataset))


def estimate_replication(dataset: Dataset, scenario: SimScenario) -> Dict[MomentKind, Tuple[np.ndarray, np.ndarray]]:
    """Fits the nuisances once and returns (estimates, standard errors) for CC, IPW and AIPW."""
    spec = LinearModel(n_covariates=dataset.x.shape[1])
    mechanism = fit_mechanism(dataset, scenario.assumption, scenario.sieve)
    nuisance = fit_imputations(dataset, scenario.assumption, scenario.sieve, d_support=(0.0, 1.0))
    ctx = build_context(dataset, spec, scenario.assumption, mechanism=mechanism, nuisance=nuisance,
                        sieve=scenario.sieve)
    ctx = inject_misspecification(ctx, scenario.misspec)
    out = {}
    for kind in ESTIMATORS:
        result = solve(ctx, GmmConfig(kind=kind))
        out[kind] = (result.beta_hat, result.std_errors)
    return out


@dataclass
class EstimatorSummary:
    kind: MomentKind
    mean_estimate: np.ndarray
    mean_bias: np.ndarray
    rmse: np.ndarray
    std_dev: np.ndarray
    mean_std_error: np.ndarray


@dataclass
class SimReport:
    scenario: SimScenario
    estimates: Dict[MomentKind, np.ndarray]
    std_errors: Dict[MomentKind, np.ndarray]
    summaries: Dict[MomentKind, EstimatorSummary]
    replication_ids: np.ndarray
    failures: int = 0
    flagged: bool = False
    failure_messages: List[str] = field(default_factory=list)

    @property
    def truth(self) -> np.ndarray:
        return np.array([self.scenario.alpha_true, self.scenario.beta_true])

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.model_dump(mode="json"),
            "failures": self.failures,
            "flagged": self.flagged,
            "replications_used": int(self.replication_ids.size),
            "estimators": {
                kind.value: {
                    "mean_estimate": s.mean_estimate.tolist(),
                    "mean_bias": s.mean_bias.tolist(),
                    "rmse": s.rmse.tolist(),
                    "std_dev": s.std_dev.tolist(),
                    "mean_std_error": s.mean_std_error.tolist(),
                }
                for kind, s in self.summaries.items()
            },
        }


def summarize(kind: MomentKind, estimates: np.ndarray, std_errors: np.ndarray, truth: np.ndarray) -> EstimatorSummary:
    """Bias and RMSE across replications; RMSE^2 = bias^2 + variance (ddof = 0)."""
    mean = estimates.mean(axis=0)
    bias = mean - truth
    std = estimates.std(axis=0)
    rmse = np.sqrt(((estimates - truth) ** 2).mean(axis=0))
    return EstimatorSummary(kind=kind, mean_estimate=mean, mean_bias=bias, rmse=rmse, std_dev=std,
                            mean_std_error=std_errors.mean(axis=0))


def _run_one(scenario: SimScenario, index: int):
    try:
        return index, estimate_replication(generate(scenario, index), scenario), None
    except (AipwGmmError, np.linalg.LinAlgError) as e:
        return index, None, f"replication {index}: {e}"


def run_scenario(scenario: SimScenario, threads: Optional[int] = None) -> SimReport:
    """
    Runs every replication of the scenario. Replications are independent and seeded by their index, so
    the report does not depend on the thread count. Failed replications are dropped and counted.
    """
    threads = threads or context.threads
    indices = range(scenario.replications)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda i: _run_one(scenario, i), indices))
    else:
        outcomes = [_run_one(scenario, i) for i in indices]

    succeeded = [(i, r) for i, r, _ in sorted(outcomes, key=lambda o: o[0]) if r is not None]
    messages = [m for _, r, m in outcomes if r is None]
    failures = len(messages)
    if not succeeded:
        raise ConfigurationError(f"All {scenario.replications} replications failed; first error: {messages[0]}")
    flagged = failures > FAILURE_FLAG_SHARE * scenario.replications
    if flagged:
        logger.warning(f"{failures} of {scenario.replications} replications failed; the report is flagged.")
    for message in messages[:5]:
        logger.info(message)

    truth = np.array([scenario.alpha_true, scenario.beta_true])
    estimates = {k: np.array([r[k][0] for _, r in succeeded]) for k in ESTIMATORS}
    std_errors = {k: np.array([r[k][1] for _, r in succeeded]) for k in ESTIMATORS}
    summaries = {k: summarize(k, estimates[k], std_errors[k], truth) for k in ESTIMATORS}
    return SimReport(
        scenario=scenario,
        estimates=estimates,
        std_errors=std_errors,
        summaries=summaries,
        replication_ids=np.array([i for i, _ in succeeded]),
        failures=failures,
        flagged=flagged,
        failure_messages=messages,
    )
