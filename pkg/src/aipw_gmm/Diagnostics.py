"""
Missingness diagnostics: the pattern table and two regression checks that help choose between MAR and
SMAR. R^Y is regressed on D among rows with the treatment observed; R^D is regressed on Y among rows with
the outcome observed. Both use heteroskedasticity-robust (HC1) standard errors by default.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import statsmodels.api as sm

from .Core.Model import Dataset
from .Utils.Constants import DEPENDENCE_T_THRESHOLD
from .Utils.Errors import PatternSupportError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatternTable:
    counts: Dict[str, int]
    n: int

    @property
    def shares(self) -> Dict[str, float]:
        return {k: (v / self.n if self.n else 0.0) for k, v in self.counts.items()}

    @property
    def monotone(self) -> bool:
        return self.counts["M3"] == 0

    def to_dict(self) -> dict:
        return {"n": self.n, "counts": dict(self.counts), "shares": self.shares, "monotone": self.monotone}


def tabulate_patterns(dataset: Dataset) -> PatternTable:
    codes = dataset.patterns
    return PatternTable(counts={f"M{k}": int(np.sum(codes == k)) for k in range(1, 5)}, n=dataset.n)


@dataclass
class DependenceReport:
    target: str
    key: str
    names: List[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    n_used: int
    cov_type: str
    dropped: List[str] = field(default_factory=list)

    @property
    def key_t(self) -> float:
        return float(self.t_stats[self.names.index(self.key)])

    def rejects(self, threshold: float = DEPENDENCE_T_THRESHOLD) -> bool:
        t = self.key_t
        return bool(np.isfinite(t) and abs(t) > threshold)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "key": self.key,
            "names": self.names,
            "coefficients": self.coefficients.tolist(),
            "std_errors": self.std_errors.tolist(),
            "t_stats": self.t_stats.tolist(),
            "n_used": self.n_used,
            "cov_type": self.cov_type,
            "dropped": self.dropped,
        }


def _independent_columns(design: np.ndarray, names: Sequence[str]) -> Tuple[List[int], List[str]]:
    kept: List[int] = []
    dropped: List[str] = []
    for j in range(design.shape[1]):
        trial = design[:, kept + [j]]
        if np.linalg.matrix_rank(trial) == len(kept) + 1:
            kept.append(j)
        else:
            dropped.append(names[j])
    return kept, dropped


def _controls(dataset: Dataset, covariates: Optional[Sequence[str]]) -> Tuple[np.ndarray, List[str]]:
    zx_names = dataset.zx_names
    columns = list(dataset.conditioning_columns)
    if covariates is not None:
        allowed = set(dataset.z_names) | set(covariates)
        columns = [j for j in columns if zx_names[j] in allowed]
    return dataset.zx[:, columns], [zx_names[j] for j in columns]


def _dependence_regression(target: np.ndarray, key: np.ndarray, target_name: str, key_name: str,
                           controls: np.ndarray, control_names: List[str], robust: bool) -> DependenceReport:
    names = ["const", key_name] + control_names
    design = np.column_stack([np.ones(target.shape[0]), key, controls])
    kept, dropped = _independent_columns(design, names)
    if dropped:
        logger.warning(f"Regression of {target_name} drops collinear column(s): {', '.join(dropped)}.")
    cov_type = "HC1" if robust else "nonrobust"
    fit = sm.OLS(target, design[:, kept]).fit(cov_type=cov_type)

    coefficients = np.full(len(names), np.nan)
    std_errors = np.full(len(names), np.nan)
    coefficients[kept] = fit.params
    std_errors[kept] = fit.bse
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = coefficients / std_errors
    return DependenceReport(target=target_name, key=key_name, names=names, coefficients=coefficients,
                            std_errors=std_errors, t_stats=t_stats, n_used=int(target.shape[0]),
                            cov_type=cov_type, dropped=dropped)


def test_ry_on_d(dataset: Dataset, covariates: Optional[Sequence[str]] = None,
                 robust: bool = True) -> DependenceReport:
    """
    Regresses R^Y on (1, D, Z, X) among rows with R^D = 1. A significant coefficient on D contradicts MAR
    and points to SMAR.

    Args:
        dataset: The sample.
        covariates (optional): Covariate names to control for; defaults to every covariate.
        robust (optional): HC1 standard errors when True, classical ones otherwise.
    """
    rows = dataset.r_d
    if not rows.any():
        raise PatternSupportError(["M1", "M2"], mode="diagnose",
                                  message="No observations with the treatment observed.")
    controls, names = _controls(dataset, covariates)
    return _dependence_regression(dataset.r_y[rows].astype(np.float64), dataset.d_filled[rows], "R^Y",
                                  dataset.d_name, controls[rows], names, robust)


def test_rd_on_y(dataset: Dataset, covariates: Optional[Sequence[str]] = None,
                 robust: bool = True) -> DependenceReport:
    """Regresses R^D on (1, Y, Z, X) among rows with R^Y = 1."""
    rows = dataset.r_y
    if not rows.any():
        raise PatternSupportError(["M1", "M3"], mode="diagnose",
                                  message="No observations with the outcome observed.")
    controls, names = _controls(dataset, covariates)
    return _dependence_regression(dataset.r_d[rows].astype(np.float64), dataset.y_filled[rows], "R^D",
                                  dataset.y_name, controls[rows], names, robust)


# Keep pytest from collecting the two checks above when they are imported into a test module.
test_ry_on_d.__test__ = False
test_rd_on_y.__test__ = False


def recommend_assumption(ry_report: DependenceReport, rd_report: DependenceReport,
                         threshold: float = DEPENDENCE_T_THRESHOLD) -> str:
    """
    'MAR plausible' when neither check rejects, 'SMAR recommended' when only R^Y depends on D, and
    'neither' whenever R^D depends on Y, which both assumptions rule out.
    """
    if rd_report.rejects(threshold):
        return "neither"
    if ry_report.rejects(threshold):
        return "SMAR recommended"
    return "MAR plausible"
