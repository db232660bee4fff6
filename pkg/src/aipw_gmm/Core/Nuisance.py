import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .Model import Dataset, ModelSpec, pattern_codes
from .Sieve import SievePredictor, SieveSpec, cross_validate, fit_least_squares
from ..Utils.Constants import DEFAULT_CV_FOLDS, OVERLAP_WARNING_SHARE
from ..Utils.Errors import ConfigurationError, InvariantViolation, PatternSupportError, UnsupportedModelError
from ..Utils.Shared import check_clamp_bounds, context

logger = logging.getLogger(__name__)

SieveChoice = Union[SieveSpec, Sequence[SieveSpec]]


class Assumption(str, Enum):
    MAR = "MAR"
    SMAR = "SMAR"


class PatternMode(str, Enum):
    STRICT = "strict"
    GENERAL = "general"


class OutcomeSource(str, Enum):
    """Subsample used to estimate E[Y | Z, X]."""
    INCOMPLETE_D = "incomplete_d"  # R^D = 0, R^Y = 1
    COMPLETE_CASE = "complete_case"  # R^D = 1, R^Y = 1
    OBSERVED_Y = "observed_y"  # R^Y = 1


def check_pattern_support(dataset: Dataset, pattern_mode: PatternMode = PatternMode.STRICT) -> Dict[str, int]:
    """Returns the pattern counts, raising PatternSupportError when the mode's requirements fail."""
    codes = pattern_codes(dataset.r_d, dataset.r_y)
    counts = {f"M{k}": int(np.sum(codes == k)) for k in range(1, 5)}
    required = ("M1", "M2", "M3", "M4") if pattern_mode == PatternMode.STRICT else ("M1",)
    missing = [name for name in required if counts[name] == 0]
    if missing:
        raise PatternSupportError(missing, mode=pattern_mode.value)
    return counts


def _resolve_sieve(targets, inputs, sieve: SieveChoice, label: str, folds: int, seed: int) -> SieveSpec:
    if isinstance(sieve, SieveSpec):
        return sieve
    candidates = list(sieve)
    if len(candidates) == 1:
        return candidates[0]
    chosen = cross_validate(targets, inputs, candidates, folds=min(folds, len(targets)), seed=seed,
                            threads=context.threads)
    logger.info(f"{label}: cross-validation selected {chosen.label()}.")
    return chosen


def _fit(targets, inputs, sieve: SieveChoice, label: str, names: Sequence[str], mask: np.ndarray,
         folds: int, seed: int) -> SievePredictor:
    spec = _resolve_sieve(targets, inputs, sieve, label, folds, seed)
    return fit_least_squares(targets, inputs, spec, input_columns=names).with_subsample(mask)


@dataclass(frozen=True, eq=False)
class MissingMechanism:
    """
    Per-observation propensities. Under SMAR, p_y1 at rows with R^D = 0 holds Pr[R^Y = 1 | Z, X, R^D = 1]
    integrated over the treatment; moment code never reads p_y1 or p_11 there.
    """
    p_d: np.ndarray
    p_y1: np.ndarray
    p_y0: np.ndarray
    assumption: Assumption
    clamp_bounds: Tuple[float, float] = (0.0, 1.0)
    specs: Dict[str, SieveSpec] = field(default_factory=dict)

    @classmethod
    def from_components(cls, p_d, p_y1, p_y0, assumption: Assumption,
                        clamp_bounds: Tuple[float, float] = (0.0, 1.0),
                        specs: Optional[Dict[str, SieveSpec]] = None) -> "MissingMechanism":
        return cls(
            p_d=np.asarray(p_d, dtype=np.float64),
            p_y1=np.asarray(p_y1, dtype=np.float64),
            p_y0=np.asarray(p_y0, dtype=np.float64),
            assumption=Assumption(assumption),
            clamp_bounds=tuple(clamp_bounds),
            specs=dict(specs or {}),
        )

    @property
    def n(self) -> int:
        return int(self.p_d.shape[0])

    @property
    def p_11(self) -> np.ndarray:
        return self.p_d * self.p_y1

    @property
    def p_10(self) -> np.ndarray:
        return self.p_d * (1.0 - self.p_y1)

    @property
    def p_01(self) -> np.ndarray:
        return (1.0 - self.p_d) * self.p_y0

    @property
    def p_00(self) -> np.ndarray:
        return (1.0 - self.p_d) * (1.0 - self.p_y0)

    def p_y(self, r_d: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(r_d, dtype=bool), self.p_y1, self.p_y0)

    def subset(self, idx) -> "MissingMechanism":
        idx = np.asarray(idx)
        return replace(self, p_d=self.p_d[idx], p_y1=self.p_y1[idx], p_y0=self.p_y0[idx])

    def lower_boundary_share(self) -> float:
        lo = self.clamp_bounds[0]
        at_boundary = (self.p_d <= lo) | (self.p_y1 <= lo) | (self.p_y0 <= lo)
        return float(at_boundary.mean()) if self.n else 0.0


def fit_mechanism(
        dataset: Dataset,
        assumption: Assumption,
        sieve: SieveChoice,
        pattern_mode: PatternMode = PatternMode.STRICT,
        clamp_bounds: Optional[Tuple[float, float]] = None,
        cv_folds: int = DEFAULT_CV_FOLDS,
        seed: int = 0,
) -> MissingMechanism:
    """
    Estimates p_d = Pr[R^D=1 | Z, X] and the two outcome propensities by sieve regression on the
    conditioning inputs, clamped to clamp_bounds.

    Args:
        dataset: The sample.
        assumption: MAR conditions p_y1 on (Z, X); SMAR adds the observed treatment.
        sieve: A basis specification, or a list of candidates to cross-validate per regression.
        pattern_mode: 'strict' requires all four patterns; 'general' only complete cases.
        clamp_bounds (optional): Defaults to the runtime context (AIPW_GMM_CLAMP_LO / _HI).
    """
    assumption = Assumption(assumption)
    pattern_mode = PatternMode(pattern_mode)
    clamp_bounds = context.clamp_bounds if clamp_bounds is None else tuple(clamp_bounds)
    check_clamp_bounds(clamp_bounds)
    check_pattern_support(dataset, pattern_mode)
    lo, hi = clamp_bounds

    r_d = dataset.r_d
    r_y = dataset.r_y.astype(np.float64)
    zx = dataset.conditioning_inputs()
    zx_names = tuple(dataset.zx_names[j] for j in dataset.conditioning_columns)
    n = dataset.n
    specs: Dict[str, SieveSpec] = {}

    pd_fit = _fit(r_d.astype(np.float64), zx, sieve, "p_d", zx_names, np.ones(n, dtype=bool), cv_folds, seed)
    specs["p_d"] = pd_fit.spec
    p_d = pd_fit.with_clamp(lo, hi).predict(zx)

    # Pr[R^Y=1 | Z, X, R^D=1], integrated over D.
    py1_marginal = _fit(r_y[r_d], zx[r_d], sieve, "p_y1", zx_names, r_d, cv_folds, seed).with_clamp(lo, hi)
    specs["p_y1"] = py1_marginal.spec
    if assumption == Assumption.SMAR:
        dzx = np.column_stack([dataset.d_filled[r_d], zx[r_d]])
        py1_fit = _fit(r_y[r_d], dzx, sieve, "p_y1", (dataset.d_name,) + zx_names, r_d, cv_folds, seed)
        specs["p_y1"] = py1_fit.spec
        p_y1 = py1_marginal.predict(zx)
        p_y1[r_d] = py1_fit.with_clamp(lo, hi).predict(dzx)
    else:
        p_y1 = py1_marginal.predict(zx)

    if (~r_d).any():
        py0_fit = _fit(r_y[~r_d], zx[~r_d], sieve, "p_y0", zx_names, ~r_d, cv_folds, seed)
        specs["p_y0"] = py0_fit.spec
        p_y0 = py0_fit.with_clamp(lo, hi).predict(zx)
    else:
        # Only reachable in general mode: no R^D = 0 rows to learn from.
        p_y0 = np.full(n, hi)

    mechanism = MissingMechanism.from_components(p_d, p_y1, p_y0, assumption, clamp_bounds, specs)
    share = mechanism.lower_boundary_share()
    if share > OVERLAP_WARNING_SHARE:
        logger.warning(
            f"{share:.1%} of observations have a propensity at the lower clamp {lo}; overlap is weak and "
            "the weighted estimators may be unstable."
        )
    return mechanism


@dataclass(frozen=True, eq=False)
class ImputedValues:
    """Imputations evaluated at each observation. ey_dzx is NaN where the treatment is missing."""
    ey_zx: np.ndarray
    ey_dzx: np.ndarray
    e_d: np.ndarray
    d_support: Optional[Tuple[float, ...]] = None
    d_probs: Optional[np.ndarray] = None
    ey_dzx_support: Optional[np.ndarray] = None
    ey_at_mean_d: Optional[np.ndarray] = None

    @property
    def expected_ey_dzx(self) -> np.ndarray:
        """E[ E[Y | D, Z, X] | Z, X ] for every observation."""
        if self.ey_dzx_support is not None:
            return np.sum(self.ey_dzx_support * self.d_probs, axis=1)
        if self.ey_at_mean_d is not None:
            return self.ey_at_mean_d
        raise InvariantViolation("Imputations carry neither a treatment support nor a plug-in outcome.")

    def subset(self, idx) -> "ImputedValues":
        idx = np.asarray(idx)

        def take(a):
            return None if a is None else a[idx]

        return replace(self, ey_zx=self.ey_zx[idx], ey_dzx=self.ey_dzx[idx], e_d=self.e_d[idx],
                       d_probs=take(self.d_probs), ey_dzx_support=take(self.ey_dzx_support),
                       ey_at_mean_d=take(self.ey_at_mean_d))


def normalize_probabilities(raw: np.ndarray) -> np.ndarray:
    """Clamps at zero and rescales rows to sum to one; all-zero rows become uniform."""
    probs = np.clip(raw, 0.0, None)
    totals = probs.sum(axis=1, keepdims=True)
    uniform = np.full_like(probs, 1.0 / probs.shape[1])
    return np.where(totals > 0, probs / np.where(totals > 0, totals, 1.0), uniform)


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    e_y_given_zx: SievePredictor
    e_y_given_dzx: SievePredictor
    zx_columns: Tuple[int, ...]
    e_d_given_zx: Optional[SievePredictor] = None
    d_support: Optional[Tuple[float, ...]] = None
    d_probs: Optional[Tuple[SievePredictor, ...]] = None
    ey_source: OutcomeSource = OutcomeSource.INCOMPLETE_D
    masks: Dict[str, np.ndarray] = field(default_factory=dict)
    specs: Dict[str, SieveSpec] = field(default_factory=dict)

    def impute(self, dataset: Dataset) -> ImputedValues:
        zx = dataset.conditioning_inputs(self.zx_columns)
        n = dataset.n
        r_d = dataset.r_d
        ey_zx = self.e_y_given_zx.predict(zx)
        ey_dzx = np.full(n, np.nan)
        if r_d.any():
            ey_dzx[r_d] = self.e_y_given_dzx.predict(np.column_stack([dataset.d_filled[r_d], zx[r_d]]))

        if self.d_support is not None:
            probs = normalize_probabilities(np.column_stack([fit.predict(zx) for fit in self.d_probs]))
            support = np.asarray(self.d_support)
            by_support = np.column_stack(
                [self.e_y_given_dzx.predict(np.column_stack([np.full(n, v), zx])) for v in support]
            )
            return ImputedValues(ey_zx=ey_zx, ey_dzx=ey_dzx, e_d=probs @ support, d_support=self.d_support,
                                 d_probs=probs, ey_dzx_support=by_support)
        e_d = self.e_d_given_zx.predict(zx)
        at_mean = self.e_y_given_dzx.predict(np.column_stack([e_d, zx]))
        return ImputedValues(ey_zx=ey_zx, ey_dzx=ey_dzx, e_d=e_d, ey_at_mean_d=at_mean)


def fit_imputations(
        dataset: Dataset,
        assumption: Assumption,
        sieve: SieveChoice,
        d_support: Optional[Sequence[float]] = None,
        ey_source: OutcomeSource = OutcomeSource.INCOMPLETE_D,
        pattern_mode: PatternMode = PatternMode.STRICT,
        cv_folds: int = DEFAULT_CV_FOLDS,
        seed: int = 0,
) -> NuisanceFit:
    """
    Fits the three imputation regressions:
    E[Y | Z, X] on the ey_source subsample, E[Y | D, Z, X] on complete cases, and E[D | Z, X] (or
    Pr[D = v | Z, X] for each support value) on rows with the treatment observed.
    """
    assumption = Assumption(assumption)
    ey_source = OutcomeSource(ey_source)
    pattern_mode = PatternMode(pattern_mode)
    check_pattern_support(dataset, pattern_mode)
    if assumption == Assumption.SMAR and ey_source != OutcomeSource.INCOMPLETE_D:
        logger.warning(
            f"E[Y | Z, X] from the '{ey_source.value}' subsample is only identified under MAR; "
            "use 'incomplete_d' under SMAR."
        )

    r_d, r_y = dataset.r_d, dataset.r_y
    d, y = dataset.d_filled, dataset.y_filled
    zx = dataset.conditioning_inputs()
    zx_names = tuple(dataset.zx_names[j] for j in dataset.conditioning_columns)
    dzx_names = (dataset.d_name,) + zx_names

    sources = {
        OutcomeSource.INCOMPLETE_D: ~r_d & r_y,
        OutcomeSource.COMPLETE_CASE: r_d & r_y,
        OutcomeSource.OBSERVED_Y: r_y,
    }
    ey_mask = sources[ey_source]
    if not ey_mask.any():
        # General mode only: fall back to complete cases.
        logger.warning(f"No observations in the '{ey_source.value}' subsample; E[Y | Z, X] uses complete cases.")
        ey_source = OutcomeSource.COMPLETE_CASE
        ey_mask = sources[ey_source]

    m1 = r_d & r_y
    specs: Dict[str, SieveSpec] = {}
    e_y_zx = _fit(y[ey_mask], zx[ey_mask], sieve, "E[Y|Z,X]", zx_names, ey_mask, cv_folds, seed)
    e_y_dzx = _fit(y[m1], np.column_stack([d[m1], zx[m1]]), sieve, "E[Y|D,Z,X]", dzx_names, m1, cv_folds, seed)
    specs["E[Y|Z,X]"] = e_y_zx.spec
    specs["E[Y|D,Z,X]"] = e_y_dzx.spec

    e_d_zx = None
    prob_fits = None
    support = None
    if d_support is not None:
        support = tuple(sorted(float(v) for v in d_support))
        if len(support) < 2 or len(set(support)) != len(support):
            raise ConfigurationError(f"Treatment support needs at least two distinct values, got {d_support}.")
        observed = d[r_d]
        outside = ~np.isin(observed, support)
        if outside.any():
            raise ConfigurationError(
                f"Observed treatment values {sorted(set(observed[outside]))[:5]} are not in the support {support}."
            )
        prob_fits = tuple(
            _fit((observed == v).astype(np.float64), zx[r_d], sieve, f"Pr[D={v:g}|Z,X]", zx_names, r_d,
                 cv_folds, seed)
            for v in support
        )
        specs["Pr[D|Z,X]"] = prob_fits[0].spec
    else:
        e_d_zx = _fit(d[r_d], zx[r_d], sieve, "E[D|Z,X]", zx_names, r_d, cv_folds, seed)
        specs["E[D|Z,X]"] = e_d_zx.spec

    return NuisanceFit(
        e_y_given_zx=e_y_zx,
        e_y_given_dzx=e_y_dzx,
        zx_columns=dataset.conditioning_columns,
        e_d_given_zx=e_d_zx,
        d_support=support,
        d_probs=prob_fits,
        ey_source=ey_source,
        masks={"E[Y|Z,X]": ey_mask, "E[Y|D,Z,X]": m1, "E[D|Z,X]": r_d.copy()},
        specs=specs,
    )


def expected_g_values(imputed: ImputedValues, spec: ModelSpec, beta, x: np.ndarray,
                      method: Optional[str] = None) -> np.ndarray:
    """
    E[g(D, X; beta) | Z, X] per observation.

    Args:
        method (optional): 'plugin' evaluates g at E[D | Z, X] (exact when g is linear in d); 'enumerate'
            sums g over the treatment support. Defaults to plugin for models linear in d.
    """
    if method is None:
        method = "plugin" if spec.linear_in_d else "enumerate"
    if method == "plugin":
        if not spec.linear_in_d:
            raise UnsupportedModelError("Plug-in integration needs a structural model that is linear in d.")
        return spec.evaluate(imputed.e_d, x, beta)
    if method == "enumerate":
        if imputed.d_support is None:
            raise UnsupportedModelError(
                "The structural model is nonlinear in d and the treatment is continuous; declare a discrete "
                "treatment support to integrate g."
            )
        columns = [spec.evaluate(np.full(x.shape[0], v), x, beta) for v in imputed.d_support]
        return np.sum(np.column_stack(columns) * imputed.d_probs, axis=1)
    raise ConfigurationError(f"Unknown integration method {method!r}.")


def expected_g_gradient(imputed: ImputedValues, spec: ModelSpec, beta, x: np.ndarray,
                        method: Optional[str] = None) -> np.ndarray:
    """d/dbeta of expected_g_values, shape (n, p)."""
    if method is None:
        method = "plugin" if spec.linear_in_d else "enumerate"
    if method == "plugin":
        if not spec.linear_in_d:
            raise UnsupportedModelError("Plug-in integration needs a structural model that is linear in d.")
        return spec.gradient(imputed.e_d, x, beta)
    if imputed.d_support is None:
        raise UnsupportedModelError("Enumeration needs a discrete treatment support.")
    out = np.zeros((x.shape[0], spec.beta_dim))
    for k, v in enumerate(imputed.d_support):
        out += imputed.d_probs[:, [k]] * spec.gradient(np.full(x.shape[0], v), x, beta)
    return out


def expected_g(nuisance: NuisanceFit, spec: ModelSpec, beta, dataset: Dataset,
               method: Optional[str] = None) -> np.ndarray:
    return expected_g_values(nuisance.impute(dataset), spec, beta, dataset.x, method)
