"""
Series (sieve) least squares for the nuisance regressions: power and B-spline bases on min-max standardized
inputs, seeded K-fold cross-validation over candidate specifications, and the rate advisory.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from scipy.interpolate import BSpline

from ..Utils.Constants import SIEVE_RIDGE_SCALE
from ..Utils.Errors import ConfigurationError
from ..Utils.Utils import as_matrix

logger = logging.getLogger(__name__)


class SieveSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    basis: Literal["power", "bspline"] = "power"
    degree: int = Field(2, ge=1, le=12)
    # Interior knots on the standardized [0, 1] scale (raw scale when standardize is off).
    knots: Optional[Tuple[float, ...]] = None
    # Quantile-placed interior knots, used when knots is None.
    n_knots: int = Field(2, ge=0, le=50)
    include_interactions: bool = True
    standardize: bool = True

    @model_validator(mode="after")
    def _check_knots(self):
        if self.knots is not None:
            if self.basis != "bspline":
                raise ValueError("knots are only meaningful for the bspline basis.")
            if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
                raise ValueError(f"knots must be strictly increasing, got {self.knots}.")
            if self.standardize and any(not (0.0 < k < 1.0) for k in self.knots):
                raise ValueError(f"knots must lie strictly inside (0, 1) on the standardized scale, got {self.knots}.")
        return self

    @property
    def eta(self) -> float:
        """Exponent of the uniform approximation bound used by the rate advisory."""
        return 1.0 if self.basis == "power" else 0.5

    def label(self) -> str:
        if self.basis == "power":
            return f"power(degree={self.degree}{', interactions' if self.include_interactions else ''})"
        knots = self.knots if self.knots is not None else f"{self.n_knots} quantile"
        return f"bspline(degree={self.degree}, knots={knots}{', interactions' if self.include_interactions else ''})"


def bspline_columns(u, interior_knots: Sequence[float], degree: int, lower: float = 0.0,
                    upper: float = 1.0) -> np.ndarray:
    """
    Full B-spline block on [lower, upper] with clamped boundary knots. Rows sum to one (partition of
    unity); inputs outside the interval are clipped to it.
    """
    u = np.clip(np.asarray(u, dtype=np.float64).ravel(), lower, upper)
    t = np.concatenate([np.full(degree + 1, lower), np.asarray(interior_knots, dtype=np.float64),
                        np.full(degree + 1, upper)])
    return BSpline.design_matrix(u, t, degree).toarray()


@dataclass(frozen=True, eq=False)
class BasisLayout:
    """Everything the expansion learns from its training inputs."""
    spec: SieveSpec
    lower: np.ndarray
    span: np.ndarray
    caps: Tuple[int, ...]
    spline: Tuple[bool, ...]
    knots: Tuple[Tuple[float, ...], ...]
    exponents: Tuple[Tuple[int, ...], ...] = ()

    @classmethod
    def fit(cls, inputs: np.ndarray, spec: SieveSpec, intercept_only: bool = False) -> "BasisLayout":
        inputs = as_matrix(inputs, "inputs")
        n, p = inputs.shape
        if n == 0:
            raise ConfigurationError("Cannot build a sieve basis from zero observations.")
        lower = inputs.min(axis=0) if p else np.zeros(0)
        upper = inputs.max(axis=0) if p else np.zeros(0)
        span = upper - lower

        caps, spline, knots = [], [], []
        for j in range(p):
            levels = np.unique(inputs[:, j]).size
            if intercept_only or span[j] == 0:
                caps.append(0)
                spline.append(False)
                knots.append(())
                continue
            column_knots = cls._column_knots(inputs[:, j], lower[j], upper[j], spec) if spec.basis == "bspline" else ()
            n_functions = len(column_knots) + spec.degree + 1
            # Columns with few distinct values get the power expansion capped at levels - 1.
            is_discrete = levels <= (spec.degree + 1 if spec.basis == "power" else n_functions)
            if spec.basis == "bspline" and not is_discrete:
                caps.append(spec.degree)
                spline.append(True)
                knots.append(column_knots)
            else:
                caps.append(min(spec.degree, levels - 1))
                spline.append(False)
                knots.append(())

        layout = cls(spec=spec, lower=lower, span=span, caps=tuple(caps), spline=tuple(spline), knots=tuple(knots))
        if spec.basis == "power":
            layout = replace(layout, exponents=cls._power_exponents(caps, spec))
        return layout

    @staticmethod
    def _column_knots(column: np.ndarray, lower: float, upper: float, spec: SieveSpec) -> Tuple[float, ...]:
        lo, hi = (0.0, 1.0) if spec.standardize else (lower, upper)
        if spec.knots is not None:
            if any(not (lo < k < hi) for k in spec.knots):
                raise ConfigurationError(f"Knots {spec.knots} fall outside the data range ({lo}, {hi}).")
            return tuple(spec.knots)
        if spec.n_knots == 0:
            return ()
        u = (column - lower) / (upper - lower) if spec.standardize else column
        probs = np.arange(1, spec.n_knots + 1) / (spec.n_knots + 1)
        placed = np.unique(np.quantile(u, probs))
        return tuple(float(k) for k in placed if lo < k < hi)

    @staticmethod
    def _power_exponents(caps: Sequence[int], spec: SieveSpec) -> Tuple[Tuple[int, ...], ...]:
        p = len(caps)
        constant = (0,) * p
        if spec.include_interactions:
            grid = itertools.product(*(range(c + 1) for c in caps))
            terms = [e for e in grid if sum(e) <= spec.degree]
        else:
            terms = [constant]
            for j, cap in enumerate(caps):
                for power in range(1, cap + 1):
                    e = [0] * p
                    e[j] = power
                    terms.append(tuple(e))
        # Constant first, then by total degree.
        return tuple(sorted(set(terms), key=lambda e: (sum(e), tuple(-v for v in e))))

    def standardized(self, inputs: np.ndarray) -> np.ndarray:
        inputs = as_matrix(inputs, "inputs")
        if inputs.shape[1] != self.lower.shape[0]:
            raise ConfigurationError(f"Expected {self.lower.shape[0]} input columns, got {inputs.shape[1]}.")
        if not self.spec.standardize:
            return inputs
        safe_span = np.where(self.span > 0, self.span, 1.0)
        return np.where(self.span > 0, (inputs - self.lower) / safe_span, 0.0)

    def expand(self, inputs: np.ndarray) -> np.ndarray:
        u = self.standardized(inputs)
        n = u.shape[0]
        if self.spec.basis == "power":
            columns = [np.prod(u ** np.asarray(e), axis=1) if any(e) else np.ones(n) for e in self.exponents]
            return np.column_stack(columns) if columns else np.ones((n, 1))

        blocks = [np.ones((n, 1))]
        active = []
        for j, cap in enumerate(self.caps):
            if cap == 0:
                continue
            active.append(j)
            if self.spline[j]:
                lo, hi = (0.0, 1.0) if self.spec.standardize else (self.lower[j], self.lower[j] + self.span[j])
                # First spline function dropped: the full block sums to the intercept.
                blocks.append(bspline_columns(u[:, j], self.knots[j], self.spec.degree, lo, hi)[:, 1:])
            else:
                blocks.append(np.column_stack([u[:, j] ** k for k in range(1, cap + 1)]))
        if self.spec.include_interactions:
            for a, b in itertools.combinations(active, 2):
                blocks.append((u[:, a] * u[:, b])[:, None])
        return np.hstack(blocks)

    @property
    def n_terms(self) -> int:
        if self.spec.basis == "power":
            return len(self.exponents)
        total = 1
        active = 0
        for j, cap in enumerate(self.caps):
            if cap == 0:
                continue
            active += 1
            total += (len(self.knots[j]) + self.spec.degree) if self.spline[j] else cap
        if self.spec.include_interactions:
            total += active * (active - 1) // 2
        return total


def build_basis(inputs, spec: SieveSpec) -> np.ndarray:
    """Expands the inputs into the (n, K) design matrix, fitting the standardization on the same inputs."""
    return BasisLayout.fit(inputs, spec).expand(inputs)


@dataclass(frozen=True, eq=False)
class SievePredictor:
    """A fitted series regression. Predictions are clipped to `clamp` when it is set."""
    spec: SieveSpec
    layout: BasisLayout
    coefficients: np.ndarray
    input_columns: Tuple[str, ...] = ()
    clamp: Optional[Tuple[float, float]] = None
    subsample: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return int(self.coefficients.shape[0])

    def predict(self, inputs) -> np.ndarray:
        values = self.layout.expand(inputs) @ self.coefficients
        if self.clamp is not None:
            values = np.clip(values, self.clamp[0], self.clamp[1])
        return values

    def with_clamp(self, lo: float, hi: float) -> "SievePredictor":
        return replace(self, clamp=(lo, hi))

    def with_subsample(self, mask: np.ndarray) -> "SievePredictor":
        return replace(self, subsample=np.asarray(mask, dtype=bool))


def _least_squares(design: np.ndarray, targets: np.ndarray) -> np.ndarray:
    n, k = design.shape
    if np.linalg.matrix_rank(design) == k:
        coefficients, *_ = linalg.lstsq(design, targets)
        return coefficients
    gram = design.T @ design
    ridge = SIEVE_RIDGE_SCALE * float(np.trace(gram)) / k
    logger.warning(f"Sieve design is rank deficient ({n} x {k}); solving with a ridge of {ridge:.3e}.")
    return linalg.solve(gram + max(ridge, SIEVE_RIDGE_SCALE) * np.eye(k), design.T @ targets, assume_a="sym")


def fit_least_squares(targets, inputs, spec: SieveSpec, input_columns: Sequence[str] = ()) -> SievePredictor:
    """
    Regresses targets on the sieve expansion of inputs.

    Args:
        targets: (n,) response.
        inputs: (n, p) conditioning inputs.
        spec: Basis specification.
        input_columns (optional): Names of the input columns, kept for reporting.
    """
    targets = np.asarray(targets, dtype=np.float64).ravel()
    inputs = as_matrix(inputs, "inputs")
    if inputs.shape[0] != targets.shape[0]:
        raise ConfigurationError(f"{targets.shape[0]} targets but {inputs.shape[0]} input rows.")
    layout = BasisLayout.fit(inputs, spec)
    design = layout.expand(inputs)
    if design.shape[0] < design.shape[1]:
        raise ConfigurationError(
            f"Sieve {spec.label()} has {design.shape[1]} terms but only {design.shape[0]} observations."
        )
    coefficients = _least_squares(design, targets)
    return SievePredictor(spec=spec, layout=layout, coefficients=coefficients, input_columns=tuple(input_columns))


def fit_intercept_only(targets, inputs, input_columns: Sequence[str] = ()) -> SievePredictor:
    """Constant regression with the same input signature as a full sieve fit."""
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if targets.size == 0:
        raise ConfigurationError("Cannot fit a constant to zero observations.")
    spec = SieveSpec(basis="power", degree=1, include_interactions=False)
    layout = BasisLayout.fit(inputs, spec, intercept_only=True)
    return SievePredictor(spec=spec, layout=layout, coefficients=np.array([targets.mean()]),
                          input_columns=tuple(input_columns))


@dataclass(frozen=True)
class CVScore:
    spec: SieveSpec
    n_terms: int
    mse: float
    skipped: bool = False


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, n, folds]))
    ids = np.empty(n, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(rng.permutation(n), folds)):
        ids[chunk] = fold
    return ids


def _score_candidate(targets, inputs, spec: SieveSpec, fold_ids: np.ndarray, folds: int) -> CVScore:
    n_terms = BasisLayout.fit(inputs, spec).n_terms
    squared = np.empty(targets.shape[0])
    for fold in range(folds):
        test = fold_ids == fold
        train = ~test
        if BasisLayout.fit(inputs[train], spec).n_terms > int(train.sum()):
            logger.warning(f"Skipping sieve {spec.label()}: a training fold has fewer rows than basis terms.")
            return CVScore(spec=spec, n_terms=n_terms, mse=np.inf, skipped=True)
        predictor = fit_least_squares(targets[train], inputs[train], spec)
        squared[test] = (targets[test] - predictor.predict(inputs[test])) ** 2
    return CVScore(spec=spec, n_terms=n_terms, mse=float(squared.mean()))


def cross_validation_scores(targets, inputs, candidates: Sequence[SieveSpec], folds: int = 5, seed: int = 0,
                            threads: int = 1) -> List[CVScore]:
    targets = np.asarray(targets, dtype=np.float64).ravel()
    inputs = as_matrix(inputs, "inputs")
    if not candidates:
        raise ConfigurationError("Cross-validation needs at least one candidate sieve.")
    if folds < 2 or folds > targets.shape[0]:
        raise ConfigurationError(f"Cannot run {folds}-fold cross-validation on {targets.shape[0]} observations.")
    fold_ids = _fold_ids(targets.shape[0], folds, seed)
    if threads > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda c: _score_candidate(targets, inputs, c, fold_ids, folds), candidates))
    return [_score_candidate(targets, inputs, c, fold_ids, folds) for c in candidates]


def cross_validate(targets, inputs, candidates: Sequence[SieveSpec], folds: int = 5, seed: int = 0,
                   threads: int = 1) -> SieveSpec:
    """
    Picks the candidate with the smallest out-of-fold mean squared error. Ties go to the candidate with
    fewer basis terms. The fold assignment depends only on the seed and the sample size.
    """
    scores = cross_validation_scores(targets, inputs, candidates, folds, seed, threads)
    usable = [s for s in scores if not s.skipped]
    if not usable:
        raise ConfigurationError("Every sieve candidate was skipped during cross-validation.")
    best = min(s.mse for s in usable)
    tied = [s for s in usable if np.isclose(s.mse, best, rtol=1e-12, atol=0.0)]
    chosen = min(tied, key=lambda s: s.n_terms)
    logger.debug(f"Cross-validation picked {chosen.spec.label()} (mse={chosen.mse:.6g}, K={chosen.n_terms}).")
    return chosen.spec


@dataclass(frozen=True)
class RateGuard:
    nu: float
    smoothness: float
    lower_ok: bool
    upper_ok: bool
    message: str

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok


def rate_guard(n: int, K: int, n_inputs: int, eta: float, smoothness: Optional[float] = None) -> RateGuard:
    """
    Advisory check of K = n^nu against 4 eta + 2 < 1/nu < 4 s / d - 6 eta, with d the number of inputs.
    The smoothness s is not known in practice; s = d + 3 is assumed unless given.
    """
    d = max(n_inputs, 1)
    s = float(smoothness) if smoothness is not None else d + 3.0
    nu = float(np.log(K) / np.log(n)) if n > 1 and K > 1 else 0.0
    inverse = 1.0 / nu if nu > 0 else np.inf
    lower_ok = inverse > 4.0 * eta + 2.0
    upper_ok = inverse < 4.0 * s / d - 6.0 * eta
    message = ""
    if not (lower_ok and upper_ok):
        assumed = "" if smoothness is not None else " (assumed)"
        message = (
            f"Sieve size K={K} at n={n} gives 1/nu={inverse:.2f}, outside ({4.0 * eta + 2.0:.2f}, "
            f"{4.0 * s / d - 6.0 * eta:.2f}) for {d} input(s) with smoothness {s:g}{assumed}."
        )
        logger.warning(message)
    return RateGuard(nu=nu, smoothness=s, lower_ok=lower_ok, upper_ok=upper_ok, message=message)
