"""
Observation-level moment functions for the complete-case, inverse probability weighted and augmented
estimators, the two-step residual form and the SMAR variance correction.

Every function takes a MomentContext (the sample plus its nuisance values) and a parameter vector and
returns one row per observation. Terms are computed only on rows where their weight is nonzero, so values
that are missing or undefined for a pattern never enter the arithmetic.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .Model import Dataset, ModelSpec
from .Nuisance import (
    Assumption, ImputedValues, MissingMechanism, NuisanceFit, PatternMode, SieveChoice, expected_g_gradient,
    expected_g_values,
)
from ..Utils.Errors import InvariantViolation

logger = logging.getLogger(__name__)


class MomentKind(str, Enum):
    CC = "CC"
    IPW = "IPW"
    AIPW = "AIPW"
    AIPW_GENERAL = "AIPW_GENERAL"

    @property
    def augmented(self) -> bool:
        return self in (MomentKind.AIPW, MomentKind.AIPW_GENERAL)


@dataclass(frozen=True, eq=False)
class MomentContext:
    dataset: Dataset
    spec: ModelSpec
    assumption: Assumption = Assumption.SMAR
    mechanism: Optional[MissingMechanism] = None
    imputed: Optional[ImputedValues] = None
    nuisance: Optional[NuisanceFit] = None
    sieve: Optional[SieveChoice] = None
    pattern_mode: PatternMode = PatternMode.STRICT

    def __post_init__(self):
        n = self.dataset.n
        if self.mechanism is not None and self.mechanism.n != n:
            raise InvariantViolation(f"Mechanism covers {self.mechanism.n} rows, dataset has {n}.")
        if self.imputed is not None and self.imputed.ey_zx.shape[0] != n:
            raise InvariantViolation(f"Imputations cover {self.imputed.ey_zx.shape[0]} rows, dataset has {n}.")

    @property
    def n(self) -> int:
        return self.dataset.n

    def require_mechanism(self) -> MissingMechanism:
        if self.mechanism is None:
            raise InvariantViolation("This moment needs fitted propensities.")
        return self.mechanism

    def require_imputed(self) -> ImputedValues:
        if self.imputed is None:
            raise InvariantViolation("This moment needs fitted imputations.")
        return self.imputed

    def subset(self, idx) -> "MomentContext":
        """Context restricted to the given rows; per-observation use goes through subset([i])."""
        idx = np.asarray(idx)
        return replace(
            self,
            dataset=self.dataset.subset(idx),
            mechanism=None if self.mechanism is None else self.mechanism.subset(idx),
            imputed=None if self.imputed is None else self.imputed.subset(idx),
        )

    def with_imputed(self, imputed: ImputedValues) -> "MomentContext":
        return replace(self, imputed=imputed)

    def with_mechanism(self, mechanism: MissingMechanism) -> "MomentContext":
        return replace(self, mechanism=mechanism)


def build_context(
        dataset: Dataset,
        spec: ModelSpec,
        assumption: Assumption,
        mechanism: Optional[MissingMechanism] = None,
        nuisance: Optional[NuisanceFit] = None,
        sieve: Optional[SieveChoice] = None,
        pattern_mode: PatternMode = PatternMode.STRICT,
) -> MomentContext:
    imputed = None if nuisance is None else nuisance.impute(dataset)
    return MomentContext(dataset=dataset, spec=spec, assumption=Assumption(assumption), mechanism=mechanism,
                         imputed=imputed, nuisance=nuisance, sieve=sieve, pattern_mode=PatternMode(pattern_mode))


class _Weights(NamedTuple):
    complete: np.ndarray  # R^D R^Y / p_11
    outcome: np.ndarray  # R^Y / p_y(R^D)
    treatment: np.ndarray  # R^D / p_d


def _weights(ctx: MomentContext) -> _Weights:
    mechanism = ctx.require_mechanism()
    r_d, r_y = ctx.dataset.r_d, ctx.dataset.r_y
    cc = r_d & r_y
    n = ctx.n
    complete = np.zeros(n)
    complete[cc] = 1.0 / mechanism.p_11[cc]
    outcome = np.zeros(n)
    outcome[cc] = 1.0 / mechanism.p_y1[cc]
    m3 = ~r_d & r_y
    outcome[m3] = 1.0 / mechanism.p_y0[m3]
    treatment = np.zeros(n)
    treatment[r_d] = 1.0 / mechanism.p_d[r_d]
    return _Weights(complete=complete, outcome=outcome, treatment=treatment)


def _observed_g(ctx: MomentContext, beta) -> np.ndarray:
    """g(D, X; beta) where D is observed, zero elsewhere."""
    r_d = ctx.dataset.r_d
    g = np.zeros(ctx.n)
    if r_d.any():
        g[r_d] = ctx.spec.evaluate(ctx.dataset.d_filled[r_d], ctx.dataset.x[r_d], beta)
    return g


def _expected_g(ctx: MomentContext, beta) -> np.ndarray:
    return expected_g_values(ctx.require_imputed(), ctx.spec, beta, ctx.dataset.x)


def _first_component(ctx: MomentContext, weights: _Weights, general: bool) -> np.ndarray:
    weight = weights.outcome - weights.complete
    if general:
        weight = ctx.require_mechanism().p_01 * weight
    return weight


def _scalar(kind: MomentKind, ctx: MomentContext, g: np.ndarray, eg: Optional[np.ndarray]) -> np.ndarray:
    """
    The moment divided by Z, given g at observed treatments and E[g | Z, X]. The map is affine in (g, eg),
    which the Jacobian relies on.
    """
    r_d, r_y = ctx.dataset.r_d, ctx.dataset.r_y
    cc = r_d & r_y
    y = ctx.dataset.y_filled
    out = np.zeros(ctx.n)
    if kind == MomentKind.CC:
        out[cc] = y[cc] - g[cc]
        return out

    weights = _weights(ctx)
    out[cc] = weights.complete[cc] * (y[cc] - g[cc])
    if kind == MomentKind.IPW:
        return out

    imputed = ctx.require_imputed()
    ey = imputed.ey_zx
    c1 = _first_component(ctx, weights, general=kind == MomentKind.AIPW_GENERAL)
    c2 = weights.treatment - weights.complete
    c3 = 1.0 - weights.complete

    first = np.zeros(ctx.n)
    first[r_y] = y[r_y] - ey[r_y]
    second = np.zeros(ctx.n)
    second[r_d] = (imputed.ey_dzx[r_d] - g[r_d]) - (ey[r_d] - eg[r_d])
    third = ey - eg
    return out + c1 * first + c2 * second + c3 * third


def moment_rows(kind: MomentKind, ctx: MomentContext, beta) -> np.ndarray:
    """(n, d_Z) moment contributions; rows outside rows_used are zero."""
    kind = MomentKind(kind)
    g = _observed_g(ctx, beta)
    eg = _expected_g(ctx, beta) if kind.augmented else None
    return ctx.dataset.z * _scalar(kind, ctx, g, eg)[:, None]


def rows_used(kind: MomentKind, ctx: MomentContext) -> np.ndarray:
    """Rows the sample mean runs over: complete cases for CC, everything otherwise."""
    if MomentKind(kind) == MomentKind.CC:
        return ctx.dataset.r_d & ctx.dataset.r_y
    return np.ones(ctx.n, dtype=bool)


def moment_jacobian_rows(kind: MomentKind, ctx: MomentContext, beta) -> np.ndarray:
    """(n, d_Z, p) derivative of moment_rows with respect to beta."""
    kind = MomentKind(kind)
    r_d = ctx.dataset.r_d
    p = ctx.spec.beta_dim
    dg = np.zeros((ctx.n, p))
    if r_d.any():
        dg[r_d] = ctx.spec.gradient(ctx.dataset.d_filled[r_d], ctx.dataset.x[r_d], beta)
    deg = expected_g_gradient(ctx.require_imputed(), ctx.spec, beta, ctx.dataset.x) if kind.augmented else None
    zeros = np.zeros(ctx.n)
    base = _scalar(kind, ctx, zeros, zeros if kind.augmented else None)
    columns = [
        _scalar(kind, ctx, dg[:, k], deg[:, k] if deg is not None else None) - base
        for k in range(p)
    ]
    return ctx.dataset.z[:, :, None] * np.stack(columns, axis=1)[:, None, :]


def cc_moment(ctx: MomentContext, beta) -> np.ndarray:
    """R^D R^Y Z (Y - g)."""
    return moment_rows(MomentKind.CC, ctx, beta)


def ipw_moment(ctx: MomentContext, beta) -> np.ndarray:
    """(R^D R^Y / p_11) Z (Y - g)."""
    return moment_rows(MomentKind.IPW, ctx, beta)


def aipw_moment(ctx: MomentContext, beta) -> np.ndarray:
    return moment_rows(MomentKind.AIPW, ctx, beta)


def general_moment(ctx: MomentContext, beta) -> np.ndarray:
    """AIPW moment with the outcome-only component scaled by p_01; stays valid when M3 is empty."""
    return moment_rows(MomentKind.AIPW_GENERAL, ctx, beta)


def augmentation_phi(ctx: MomentContext, beta) -> np.ndarray:
    """aipw_moment minus ipw_moment."""
    g = _observed_g(ctx, beta)
    eg = _expected_g(ctx, beta)
    aipw = _scalar(MomentKind.AIPW, ctx, g, eg)
    ipw = _scalar(MomentKind.IPW, ctx, g, None)
    return ctx.dataset.z * (aipw - ipw)[:, None]


def augmentation_phi_expanded(ctx: MomentContext, beta) -> np.ndarray:
    """
    The augmentation written with the outcome-only term split as (Y - E[g]) - (E[Y|Z,X] - E[g]). Equal
    to augmentation_phi.
    """
    r_d, r_y = ctx.dataset.r_d, ctx.dataset.r_y
    imputed = ctx.require_imputed()
    weights = _weights(ctx)
    y = ctx.dataset.y_filled
    g = _observed_g(ctx, beta)
    eg = _expected_g(ctx, beta)
    ey = imputed.ey_zx

    outcome_term = np.zeros(ctx.n)
    outcome_term[r_y] = (y[r_y] - eg[r_y]) - (ey[r_y] - eg[r_y])
    treatment_term = np.zeros(ctx.n)
    treatment_term[r_d] = (imputed.ey_dzx[r_d] - g[r_d]) - (ey[r_d] - eg[r_d])
    scalar = (
            (weights.outcome - weights.complete) * outcome_term
            + (weights.treatment - weights.complete) * treatment_term
            + (1.0 - weights.complete) * (ey - eg)
    )
    return ctx.dataset.z * scalar[:, None]


def first_component_weight(ctx: MomentContext, rewritten: bool = False) -> np.ndarray:
    """
    Weight on (Y - E[Y|Z,X]) in the augmentation. The rewritten form
    (1 - p_d)((1 - R^D) R^Y / p_01 - R^D R^Y / p_11) agrees with R^Y / p_y - R^D R^Y / p_11 whenever the
    joint propensities factor through p_d.
    """
    if not rewritten:
        return _first_component(ctx, _weights(ctx), general=False)
    mechanism = ctx.require_mechanism()
    r_d, r_y = ctx.dataset.r_d, ctx.dataset.r_y
    out = np.zeros(ctx.n)
    cc = r_d & r_y
    m3 = ~r_d & r_y
    out[cc] = -(1.0 - mechanism.p_d[cc]) / mechanism.p_11[cc]
    out[m3] = (1.0 - mechanism.p_d[m3]) / mechanism.p_01[m3]
    return out


def two_step_residual(ctx: MomentContext, beta) -> np.ndarray:
    """
    Scalar residual e_i such that Z e_i equals the AIPW moment. With a = R^Y / p_y and b = R^D / p_d:
    e = a [Y - b g - (1 - b) E[g]] + (1 - a)[b (E[Y|D,Z,X] - g) + (1 - b)(E[Y|Z,X] - E[g])].
    """
    imputed = ctx.require_imputed()
    weights = _weights(ctx)
    r_d, r_y = ctx.dataset.r_d, ctx.dataset.r_y
    a, b = weights.outcome, weights.treatment
    y = ctx.dataset.y_filled
    g = _observed_g(ctx, beta)
    eg = _expected_g(ctx, beta)

    b_g = np.zeros(ctx.n)
    b_g[r_d] = b[r_d] * g[r_d]
    b_ey_d = np.zeros(ctx.n)
    b_ey_d[r_d] = b[r_d] * imputed.ey_dzx[r_d]
    observed = np.zeros(ctx.n)
    observed[r_y] = a[r_y] * (y[r_y] - b_g[r_y] - (1.0 - b[r_y]) * eg[r_y])
    imputed_part = (1.0 - a) * ((b_ey_d - b_g) + (1.0 - b) * (imputed.ey_zx - eg))
    return observed + imputed_part


def smar_correction(ctx: MomentContext, beta=None) -> np.ndarray:
    """
    Variance correction for the estimated p_y1 under SMAR:
    (1 - p_d)(R^D R^Y / p_11 - 1) Z (E[Y|D,Z,X] - E[Y|Z,X]). Where D is missing, E[Y|D,Z,X] is
    integrated over the imputed treatment distribution.
    """
    mechanism = ctx.require_mechanism()
    imputed = ctx.require_imputed()
    r_d = ctx.dataset.r_d
    weights = _weights(ctx)
    ey_d = np.where(r_d, np.nan_to_num(imputed.ey_dzx), 0.0)
    if (~r_d).any():
        ey_d[~r_d] = imputed.expected_ey_dzx[~r_d]
    scalar = (1.0 - mechanism.p_d) * (weights.complete - 1.0) * (ey_d - imputed.ey_zx)
    return ctx.dataset.z * scalar[:, None]
