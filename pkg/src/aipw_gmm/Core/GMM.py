import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import linalg, stats

from .Moments import MomentContext, MomentKind, moment_jacobian_rows, moment_rows, rows_used, smar_correction
from .Nuisance import Assumption
from ..Utils.Aliases import estimator_map, normalize_alias
from ..Utils.Constants import MAX_STEP_HALVINGS, WEIGHT_RIDGE_SCALE
from ..Utils.Errors import ConfigurationError, IdentificationError
from ..Utils.Utils import is_full_rank, ridge_inverse, symmetrize

logger = logging.getLogger(__name__)


class WeightMode(str, Enum):
    IDENTITY = "identity"
    ZZ_INVERSE = "zz_inverse"
    OPTIMAL_TWO_STEP = "optimal_two_step"


class GmmConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: MomentKind = MomentKind.AIPW
    weight_mode: WeightMode = WeightMode.OPTIMAL_TWO_STEP
    max_iterations: int = Field(100, ge=1)
    tolerance: float = Field(1e-10, gt=0)
    beta_init: Union[Literal["ols-on-complete-cases"], Tuple[float, ...]] = "ols-on-complete-cases"

    @field_validator("kind", mode="before")
    @classmethod
    def _normalize_kind(cls, value):
        return normalize_alias(estimator_map, value)


@dataclass(frozen=True, eq=False)
class GmmResult:
    beta_hat: np.ndarray
    weight: np.ndarray
    jacobian_G: np.ndarray
    moment_variance_V: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    n_used: int
    converged: bool
    kind: MomentKind
    iterations: int = 0
    objective: float = 0.0
    first_step_beta: Optional[np.ndarray] = None
    names: Tuple[str, ...] = field(default=())

    @property
    def z_stats(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta_hat / self.std_errors

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.z_stats))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "names": list(self.names),
            "beta_hat": self.beta_hat.tolist(),
            "std_errors": self.std_errors.tolist(),
            "z_stats": self.z_stats.tolist(),
            "p_values": self.p_values.tolist(),
            "covariance": self.covariance.tolist(),
            "n_used": self.n_used,
            "converged": self.converged,
            "iterations": self.iterations,
            "objective": self.objective,
        }


def moment_mean(ctx: MomentContext, beta, kind: MomentKind = MomentKind.AIPW) -> np.ndarray:
    rows = rows_used(kind, ctx)
    return moment_rows(kind, ctx, beta)[rows].mean(axis=0)


def estimate_G(ctx: MomentContext, beta, kind: MomentKind = MomentKind.AIPW) -> np.ndarray:
    """Sample mean of the moment Jacobian, shape (d_Z, p)."""
    rows = rows_used(kind, ctx)
    return moment_jacobian_rows(kind, ctx, beta)[rows].mean(axis=0)


def influence_rows(ctx: MomentContext, beta, kind: MomentKind = MomentKind.AIPW) -> np.ndarray:
    """
    Moment rows that enter the variance, over rows_used. Under SMAR the augmented moments carry the
    correction for the estimated outcome propensity.
    """
    kind = MomentKind(kind)
    rows = rows_used(kind, ctx)
    psi = moment_rows(kind, ctx, beta)
    if kind.augmented and ctx.assumption == Assumption.SMAR:
        psi = psi + smar_correction(ctx, beta)
    return psi[rows]


def estimate_V(ctx: MomentContext, beta, kind: MomentKind = MomentKind.AIPW) -> np.ndarray:
    """(1/n) sum psi psi' - psi_bar psi_bar'."""
    psi = influence_rows(ctx, beta, kind)
    mean = psi.mean(axis=0)
    return symmetrize(psi.T @ psi / psi.shape[0] - np.outer(mean, mean))


def two_step_weight(ctx: MomentContext, beta_first, kind: MomentKind = MomentKind.AIPW) -> np.ndarray:
    return ridge_inverse(estimate_V(ctx, beta_first, kind), WEIGHT_RIDGE_SCALE)


def sandwich_covariance(G: np.ndarray, W: np.ndarray, V: np.ndarray, n: int) -> np.ndarray:
    try:
        bread = linalg.inv(G.T @ W @ G)
    except linalg.LinAlgError as e:
        raise IdentificationError(f"G'WG cannot be inverted for the sandwich variance: {e}") from e
    return symmetrize(bread @ G.T @ W @ V @ W @ G @ bread / n)


def efficient_covariance(G: np.ndarray, V: np.ndarray, n: int) -> np.ndarray:
    """(G' V^-1 G)^-1 / n."""
    return symmetrize(linalg.inv(G.T @ linalg.solve(V, G, assume_a="sym")) / n)


def _instrument_weight(ctx: MomentContext, rows: np.ndarray) -> np.ndarray:
    z = ctx.dataset.z[rows]
    zz = z.T @ z / z.shape[0]
    if not is_full_rank(zz):
        raise IdentificationError(
            f"The instrument matrix has rank {np.linalg.matrix_rank(zz)} < {zz.shape[0]}; "
            "drop duplicated or constant instrument columns."
        )
    return symmetrize(linalg.inv(zz))


def _initial_beta(ctx: MomentContext, config: GmmConfig) -> np.ndarray:
    p = ctx.spec.beta_dim
    if config.beta_init != "ols-on-complete-cases":
        beta = np.asarray(config.beta_init, dtype=np.float64)
        if beta.shape != (p,):
            raise ConfigurationError(f"beta_init has {beta.shape[0]} entries, the model has {p} parameters.")
        return beta
    cc = ctx.dataset.r_d & ctx.dataset.r_y
    regressors = np.column_stack([ctx.dataset.d_filled[cc], ctx.dataset.x[cc]])
    if regressors.shape[1] != p:
        logger.info("Starting values set to zero; the model does not share the linear layout.")
        return np.zeros(p)
    beta, *_ = linalg.lstsq(regressors, ctx.dataset.y_filled[cc])
    return beta


def _check_identified(G: np.ndarray, W: np.ndarray) -> np.ndarray:
    gwg = G.T @ W @ G
    if G.shape[0] < G.shape[1]:
        raise IdentificationError(f"{G.shape[0]} moment conditions cannot identify {G.shape[1]} parameters.")
    if not is_full_rank(gwg) or np.linalg.cond(gwg) > 1e14:
        raise IdentificationError("G'WG is singular; the moment conditions do not identify beta.")
    return gwg


class _Minimizer:
    def __init__(self, ctx: MomentContext, kind: MomentKind, config: GmmConfig):
        self.ctx = ctx
        self.kind = kind
        self.config = config

    def objective(self, beta, W) -> float:
        m = moment_mean(self.ctx, beta, self.kind)
        return float(m @ W @ m)

    def run(self, W: np.ndarray, beta0: np.ndarray) -> Tuple[np.ndarray, bool, int]:
        if self.ctx.spec.is_affine:
            # m_bar(beta) = m_bar(0) + G beta exactly.
            origin = np.zeros_like(beta0)
            G = estimate_G(self.ctx, origin, self.kind)
            gwg = _check_identified(G, W)
            beta = -linalg.solve(gwg, G.T @ W @ moment_mean(self.ctx, origin, self.kind), assume_a="sym")
            return beta, True, 1
        return self._gauss_newton(W, beta0)

    def _gauss_newton(self, W: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, bool, int]:
        for iteration in range(1, self.config.max_iterations + 1):
            m = moment_mean(self.ctx, beta, self.kind)
            G = estimate_G(self.ctx, beta, self.kind)
            gwg = _check_identified(G, W)
            gradient = G.T @ W @ m
            if np.linalg.norm(gradient) <= self.config.tolerance:
                return beta, True, iteration
            step = linalg.solve(gwg, gradient, assume_a="sym")
            current = float(m @ W @ m)
            scale = 1.0
            for _ in range(MAX_STEP_HALVINGS + 1):
                candidate = beta - scale * step
                if self.objective(candidate, W) < current:
                    beta = candidate
                    break
                scale /= 2.0
            else:
                converged = np.linalg.norm(gradient) <= self.config.tolerance
                logger.warning(
                    f"Gauss-Newton stalled after {iteration} iterations (|G'Wm|={np.linalg.norm(gradient):.3e})."
                )
                return beta, converged, iteration
        m = moment_mean(self.ctx, beta, self.kind)
        G = estimate_G(self.ctx, beta, self.kind)
        converged = np.linalg.norm(G.T @ W @ m) <= self.config.tolerance
        if not converged:
            logger.warning(f"Gauss-Newton hit the iteration cap of {self.config.max_iterations}.")
        return beta, converged, self.config.max_iterations


def solve(ctx: MomentContext, config: Optional[GmmConfig] = None, names: Tuple[str, ...] = ()) -> GmmResult:
    """
    Minimizes m_bar(beta)' W m_bar(beta). For the optimal two-step weight the first step uses (Z'Z/n)^-1
    and the second step the inverse of the moment variance at the first-step estimate.

    Args:
        ctx: Sample and nuisance values.
        config (optional): Estimator kind, weighting and iteration controls.
        names (optional): Labels for the parameters.
    """
    config = config or GmmConfig()
    kind = MomentKind(config.kind)
    rows = rows_used(kind, ctx)
    n_used = int(rows.sum())
    if n_used == 0:
        raise IdentificationError(f"The {kind.value} estimator has no usable observations.")

    minimizer = _Minimizer(ctx, kind, config)
    beta0 = _initial_beta(ctx, config)
    if config.weight_mode == WeightMode.IDENTITY:
        W = np.eye(ctx.dataset.z.shape[1])
    else:
        W = _instrument_weight(ctx, rows)
    beta, converged, iterations = minimizer.run(W, beta0)
    first_step = None
    if config.weight_mode == WeightMode.OPTIMAL_TWO_STEP:
        first_step = beta
        W = two_step_weight(ctx, beta, kind)
        beta, converged, more = minimizer.run(W, beta)
        iterations += more

    G = estimate_G(ctx, beta, kind)
    V = estimate_V(ctx, beta, kind)
    _check_identified(G, W)
    covariance = sandwich_covariance(G, W, V, n_used)
    std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    if not names:
        names = (ctx.dataset.d_name,) + ctx.dataset.x_names if ctx.spec.beta_dim == 1 + ctx.dataset.x.shape[1] \
            else tuple(f"beta{k}" for k in range(ctx.spec.beta_dim))
    return GmmResult(
        beta_hat=beta,
        weight=W,
        jacobian_G=G,
        moment_variance_V=V,
        covariance=covariance,
        std_errors=std_errors,
        n_used=n_used,
        converged=converged,
        kind=kind,
        iterations=iterations,
        objective=minimizer.objective(beta, W),
        first_step_beta=first_step,
        names=tuple(names),
    )


def efficient_influence(ctx: MomentContext, result: GmmResult) -> np.ndarray:
    """Per-observation influence -(G'V^-1 G)^-1 G'V^-1 psi_i, shape (n_used, p)."""
    psi = influence_rows(ctx, result.beta_hat, result.kind)
    psi = psi - psi.mean(axis=0)
    G, V = result.jacobian_G, result.moment_variance_V
    v_inv_g = linalg.solve(V, G, assume_a="sym")
    projection = linalg.solve(G.T @ v_inv_g, v_inv_g.T, assume_a="sym")
    return -psi @ projection.T
