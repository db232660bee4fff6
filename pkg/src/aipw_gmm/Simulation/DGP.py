import logging
from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import stats

from ..Core.Model import Dataset
from ..Core.Nuisance import Assumption
from ..Core.Sieve import SieveSpec
from ..Utils.Aliases import misspecification_map, normalize_alias
from ..Utils.Constants import DEFAULT_SEED
from ..Utils.Errors import ConfigurationError

logger = logging.getLogger(__name__)

Misspecification = Literal["none", "wrong_y_imputations", "wrong_d_imputation", "wrong_py_omits_D"]


class SimScenario(BaseModel):
    """
    Binary endogenous treatment, one uniform covariate and one binary instrument:

        D = 1(d0 + d1 Z + d2 X >= Phi(u)),  Y = alpha D + beta X + eps,  corr(eps, u) = gamma
        R^D = 1(p_d >= Phi(n_rd)),  R^Y = 1(p_y >= Phi(n_ry))

    with p_d linear in (1, X, Z) and p_y linear in (1, X, Z, R^D D).
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(1000, ge=20)
    replications: int = Field(500, ge=1)
    gamma: float = Field(0.8, gt=-1.0, lt=1.0)
    alpha_true: float = 0.3
    beta_true: float = 0.5
    treatment_coef: Tuple[float, float, float] = (0.1, 0.3, 0.1)  # (1, Z, X)
    pd_coef: Tuple[float, float, float] = (0.2, 0.2, 0.3)  # (1, X, Z)
    py_coef: Tuple[float, float, float, float] = (0.3, -0.05, 0.2, 0.3)  # (1, X, Z, R^D D)
    x_bounds: Tuple[float, float] = (0.0, 1.0)
    z_prob: float = Field(0.5, gt=0.0, lt=1.0)
    rho_latents: float = Field(0.3, gt=-1.0, lt=1.0)
    # Nonzero values tie R^Y to the outcome error and break SMAR.
    rho_ry_eps: float = Field(0.0, gt=-1.0, lt=1.0)
    misspec: Misspecification = "none"
    seed: int = DEFAULT_SEED
    assumption: Assumption = Assumption.SMAR
    sieve: SieveSpec = SieveSpec(basis="power", degree=3, include_interactions=True)

    @field_validator("misspec", mode="before")
    @classmethod
    def _normalize_misspec(cls, value):
        return normalize_alias(misspecification_map, value)

    @model_validator(mode="after")
    def _check_probabilities(self):
        lo, hi = self.x_bounds
        if not lo < hi:
            raise ValueError(f"x_bounds must be increasing, got {self.x_bounds}.")
        offending = []
        corners = [(x, z) for x in (lo, hi) for z in (0.0, 1.0)]
        d0, d1, d2 = self.treatment_coef
        if any(not (0.0 <= d0 + d1 * z + d2 * x <= 1.0) for x, z in corners):
            offending.append("treatment_coef")
        a0, a1, a2 = self.pd_coef
        if any(not (0.0 < a0 + a1 * x + a2 * z < 1.0) for x, z in corners):
            offending.append("pd_coef")
        b0, b1, b2, b3 = self.py_coef
        if any(not (0.0 < b0 + b1 * x + b2 * z + b3 * rd < 1.0) for x, z in corners for rd in (0.0, 1.0)):
            offending.append("py_coef")
        if offending:
            raise ValueError(f"Coefficients put probabilities outside (0, 1) on the covariate support: {offending}.")
        return self


@dataclass(frozen=True, eq=False)
class SimDraw:
    """One replication with every latent and counterfactual quantity kept."""
    z: np.ndarray
    x: np.ndarray
    d: np.ndarray
    y: np.ndarray
    eps: np.ndarray
    p_d: np.ndarray
    p_y: np.ndarray
    r_d: np.ndarray
    r_y: np.ndarray

    def to_dataset(self) -> Dataset:
        return Dataset.from_arrays(
            z=np.column_stack([self.z, self.x]), x=self.x[:, None], d=self.d, y=self.y,
            r_d=self.r_d, r_y=self.r_y, z_names=("z", "x"), x_names=("x",), d_name="d", y_name="y",
        )

    def full_dataset(self) -> Dataset:
        """The same draw with nothing missing."""
        return Dataset.from_arrays(
            z=np.column_stack([self.z, self.x]), x=self.x[:, None], d=self.d, y=self.y,
            z_names=("z", "x"), x_names=("x",), d_name="d", y_name="y",
        )


def _correlated_normals(rng: np.random.Generator, n: int, rho: float) -> Tuple[np.ndarray, np.ndarray]:
    first = rng.standard_normal(n)
    second = rho * first + np.sqrt(1.0 - rho ** 2) * rng.standard_normal(n)
    return first, second


def generate_draw(scenario: SimScenario, replication_index: int) -> SimDraw:
    """Draws replication `replication_index`; the stream depends only on (scenario.seed, replication_index)."""
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, replication_index]))
    n = scenario.n
    x = rng.uniform(scenario.x_bounds[0], scenario.x_bounds[1], n)
    z = rng.binomial(1, scenario.z_prob, n).astype(np.float64)
    eps, u = _correlated_normals(rng, n, scenario.gamma)

    d0, d1, d2 = scenario.treatment_coef
    d = (d0 + d1 * z + d2 * x >= stats.norm.cdf(u)).astype(np.float64)
    y = scenario.alpha_true * d + scenario.beta_true * x + eps

    n_rd, w = _correlated_normals(rng, n, scenario.rho_latents)
    n_ry = scenario.rho_ry_eps * eps + np.sqrt(1.0 - scenario.rho_ry_eps ** 2) * w

    a0, a1, a2 = scenario.pd_coef
    p_d = a0 + a1 * x + a2 * z
    r_d = p_d >= stats.norm.cdf(n_rd)
    b0, b1, b2, b3 = scenario.py_coef
    p_y = b0 + b1 * x + b2 * z + b3 * r_d * d
    r_y = p_y >= stats.norm.cdf(n_ry)
    if not (np.all((p_d > 0) & (p_d < 1)) and np.all((p_y > 0) & (p_y < 1))):
        raise ConfigurationError("Simulated propensities left (0, 1).")
    return SimDraw(z=z, x=x, d=d, y=y, eps=eps, p_d=p_d, p_y=p_y, r_d=r_d, r_y=r_y)


def generate(scenario: SimScenario, replication_index: int) -> Dataset:
    return generate_draw(scenario, replication_index).to_dataset()


PRESETS = {
    # Correctly specified nuisances at three levels of endogeneity.
    "table1": [
        {"gamma": 0.8},
        {"gamma": 0.5},
        {"gamma": 0.3},
    ],
    # One misspecified nuisance per block.
    "table2": [
        {"gamma": 0.8, "misspec": "wrong_y_imputations"},
        {"gamma": 0.5, "misspec": "wrong_d_imputation"},
        {"gamma": 0.8, "misspec": "wrong_py_omits_D"},
    ],
}


def preset_scenarios(name: str, **overrides) -> list:
    if name not in PRESETS:
        raise ConfigurationError(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}.")
    return [SimScenario(**{**block, **overrides}) for block in PRESETS[name]]
