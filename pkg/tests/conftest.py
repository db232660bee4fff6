"""
Shared fixtures. The toy world has binary Z, X, D, Y and both observation indicators, so every expectation
is an exact sum over at most 64 cells with known probabilities.
"""
import itertools
from dataclasses import dataclass

import numpy as np
import pytest

from aipw_gmm.Core.Model import Dataset, LinearModel
from aipw_gmm.Core.Moments import MomentContext
from aipw_gmm.Core.Nuisance import Assumption, ImputedValues, MissingMechanism
from aipw_gmm.Simulation.DGP import SimScenario, generate_draw
from aipw_gmm.Utils.Shared import context


def prob_d1(z, x):
    return 0.2 + 0.4 * z + 0.2 * x


def prob_y1(d, z, x, d_coef=0.3):
    return 0.2 + d_coef * d + 0.2 * x + 0.1 * z


def prop_d(z, x):
    return 0.5 + 0.2 * z + 0.1 * x


def prop_y1(d, z, x, assumption):
    if assumption == Assumption.SMAR:
        return 0.3 + 0.4 * d + 0.1 * x
    return 0.3 + 0.3 * z + 0.2 * x


def prop_y0(z, x):
    return 0.4 + 0.2 * z


@dataclass
class ToyWorld:
    dataset: Dataset
    weights: np.ndarray
    mechanism: MissingMechanism
    imputed: ImputedValues
    beta0: np.ndarray
    assumption: Assumption

    @property
    def spec(self) -> LinearModel:
        return LinearModel(n_covariates=2)

    def context(self, mechanism=None, imputed=None) -> MomentContext:
        return MomentContext(
            dataset=self.dataset,
            spec=self.spec,
            assumption=self.assumption,
            mechanism=mechanism if mechanism is not None else self.mechanism,
            imputed=imputed if imputed is not None else self.imputed,
        )

    def expect(self, rows: np.ndarray) -> np.ndarray:
        return self.weights @ rows

    def sample(self, n: int, seed: int = 0) -> MomentContext:
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.weights.shape[0], size=n, p=self.weights / self.weights.sum())
        return self.context().subset(idx)


def build_toy_world(assumption="SMAR", d_coef: float = 0.3, monotone: bool = False) -> ToyWorld:
    assumption = Assumption(assumption)
    cells = []
    for z, x, d, y, r_d, r_y in itertools.product((0, 1), repeat=6):
        p1 = prob_d1(z, x)
        q1 = prob_y1(d, z, x, d_coef)
        p_rd = prop_d(z, x)
        if r_d:
            p_ry = prop_y1(d, z, x, assumption)
        else:
            p_ry = 0.0 if monotone else prop_y0(z, x)
        weight = (
                0.25
                * (p1 if d else 1 - p1)
                * (q1 if y else 1 - q1)
                * (p_rd if r_d else 1 - p_rd)
                * (p_ry if r_y else 1 - p_ry)
        )
        if weight > 0:
            cells.append((z, x, d, y, r_d, r_y, weight))
    z, x, d, y, r_d, r_y, w = (np.array(c, dtype=np.float64) for c in zip(*cells))
    ones = np.ones_like(z)
    r_d, r_y = r_d.astype(bool), r_y.astype(bool)

    dataset = Dataset.from_arrays(
        z=np.column_stack([ones, z, x]), x=np.column_stack([ones, x]), d=d, y=y, r_d=r_d, r_y=r_y,
        z_names=("const", "z", "x"), x_names=("const", "x"),
    )

    # Population IV solution over the full-data distribution.
    instruments = np.column_stack([ones, z, x])
    regressors = np.column_stack([d, ones, x])
    beta0 = np.linalg.solve((instruments * w[:, None]).T @ regressors, (instruments * w[:, None]).T @ y)

    p1 = prob_d1(z, x)
    q0, q1 = prob_y1(0.0, z, x, d_coef), prob_y1(1.0, z, x, d_coef)
    marginal_py1 = (1 - p1) * prop_y1(0.0, z, x, assumption) + p1 * prop_y1(1.0, z, x, assumption)
    mechanism = MissingMechanism.from_components(
        p_d=prop_d(z, x),
        p_y1=np.where(r_d, prop_y1(d, z, x, assumption), marginal_py1),
        p_y0=np.zeros_like(z) if monotone else prop_y0(z, x),
        assumption=assumption,
    )
    imputed = ImputedValues(
        ey_zx=(1 - p1) * q0 + p1 * q1,
        ey_dzx=np.where(r_d, prob_y1(d, z, x, d_coef), np.nan),
        e_d=p1,
        d_support=(0.0, 1.0),
        d_probs=np.column_stack([1 - p1, p1]),
        ey_dzx_support=np.column_stack([q0, q1]),
    )
    return ToyWorld(dataset=dataset, weights=w, mechanism=mechanism, imputed=imputed, beta0=beta0,
                    assumption=assumption)


@pytest.fixture
def toy_world():
    return build_toy_world


@pytest.fixture
def sim_draw():
    return generate_draw(SimScenario(n=2000, replications=1, seed=11), 0)


@pytest.fixture(autouse=True)
def reset_context():
    yield
    context.reset()
