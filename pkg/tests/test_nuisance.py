import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from aipw_gmm.Core.Model import Dataset, LinearModel, ParametricModel
from aipw_gmm.Core.Nuisance import (
    Assumption, ImputedValues, OutcomeSource, PatternMode, check_pattern_support, expected_g_gradient,
    expected_g_values, fit_imputations, fit_mechanism, normalize_probabilities,
)
from aipw_gmm.Core.Sieve import SieveSpec
from aipw_gmm.Simulation.DGP import SimScenario, generate_draw
from aipw_gmm.Utils.Errors import ConfigurationError, PatternSupportError, UnsupportedModelError

LINEAR = SieveSpec(degree=1, include_interactions=False)


@pytest.fixture(scope="module")
def large_draw():
    return generate_draw(SimScenario(n=20000, replications=1, rho_latents=0.0, seed=5), 0)


def test_complete_data_needs_general_mode(sim_draw):
    full = sim_draw.full_dataset()
    with pytest.raises(PatternSupportError) as excinfo:
        fit_mechanism(full, Assumption.SMAR, LINEAR)
    assert excinfo.value.missing_patterns == ("M2", "M3", "M4")
    mechanism = fit_mechanism(full, Assumption.SMAR, LINEAR, pattern_mode=PatternMode.GENERAL)
    assert_allclose(mechanism.p_d, 1.0)
    assert_allclose(mechanism.p_11, 1.0)


def test_pattern_counts(sim_draw):
    counts = check_pattern_support(sim_draw.to_dataset())
    assert sum(counts.values()) == 2000
    assert all(v > 0 for v in counts.values())


def test_treatment_propensity_recovers_the_design(large_draw):
    dataset = large_draw.to_dataset()
    mechanism = fit_mechanism(dataset, Assumption.SMAR, LINEAR)
    assert np.abs(mechanism.p_d - large_draw.p_d).mean() < 0.02
    lo, hi = mechanism.clamp_bounds
    assert mechanism.p_d.min() >= lo and mechanism.p_d.max() <= hi


def test_outcome_propensity_depends_on_treatment_under_smar(large_draw):
    dataset = large_draw.to_dataset()
    r_d = dataset.r_d
    smar = fit_mechanism(dataset, Assumption.SMAR, LINEAR)
    assert np.abs(smar.p_y1[r_d] - large_draw.p_y[r_d]).mean() < 0.02
    assert np.abs(smar.p_y0[~r_d] - large_draw.p_y[~r_d]).mean() < 0.02
    assert set(smar.specs) == {"p_d", "p_y1", "p_y0"}

    mar = fit_mechanism(dataset, Assumption.MAR, LINEAR)
    treated = r_d & (dataset.d_filled == 1)
    # Without the treatment the fit averages over it and misses the 0.3 shift.
    assert (large_draw.p_y[treated] - mar.p_y1[treated]).mean() > 0.05


def test_overlap_warning(sim_draw, caplog):
    with caplog.at_level(logging.WARNING):
        fit_mechanism(sim_draw.to_dataset(), Assumption.SMAR, LINEAR, clamp_bounds=(0.45, 1.0))
    assert "overlap is weak" in caplog.text


def test_bad_clamp_bounds(sim_draw):
    with pytest.raises(ConfigurationError):
        fit_mechanism(sim_draw.to_dataset(), Assumption.SMAR, LINEAR, clamp_bounds=(0.0, 1.0))


def _exact_outcome_dataset(n=400, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.binomial(1, 0.5, n).astype(float)
    x = rng.uniform(size=n)
    d = rng.binomial(1, 0.3 + 0.4 * z).astype(float)
    y = 2.0 + 3.0 * z
    return Dataset.from_arrays(z=np.column_stack([z, x]), x=x, d=d, y=y, r_d=rng.uniform(size=n) < 0.6,
                               r_y=rng.uniform(size=n) < 0.6, z_names=("z", "x"), x_names=("x",))


def test_outcome_imputation_reproduces_exact_targets():
    dataset = _exact_outcome_dataset()
    nuisance = fit_imputations(dataset, Assumption.SMAR, LINEAR, d_support=(0, 1))
    imputed = nuisance.impute(dataset)
    assert_allclose(imputed.ey_zx, 2.0 + 3.0 * dataset.z[:, 0], atol=1e-10)
    assert_allclose(imputed.ey_dzx[dataset.r_d], 2.0 + 3.0 * dataset.z[dataset.r_d, 0], atol=1e-10)
    assert np.isnan(imputed.ey_dzx[~dataset.r_d]).all()
    assert nuisance.masks["E[Y|Z,X]"].sum() == int((~dataset.r_d & dataset.r_y).sum())


def test_treatment_probabilities_are_normalized(sim_draw):
    dataset = sim_draw.to_dataset()
    imputed = fit_imputations(dataset, Assumption.SMAR, SieveSpec(degree=3), d_support=(0.0, 1.0)).impute(dataset)
    assert imputed.d_probs.shape == (dataset.n, 2)
    assert np.all((imputed.d_probs >= 0) & (imputed.d_probs <= 1))
    assert_allclose(imputed.d_probs.sum(axis=1), 1.0)
    assert_allclose(imputed.e_d, imputed.d_probs[:, 1])


def test_continuous_treatment_uses_plug_in(sim_draw):
    dataset = sim_draw.to_dataset()
    nuisance = fit_imputations(dataset, Assumption.MAR, LINEAR)
    imputed = nuisance.impute(dataset)
    assert nuisance.d_support is None and imputed.d_probs is None
    assert imputed.expected_ey_dzx.shape == (dataset.n,)


def test_outcome_source_choices(sim_draw, caplog):
    dataset = sim_draw.to_dataset()
    with caplog.at_level(logging.WARNING):
        nuisance = fit_imputations(dataset, Assumption.SMAR, LINEAR, ey_source=OutcomeSource.OBSERVED_Y)
    assert "only identified under MAR" in caplog.text
    assert np.array_equal(nuisance.masks["E[Y|Z,X]"], dataset.r_y)


def test_monotone_data_falls_back_to_complete_cases(sim_draw):
    dataset = sim_draw.to_dataset()
    r_d, r_y = dataset.r_d, dataset.r_y
    monotone = Dataset.from_arrays(z=dataset.z, x=dataset.x, d=dataset.d, y=dataset.y, r_y=r_y & r_d)
    with pytest.raises(PatternSupportError):
        fit_imputations(monotone, Assumption.SMAR, LINEAR)
    nuisance = fit_imputations(monotone, Assumption.SMAR, LINEAR, pattern_mode="general")
    assert nuisance.ey_source == OutcomeSource.COMPLETE_CASE


def test_treatment_outside_support(sim_draw):
    with pytest.raises(ConfigurationError):
        fit_imputations(sim_draw.to_dataset(), Assumption.SMAR, LINEAR, d_support=(0.0, 2.0))


def test_expected_g_by_plug_in():
    imputed = ImputedValues(ey_zx=np.zeros(1), ey_dzx=np.zeros(1), e_d=np.array([0.4]))
    value = expected_g_values(imputed, LinearModel(1), [0.3, 0.5], np.ones((1, 1)))
    assert value[0] == pytest.approx(0.62)


def test_expected_g_by_enumeration():
    certain = ImputedValues(ey_zx=np.zeros(1), ey_dzx=np.zeros(1), e_d=np.ones(1), d_support=(0.0, 1.0),
                            d_probs=np.array([[0.0, 1.0]]))
    assert expected_g_values(certain, LinearModel(1), [0.3, 0.5], np.ones((1, 1)), method="enumerate")[0] \
        == pytest.approx(0.8)

    quadratic = ParametricModel(lambda d, x, b: b[0] * d ** 2, beta_dim=1)
    quarter = ImputedValues(ey_zx=np.zeros(1), ey_dzx=np.zeros(1), e_d=np.array([0.25]), d_support=(0.0, 1.0),
                            d_probs=np.array([[0.75, 0.25]]))
    assert expected_g_values(quarter, quadratic, [1.0], np.ones((1, 1)))[0] == pytest.approx(0.25)
    assert expected_g_gradient(quarter, quadratic, [1.0], np.ones((1, 1)))[0, 0] == pytest.approx(0.25, rel=1e-6)


def test_nonlinear_models_need_a_support():
    quadratic = ParametricModel(lambda d, x, b: b[0] * d ** 2, beta_dim=1)
    continuous = ImputedValues(ey_zx=np.zeros(1), ey_dzx=np.zeros(1), e_d=np.array([0.5]),
                               ey_at_mean_d=np.zeros(1))
    with pytest.raises(UnsupportedModelError):
        expected_g_values(continuous, quadratic, [1.0], np.ones((1, 1)))
    with pytest.raises(UnsupportedModelError):
        expected_g_values(continuous, quadratic, [1.0], np.ones((1, 1)), method="plugin")


def test_normalize_probabilities():
    probs = normalize_probabilities(np.array([[0.2, 0.6], [-0.1, 0.5], [0.0, -0.2]]))
    assert_allclose(probs, [[0.25, 0.75], [0.0, 1.0], [0.5, 0.5]])


def test_plug_in_equals_enumeration_for_binary_treatment(sim_draw):
    dataset = sim_draw.to_dataset()
    imputed = fit_imputations(dataset, Assumption.SMAR, SieveSpec(degree=3), d_support=(0.0, 1.0)).impute(dataset)
    spec = LinearModel(n_covariates=dataset.x.shape[1])
    beta = [0.3, 0.5]
    plug_in = expected_g_values(imputed, spec, beta, dataset.x, method="plugin")
    enumerated = expected_g_values(imputed, spec, beta, dataset.x, method="enumerate")
    assert_allclose(plug_in, enumerated, rtol=0, atol=1e-12)
    assert_allclose(expected_g_gradient(imputed, spec, beta, dataset.x, method="plugin"),
                    expected_g_gradient(imputed, spec, beta, dataset.x, method="enumerate"), rtol=0, atol=1e-12)
