import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from aipw_gmm.Core import Sieve
from aipw_gmm.Core.Sieve import (
    BasisLayout, CVScore, SieveSpec, bspline_columns, build_basis, cross_validate, cross_validation_scores,
    fit_intercept_only, fit_least_squares, rate_guard,
)
from aipw_gmm.Utils.Errors import ConfigurationError

U = np.linspace(0.0, 1.0, 21)


def test_power_degree_one_is_identity_expansion():
    assert_allclose(build_basis(U, SieveSpec(degree=1)), np.column_stack([np.ones_like(U), U]))


def test_power_degree_two_monomials():
    basis = build_basis([0.0, 0.5, 1.0], SieveSpec(degree=2))
    assert_allclose(basis[1], [1.0, 0.5, 0.25])


def test_bspline_partition_of_unity():
    block = bspline_columns([0.5], (1 / 3, 2 / 3), degree=3)
    assert block.shape == (1, 6)
    assert block.sum() == pytest.approx(1.0)
    many = bspline_columns(np.random.default_rng(0).uniform(size=50), (0.25, 0.5, 0.75), degree=3)
    assert_allclose(many.sum(axis=1), 1.0)


def test_bspline_basis_has_one_intercept():
    spec = SieveSpec(basis="bspline", degree=3, knots=(1 / 3, 2 / 3))
    basis = build_basis(U, spec)
    # intercept + (2 knots + 3 degree) spline functions
    assert basis.shape == (21, 6)
    assert np.linalg.matrix_rank(basis) == 6


def test_discrete_column_is_capped():
    layout = BasisLayout.fit(np.array([0.0, 1.0, 1.0, 0.0]), SieveSpec(degree=3))
    assert layout.caps == (1,)
    assert layout.n_terms == 2


def test_exact_linear_fit():
    fit = fit_least_squares(2 + 3 * U, U, SieveSpec(degree=1))
    assert_allclose(fit.coefficients, [2.0, 3.0], atol=1e-10)
    assert_allclose(fit.predict(U), 2 + 3 * U, atol=1e-10)


def test_constant_targets():
    fit = fit_least_squares(np.full(21, 4.2), U, SieveSpec(degree=2))
    assert_allclose(fit.coefficients, [4.2, 0.0, 0.0], atol=1e-10)


def test_quadratic_targets():
    fit = fit_least_squares(U ** 2, U, SieveSpec(degree=2))
    assert np.linalg.norm(fit.predict(U) - U ** 2) < 1e-10


def test_interactions_reach_products():
    rng = np.random.default_rng(1)
    inputs = rng.uniform(size=(60, 2))
    targets = inputs[:, 0] * inputs[:, 1]
    with_products = fit_least_squares(targets, inputs, SieveSpec(degree=2))
    without = fit_least_squares(targets, inputs, SieveSpec(degree=2, include_interactions=False))
    # Standardization maps the sample range to [0, 1]; products stay in the span only with interactions.
    assert np.abs(with_products.predict(inputs) - targets).max() < 1e-10
    assert np.abs(without.predict(inputs) - targets).max() > 1e-3


def test_too_few_observations():
    inputs = np.array([[0.0, 0.0], [0.5, 1.0], [1.0, 0.5]])
    # six terms, three rows
    with pytest.raises(ConfigurationError):
        fit_least_squares([1.0, 2.0, 3.0], inputs, SieveSpec(degree=2))


def test_clamped_predictions_and_constant_fit():
    fit = fit_least_squares(2 + 3 * U, U, SieveSpec(degree=1)).with_clamp(0.01, 1.0)
    assert fit.predict(U).max() == 1.0
    constant = fit_intercept_only([1.0, 2.0, 3.0], np.array([[0.0], [1.0], [2.0]]))
    assert_allclose(constant.predict(np.array([[5.0], [7.0]])), [2.0, 2.0])


def test_knot_validation():
    with pytest.raises(ValidationError):
        SieveSpec(basis="power", knots=(0.5,))
    with pytest.raises(ValidationError):
        SieveSpec(basis="bspline", knots=(0.6, 0.4))
    with pytest.raises(ValidationError):
        SieveSpec(basis="bspline", knots=(1.5,))
    raw = SieveSpec(basis="bspline", knots=(0.5,), standardize=False)
    with pytest.raises(ConfigurationError):
        BasisLayout.fit(np.linspace(0.6, 1.0, 30), raw)


def test_single_candidate_is_returned():
    spec = SieveSpec(degree=3)
    assert cross_validate(U, U, [spec]) == spec


def test_cross_validation_prefers_the_true_degree():
    rng = np.random.default_rng(7)
    u = rng.uniform(size=200)
    targets = 1.0 + 2.0 * u + rng.normal(scale=0.5, size=200)
    low, high = SieveSpec(degree=1), SieveSpec(degree=8)
    assert cross_validate(targets, u, [high, low], folds=5, seed=3) == low


def test_ties_go_to_the_smaller_basis(monkeypatch):
    def fixed_score(targets, inputs, spec, fold_ids, folds):
        return CVScore(spec=spec, n_terms=BasisLayout.fit(inputs, spec).n_terms, mse=1.0)

    monkeypatch.setattr(Sieve, "_score_candidate", fixed_score)
    small, large = SieveSpec(degree=1), SieveSpec(degree=4)
    assert cross_validate(U, U, [large, small]) == small


def test_oversized_candidates_are_skipped(caplog):
    u = np.linspace(0.0, 1.0, 10)
    inputs = np.column_stack([u, np.random.default_rng(4).uniform(size=10)])
    # Two inputs at degree 9 give dozens of tensor terms against eight training rows.
    scores = cross_validation_scores(u, inputs, [SieveSpec(degree=1), SieveSpec(degree=9)], folds=5)
    assert [s.skipped for s in scores] == [False, True]
    assert "Skipping sieve" in caplog.text
    with pytest.raises(ConfigurationError):
        cross_validate(u, inputs, [SieveSpec(degree=9)] * 2, folds=5)


def test_folds_depend_only_on_seed():
    assert np.array_equal(Sieve._fold_ids(50, 5, 9), Sieve._fold_ids(50, 5, 9))
    assert not np.array_equal(Sieve._fold_ids(50, 5, 9), Sieve._fold_ids(50, 5, 10))
    targets = np.sin(3 * U)
    candidates = [SieveSpec(degree=k) for k in (1, 2, 3)]
    serial = cross_validation_scores(targets, U, candidates, folds=3, seed=1, threads=1)
    threaded = cross_validation_scores(targets, U, candidates, folds=3, seed=1, threads=3)
    assert [s.mse for s in serial] == [s.mse for s in threaded]


def test_rate_guard():
    # 1/nu = 8 lies in (4 + 2, 4 * 4 / 1 - 6) for one input and a power basis.
    assert rate_guard(n=2 ** 16, K=4, n_inputs=1, eta=1.0).ok
    too_large = rate_guard(n=1000, K=1000, n_inputs=1, eta=1.0)
    assert not too_large.lower_ok and too_large.message
    assert not rate_guard(n=1000, K=1, n_inputs=1, eta=1.0).upper_ok


SPECS = [
    SieveSpec(degree=3),
    SieveSpec(basis="bspline", degree=3, knots=(1 / 3, 2 / 3)),
]


@pytest.mark.parametrize("spec", SPECS, ids=["power", "bspline"])
def test_residuals_are_orthogonal_to_the_design(spec):
    rng = np.random.default_rng(11)
    inputs = rng.uniform(size=(300, 2))
    targets = np.sin(3 * inputs[:, 0]) + inputs[:, 1] ** 2 + rng.normal(scale=0.2, size=300)
    fit = fit_least_squares(targets, inputs, spec)
    design = fit.layout.expand(inputs)
    residuals = targets - design @ fit.coefficients
    scale = np.linalg.norm(design, axis=0) * np.linalg.norm(targets)
    assert np.all(np.abs(design.T @ residuals) <= 1e-8 * scale)


@pytest.mark.parametrize("spec", SPECS, ids=["power", "bspline"])
def test_predictions_ignore_affine_rescaling(spec):
    rng = np.random.default_rng(12)
    inputs = rng.uniform(size=(200, 2))
    targets = np.cos(2 * inputs[:, 0]) * inputs[:, 1] + rng.normal(scale=0.1, size=200)
    moved = inputs * np.array([40.0, 0.25]) + np.array([-7.0, 3.0])
    original = fit_least_squares(targets, inputs, spec).predict(inputs)
    rescaled = fit_least_squares(targets, moved, spec).predict(moved)
    assert_allclose(rescaled, original, atol=1e-8)
