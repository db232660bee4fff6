import numpy as np
import pytest
from numpy.testing import assert_allclose

from aipw_gmm.Core.Model import (
    Dataset, LinearModel, MissingPattern, Observation, ParametricModel, classify_pattern, full_moment,
    full_moments,
)
from aipw_gmm.Utils.Errors import ConfigurationError, FullyObservedViolation, MissingValueError


@pytest.mark.parametrize("r_d, r_y, expected", [
    (1, 1, MissingPattern.M1),
    (1, 0, MissingPattern.M2),
    (0, 1, MissingPattern.M3),
    (0, 0, MissingPattern.M4),
    (True, False, MissingPattern.M2),
])
def test_classify_pattern(r_d, r_y, expected):
    assert classify_pattern(r_d, r_y) == expected


def test_classify_pattern_rejects_other_values():
    with pytest.raises(ConfigurationError):
        classify_pattern(2, 1)


def test_dataset_from_none_entries():
    dataset = Dataset.from_arrays(z=[1.0, 2.0, 3.0], x=np.zeros((3, 0)), d=[1.0, None, 0.0], y=[None, 2.0, 3.0])
    assert dataset.n == 3
    assert dataset.r_d.tolist() == [True, False, True]
    assert dataset.r_y.tolist() == [False, True, True]
    assert dataset.patterns.tolist() == [2, 3, 1]
    assert np.isnan(dataset.d_filled[1])
    row = dataset.row(1)
    assert row.d is None and row.y == 2.0
    assert row.pattern == MissingPattern.M3
    assert dataset.row(0).pattern == MissingPattern.M2


def test_indicators_discard_values():
    dataset = Dataset.from_arrays(z=[1.0, 1.0], x=[0.5, 0.7], d=[1.0, 123.0], y=[2.0, 3.0], r_d=[1, 0])
    assert dataset.d.compressed().tolist() == [1.0]
    assert np.isnan(dataset.d_filled[1])


def test_nan_needs_a_mask():
    with pytest.raises(ConfigurationError):
        Dataset.from_arrays(z=[1.0], x=[0.0], d=np.array([np.nan]), y=[1.0])


def test_instruments_must_be_observed():
    with pytest.raises(FullyObservedViolation):
        Dataset.from_arrays(z=[np.nan, 1.0], x=[0.0, 1.0], d=[1.0, 0.0], y=[1.0, 0.0])


def test_dataset_is_read_only():
    dataset = Dataset.from_arrays(z=[1.0, 2.0], x=[0.0, 1.0], d=[1.0, 0.0], y=[1.0, 0.0])
    with pytest.raises(ValueError):
        dataset.z[0, 0] = 5.0


def test_conditioning_columns_skip_constants_and_duplicates():
    x = np.array([0.1, 0.4, 0.9, 0.3])
    z = np.column_stack([np.ones(4), [0, 1, 1, 0], x])
    dataset = Dataset.from_arrays(z=z, x=np.column_stack([np.ones(4), x]), d=[1, 0, 1, 0], y=[1, 2, 3, 4],
                                  z_names=("const", "z", "x"), x_names=("const", "x"))
    assert dataset.conditioning_columns == (1, 2)
    assert dataset.conditioning_inputs().shape == (4, 2)


def test_subset_and_equality():
    dataset = Dataset.from_arrays(z=[1.0, 2.0, 3.0], x=[0.1, 0.2, 0.3], d=[1.0, None, 0.0], y=[1.0, 2.0, None])
    assert dataset.subset([0, 1, 2]).equals(dataset)
    part = dataset.subset([2])
    assert part.n == 1 and not part.r_y[0]
    assert not part.equals(dataset)


@pytest.mark.parametrize("r_d, r_y, monotone", [
    ([1, 1, 0], [1, 0, 0], True),
    ([1, 0, 1], [1, 1, 0], False),
    ([], [], True),
])
def test_monotone(r_d, r_y, monotone):
    n = len(r_d)
    dataset = Dataset.from_arrays(z=np.ones((n, 1)), x=np.zeros((n, 0)), d=np.zeros(n), y=np.zeros(n),
                                  r_d=r_d, r_y=r_y)
    assert dataset.is_monotone() == monotone


def test_full_moment_by_hand():
    obs = Observation(z=np.array([1.0, 0.5]), x=np.array([0.5]), d=1.0, y=0.8)
    # 0.8 - 0.3 * 1 - 0.5 * 0.5 = 0.25
    assert_allclose(full_moment(obs, LinearModel(1), [0.3, 0.5]), [0.25, 0.125])


def test_full_moment_zero_cases():
    spec = LinearModel(1)
    exact = Observation(z=np.array([1.0, 2.0]), x=np.array([1.0]), d=1.0, y=0.8)
    assert_allclose(full_moment(exact, spec, [0.3, 0.5]), [0.0, 0.0], atol=1e-15)
    annihilated = Observation(z=np.zeros(2), x=np.array([1.0]), d=1.0, y=5.0)
    assert_allclose(full_moment(annihilated, spec, [0.3, 0.5]), [0.0, 0.0])


def test_full_moment_needs_observed_values():
    obs = Observation(z=np.ones(1), x=np.ones(1), d=None, y=1.0)
    with pytest.raises(MissingValueError):
        full_moment(obs, LinearModel(1), [0.3, 0.5])
    dataset = Dataset.from_arrays(z=[1.0], x=[1.0], d=[None], y=[1.0])
    with pytest.raises(MissingValueError):
        full_moments(dataset, LinearModel(1), [0.3, 0.5])


def test_linear_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    d, x, beta = rng.normal(size=20), rng.normal(size=(20, 2)), rng.normal(size=3)
    spec = LinearModel(2)
    generic = ParametricModel(lambda d, x, b: b[0] * d + x @ b[1:], beta_dim=3)
    assert_allclose(generic.gradient(d, x, beta), spec.gradient(d, x, beta), rtol=1e-6, atol=1e-8)
    assert_allclose(generic.evaluate(d, x, beta), spec.evaluate(d, x, beta))
