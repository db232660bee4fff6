import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..Utils.Errors import ConfigurationError, FullyObservedViolation, MissingValueError
from ..Utils.Utils import as_matrix, column_is_constant

logger = logging.getLogger(__name__)


class MissingPattern(str, Enum):
    M1 = "M1"  # treatment and outcome observed
    M2 = "M2"  # treatment only
    M3 = "M3"  # outcome only
    M4 = "M4"  # neither


_PATTERN_TABLE = {
    (1, 1): MissingPattern.M1,
    (1, 0): MissingPattern.M2,
    (0, 1): MissingPattern.M3,
    (0, 0): MissingPattern.M4,
}


def classify_pattern(r_d, r_y) -> MissingPattern:
    """
    Maps a pair of observation indicators to its missingness pattern.

    Args:
        r_d: 1 (or True) when the treatment is observed.
        r_y: 1 (or True) when the outcome is observed.
    """
    try:
        return _PATTERN_TABLE[(int(r_d), int(r_y))]
    except (KeyError, TypeError, ValueError):
        raise ConfigurationError(f"Observation indicators must be 0 or 1, got ({r_d!r}, {r_y!r}).")


def pattern_codes(r_d: np.ndarray, r_y: np.ndarray) -> np.ndarray:
    """Vectorized classify_pattern: returns 1..4 for M1..M4."""
    r_d = np.asarray(r_d, dtype=bool)
    r_y = np.asarray(r_y, dtype=bool)
    return np.where(r_d, np.where(r_y, 1, 2), np.where(r_y, 3, 4))


class Observation(NamedTuple):
    z: np.ndarray
    x: np.ndarray
    d: Optional[float]
    y: Optional[float]

    @property
    def r_d(self) -> bool:
        return self.d is not None

    @property
    def r_y(self) -> bool:
        return self.y is not None

    @property
    def pattern(self) -> MissingPattern:
        return classify_pattern(self.r_d, self.r_y)


def _as_masked(values, indicator, name: str) -> np.ma.MaskedArray:
    if isinstance(values, np.ma.MaskedArray):
        mask = np.ma.getmaskarray(values).copy()
        data = np.array(values.data, dtype=np.float64)
    else:
        raw = list(values) if not isinstance(values, np.ndarray) else values
        if isinstance(raw, np.ndarray) and raw.dtype != object:
            data = raw.astype(np.float64)
            mask = np.zeros(data.shape, dtype=bool)
            if indicator is None and np.isnan(data).any():
                raise ConfigurationError(
                    f"{name} contains NaN; mark missing values with a mask, None, or an observation indicator."
                )
        else:
            mask = np.array([v is None for v in raw], dtype=bool)
            data = np.array([np.nan if v is None else float(v) for v in raw], dtype=np.float64)
    if indicator is not None:
        indicator = np.asarray(indicator, dtype=bool)
        if indicator.shape != data.shape:
            raise ConfigurationError(f"Indicator for {name} has shape {indicator.shape}, expected {data.shape}.")
        mask = mask | ~indicator
    data = np.where(mask, np.nan, data)
    if np.isnan(data[~mask]).any():
        raise ConfigurationError(f"{name} has NaN among its observed values.")
    return np.ma.MaskedArray(data, mask=mask)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    A sample of n observations. Instruments and covariates are dense float matrices; the treatment and
    the outcome are masked arrays whose mask marks the missing entries (R = ~mask).

    Use Dataset.from_arrays to build one; the constructor expects already-validated arrays.
    """
    z: np.ndarray
    x: np.ndarray
    d: np.ma.MaskedArray
    y: np.ma.MaskedArray
    z_names: Tuple[str, ...] = ()
    x_names: Tuple[str, ...] = ()
    d_name: str = "d"
    y_name: str = "y"
    _zx_columns: Tuple[int, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        n = self.d.shape[0]
        if self.z.ndim != 2 or self.x.ndim != 2:
            raise ConfigurationError("Instruments and covariates must be two-dimensional.")
        if not (self.z.shape[0] == self.x.shape[0] == self.y.shape[0] == n):
            raise ConfigurationError(
                f"Row counts disagree: z={self.z.shape[0]}, x={self.x.shape[0]}, d={n}, y={self.y.shape[0]}."
            )
        if self.z.shape[1] == 0:
            raise ConfigurationError("At least one instrument column is required.")
        if not (np.isfinite(self.z).all() and np.isfinite(self.x).all()):
            raise FullyObservedViolation("Instruments and covariates must be observed for every row.")
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{j}" for j in range(self.z.shape[1])))
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j}" for j in range(self.x.shape[1])))
        if len(self.z_names) != self.z.shape[1] or len(self.x_names) != self.x.shape[1]:
            raise ConfigurationError("Column names do not match the number of columns.")
        for array in (self.z, self.x, self.d.data, self.y.data):
            array.flags.writeable = False
        object.__setattr__(self, "_zx_columns", self._find_conditioning_columns())

    @classmethod
    def from_arrays(
            cls,
            z,
            x,
            d,
            y,
            r_d=None,
            r_y=None,
            z_names: Sequence[str] = (),
            x_names: Sequence[str] = (),
            d_name: str = "d",
            y_name: str = "y",
    ) -> "Dataset":
        """
        Builds a dataset from array-likes.

        Args:
            z: Instruments, shape (n,) or (n, d_Z).
            x: Covariates, shape (n,) or (n, d_X); pass an (n, 0) array for none.
            d: Treatment values; a masked array, a sequence with None for missing entries, or a float array
                combined with r_d.
            y: Outcome values, same conventions as d.
            r_d (optional): Treatment observation indicators; values where r_d is 0 are discarded.
            r_y (optional): Outcome observation indicators.
        """
        z = as_matrix(z, "z").copy()
        x = np.asarray(x, dtype=np.float64)
        x = (x[:, None] if x.ndim == 1 else x).copy()
        d = _as_masked(d, r_d, d_name)
        y = _as_masked(y, r_y, y_name)
        return cls(z=z, x=x, d=d, y=y, z_names=tuple(z_names), x_names=tuple(x_names), d_name=d_name, y_name=y_name)

    @property
    def n(self) -> int:
        return int(self.d.shape[0])

    @property
    def r_d(self) -> np.ndarray:
        return ~np.ma.getmaskarray(self.d)

    @property
    def r_y(self) -> np.ndarray:
        return ~np.ma.getmaskarray(self.y)

    @property
    def d_filled(self) -> np.ndarray:
        """Treatment with NaN at missing entries."""
        return self.d.filled(np.nan)

    @property
    def y_filled(self) -> np.ndarray:
        return self.y.filled(np.nan)

    @property
    def patterns(self) -> np.ndarray:
        return pattern_codes(self.r_d, self.r_y)

    @property
    def zx(self) -> np.ndarray:
        return np.hstack([self.z, self.x])

    @property
    def zx_names(self) -> Tuple[str, ...]:
        return self.z_names + self.x_names

    def _find_conditioning_columns(self) -> Tuple[int, ...]:
        # Non-constant columns of [z, x], first occurrence of duplicates only.
        zx = self.zx
        kept = []
        for j in range(zx.shape[1]):
            column = zx[:, j]
            if column_is_constant(column):
                continue
            if any(np.array_equal(column, zx[:, k]) for k in kept):
                continue
            kept.append(j)
        return tuple(kept)

    @property
    def conditioning_columns(self) -> Tuple[int, ...]:
        """Indices into zx of the columns nuisance regressions condition on."""
        return self._zx_columns

    def conditioning_inputs(self, columns: Optional[Sequence[int]] = None) -> np.ndarray:
        columns = self._zx_columns if columns is None else tuple(columns)
        return self.zx[:, list(columns)]

    def row(self, i: int) -> Observation:
        d = None if np.ma.is_masked(self.d[i]) else float(self.d.data[i])
        y = None if np.ma.is_masked(self.y[i]) else float(self.y.data[i])
        return Observation(z=self.z[i].copy(), x=self.x[i].copy(), d=d, y=y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset.from_arrays(
            z=self.z[idx], x=self.x[idx],
            d=np.ma.MaskedArray(self.d.data[idx], mask=np.ma.getmaskarray(self.d)[idx]),
            y=np.ma.MaskedArray(self.y.data[idx], mask=np.ma.getmaskarray(self.y)[idx]),
            z_names=self.z_names, x_names=self.x_names, d_name=self.d_name, y_name=self.y_name,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
                np.array_equal(self.z, other.z)
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.r_d, other.r_d)
                and np.array_equal(self.r_y, other.r_y)
                and np.array_equal(self.d.compressed(), other.d.compressed())
                and np.array_equal(self.y.compressed(), other.y.compressed())
                and self.z_names == other.z_names
                and self.x_names == other.x_names
        )

    def is_monotone(self) -> bool:
        """True when no observation has the outcome observed but the treatment missing."""
        return not bool(np.any(~self.r_d & self.r_y))


class ModelSpec(ABC):
    """Structural model g(d, x; beta) with E[Z (Y - g(D, X; beta0))] = 0."""

    form: str = ""
    linear_in_d: bool = False
    is_affine: bool = False

    @property
    @abstractmethod
    def beta_dim(self) -> int:
        ...

    @abstractmethod
    def evaluate(self, d: np.ndarray, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
        ...

    def gradient(self, d: np.ndarray, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """(n, p) matrix of dg/dbeta; central differences unless overridden."""
        beta = np.asarray(beta, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        out = np.empty((d.shape[0], beta.shape[0]))
        for k in range(beta.shape[0]):
            h = 1e-6 * max(1.0, abs(beta[k]))
            up, down = beta.copy(), beta.copy()
            up[k] += h
            down[k] -= h
            out[:, k] = (self.evaluate(d, x, up) - self.evaluate(d, x, down)) / (2.0 * h)
        return out


class LinearModel(ModelSpec):
    """g(d, x; beta) = beta[0] * d + x @ beta[1:]."""

    form = "linear"
    linear_in_d = True
    is_affine = True

    def __init__(self, n_covariates: int):
        if n_covariates < 0:
            raise ConfigurationError("n_covariates must be non-negative.")
        self.n_covariates = n_covariates

    @property
    def beta_dim(self) -> int:
        return 1 + self.n_covariates

    def evaluate(self, d, x, beta):
        beta = np.asarray(beta, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64).reshape(len(d), self.n_covariates)
        return beta[0] * np.asarray(d, dtype=np.float64) + x @ beta[1:]

    def gradient(self, d, x, beta):
        x = np.asarray(x, dtype=np.float64).reshape(len(d), self.n_covariates)
        return np.column_stack([np.asarray(d, dtype=np.float64), x])

    def __repr__(self):
        return f"LinearModel(n_covariates={self.n_covariates})"


class ParametricModel(ModelSpec):
    """
    A user-supplied g. The function must be vectorized: func(d, x, beta) -> (n,) for d of shape (n,) and
    x of shape (n, d_X).
    """

    form = "parametric"

    def __init__(
            self,
            func: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
            beta_dim: int,
            gradient: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None,
            linear_in_d: bool = False,
            affine: bool = False,
    ):
        if beta_dim < 1:
            raise ConfigurationError("beta_dim must be positive.")
        self._func = func
        self._beta_dim = beta_dim
        self._gradient = gradient
        self.linear_in_d = linear_in_d
        self.is_affine = affine

    @property
    def beta_dim(self) -> int:
        return self._beta_dim

    def evaluate(self, d, x, beta):
        return np.asarray(self._func(np.asarray(d, dtype=np.float64), x, np.asarray(beta, dtype=np.float64)),
                          dtype=np.float64)

    def gradient(self, d, x, beta):
        if self._gradient is None:
            return super().gradient(d, x, beta)
        return np.asarray(self._gradient(np.asarray(d, dtype=np.float64), x, np.asarray(beta, dtype=np.float64)),
                          dtype=np.float64).reshape(len(d), self._beta_dim)


def full_moment(obs: Observation, spec: ModelSpec, beta) -> np.ndarray:
    """Z (Y - g(D, X; beta)) for one fully observed observation."""
    if obs.d is None or obs.y is None:
        raise MissingValueError(f"The full-data moment needs D and Y observed (pattern {obs.pattern.value}).")
    g = spec.evaluate(np.array([obs.d]), obs.x[None, :], beta)[0]
    return obs.z * (obs.y - g)


def full_moments(dataset: Dataset, spec: ModelSpec, beta) -> np.ndarray:
    """Row-wise full-data moments; raises if any treatment or outcome is missing."""
    if not (dataset.r_d.all() and dataset.r_y.all()):
        raise MissingValueError("The full-data moment needs every treatment and outcome observed.")
    residual = dataset.y_filled - spec.evaluate(dataset.d_filled, dataset.x, beta)
    return dataset.z * residual[:, None]
