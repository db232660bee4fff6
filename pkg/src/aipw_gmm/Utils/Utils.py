import logging

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)


def as_matrix(values, name: str = "array") -> np.ndarray:
    """Coerces a vector or matrix to a float64 2-D array with observations in rows."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise ValueError(f"{name} must be one- or two-dimensional, got shape {array.shape}.")
    return array


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def ridge_inverse(matrix: np.ndarray, scale: float) -> np.ndarray:
    """Inverse of a symmetric PSD matrix after adding scale * trace / dim to the diagonal."""
    matrix = symmetrize(np.asarray(matrix, dtype=np.float64))
    dim = matrix.shape[0]
    trace = float(np.trace(matrix))
    ridge = scale * trace / dim if trace > 0 else scale
    return symmetrize(linalg.inv(matrix + ridge * np.eye(dim)))


def is_full_rank(matrix: np.ndarray) -> bool:
    matrix = np.atleast_2d(matrix)
    return int(np.linalg.matrix_rank(matrix)) == min(matrix.shape)


def column_is_constant(column: np.ndarray) -> bool:
    return column.size == 0 or bool(np.all(column == column[0]))
