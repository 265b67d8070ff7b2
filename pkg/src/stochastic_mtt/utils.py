import logging
from typing import Tuple

import numpy as np

from stochastic_mtt.errors import NumericalError

logger = logging.getLogger(__name__)

(
    " utils.py Small numerical helpers shared across modules:"
    " angle wrapping, covariance symmetrization and repair,"
    " matrix square roots and Gaussian sampling."
)

TWO_PI = 2.0 * np.pi


def wrap_angle(angle):
    """Wrap angles to the half-open interval (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, TWO_PI) - np.pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + TWO_PI, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def wrap_components(values: np.ndarray, angle_mask: np.ndarray) -> np.ndarray:
    """Wrap the masked components of ``values`` (last axis)."""
    out = np.array(values, dtype=float, copy=True)
    if np.any(angle_mask):
        out[..., angle_mask] = wrap_angle(out[..., angle_mask])
    return out


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _floor(matrix: np.ndarray) -> float:
    n = matrix.shape[0]
    return 1e-12 * max(float(np.trace(matrix)), 0.0) / max(n, 1)


def min_eigenvalue(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(matrix)).min())


def clamp_eigenvalues(matrix: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Rebuild a symmetric matrix with eigenvalues clamped at ``floor``."""
    values, vectors = np.linalg.eigh(symmetrize(matrix))
    values = np.maximum(values, floor)
    return symmetrize((vectors * values) @ vectors.T)


def repair_psd(matrix: np.ndarray, context: str = "") -> Tuple[np.ndarray, bool]:
    """
    Return a positive semidefinite version of ``matrix``.

    The matrix is symmetrized first. If it has no negative eigenvalue it
    is returned untouched; otherwise eigenvalues are clamped at
    1e-12 * trace / n. The flag says whether a repair happened.
    """
    if not np.all(np.isfinite(matrix)):
        raise NumericalError(
            "Covariance contains non-finite entries", {"context": context}
        )
    sym = symmetrize(np.asarray(matrix, dtype=float))
    if sym.size == 0 or min_eigenvalue(sym) >= 0.0:
        return sym, False
    logger.debug("PSD repair applied (%s)", context or "unnamed")
    return clamp_eigenvalues(sym, _floor(sym)), True


def sqrt_matrix(cov: np.ndarray, context: str = "") -> np.ndarray:
    """
    Lower Cholesky factor of ``cov`` with the documented fallbacks.

    Tries a plain Cholesky, then a retry with 1e-12 * trace / n jitter on
    the diagonal, then a symmetric eigendecomposition square root with
    negative eigenvalues clamped to zero. The last factor is not
    triangular but still satisfies L @ L.T == cov.
    """
    cov = symmetrize(np.asarray(cov, dtype=float))
    if not np.all(np.isfinite(cov)):
        raise NumericalError(
            "Cannot factor a covariance with non-finite entries",
            {"context": context},
        )
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass

    jitter = _floor(cov)
    if jitter > 0.0:
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            pass

    values, vectors = np.linalg.eigh(cov)
    if values.min() < -1e-9 * max(abs(float(np.trace(cov))), 1.0):
        logger.warning(
            "Clamping negative eigenvalue %.3e while factoring %s",
            values.min(),
            context or "covariance",
        )
    return vectors * np.sqrt(np.maximum(values, 0.0))


def sample_gaussian(
    mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw one sample from N(mean, cov); a zero covariance returns the mean."""
    mean = np.asarray(mean, dtype=float)
    root = sqrt_matrix(cov, context="sampling")
    return mean + root @ rng.standard_normal(mean.shape[0])
