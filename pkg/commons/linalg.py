"""Dense SPD helpers: Cholesky solves with a one-shot jitter retry."""

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import DimensionError, SingularityError

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-12


def spd_factor(M: np.ndarray, jitter: bool = True):
    """
    Cholesky factor of a symmetric positive definite matrix.

    When the factorization fails and ``jitter`` is on, retries once with
    ``1e-12 * tr(M) / dim`` added to the diagonal. ``jitter=False`` is used
    when no ridge term guarantees definiteness (λ = 0).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SingularityError("matrix has non-finite entries")
    try:
        return cho_factor(M, lower=True, check_finite=False)
    except LinAlgError:
        if not jitter:
            raise SingularityError("matrix is not positive definite") from None
    dim = M.shape[0]
    eps = JITTER_SCALE * max(np.trace(M), 0.0) / dim
    logger.debug("cholesky failed, retrying with jitter %.3e", eps)
    try:
        return cho_factor(M + eps * np.eye(dim), lower=True, check_finite=False)
    except LinAlgError:
        raise SingularityError(f"matrix is not positive definite (jitter {eps:.3e})") from None


def spd_solve(M: np.ndarray, B: np.ndarray, jitter: bool = True) -> np.ndarray:
    return cho_solve(spd_factor(M, jitter=jitter), np.asarray(B, dtype=float), check_finite=False)


def spd_inverse(M: np.ndarray, jitter: bool = True) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor, symmetrized."""
    inv = spd_solve(M, np.eye(np.asarray(M).shape[0]), jitter=jitter)
    return 0.5 * (inv + inv.T)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)
