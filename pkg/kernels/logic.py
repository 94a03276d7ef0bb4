"""
Reproducing kernels and the PSD square-root factor.

- gaussian:   exp(-||x - y||^2 / gamma)
- polynomial: (x^T y + offset)^degree
- linear:     x^T y

Every evaluation (scalar, vector, matrix) goes through ``_pairwise`` so that
a Gram matrix bordered one column at a time equals the one rebuilt from
scratch entry for entry.
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist

from commons.exceptions import DimensionError, InputError, NotPSDError

logger = logging.getLogger(__name__)

KernelFamily = Literal["gaussian", "polynomial", "linear"]
FAMILIES = ("gaussian", "polynomial", "linear")

PSD_TOL = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily = "gaussian"
    gamma: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}")
        if self.family == "gaussian" and not self.gamma > 0:
            raise InputError(f"gaussian kernel needs gamma > 0, got {self.gamma}")
        if self.family == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise InputError(f"polynomial degree must be a positive integer, got {self.degree}")
            if self.offset < 0:
                raise InputError(f"polynomial offset must be >= 0, got {self.offset}")


def _as_rows(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError(f"{name} must be a vector or a 2-D array, got shape {X.shape}")
    return X


def _pairwise(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))
    if spec.family == "gaussian":
        return np.exp(-cdist(X, Y, "sqeuclidean") / spec.gamma)
    G = X @ Y.T
    if spec.family == "polynomial":
        return (G + spec.offset) ** int(spec.degree)
    return G


def eval_kernel(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1:
        raise DimensionError("eval_kernel takes two vectors")
    return float(_pairwise(spec, x[None, :], y[None, :])[0, 0])


def kernel_vector(spec: KernelSpec, basis, x) -> np.ndarray:
    """k(basis, x) as a vector of length |basis|."""
    B = _as_rows(basis, "basis")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"query must be a vector, got shape {x.shape}")
    if B.shape[0] == 0:
        return np.zeros(0)
    return _pairwise(spec, B, x[None, :])[:, 0]


def kernel_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Gram matrix k(X, X), or the cross matrix k(X, Y) when Y is given."""
    X = _as_rows(X, "X")
    if Y is None:
        K = _pairwise(spec, X, X)
        # exact symmetry; gemm does not promise it
        return np.triu(K) + np.triu(K, 1).T
    return _pairwise(spec, X, _as_rows(Y, "Y"))


def psd_sqrt_factor(M) -> np.ndarray:
    """
    Symmetric square root G of a PSD matrix, so that G^T G = M.

    Eigenvalues down to -1e-10 * ||M||_F are treated as rounding and clamped
    to zero; anything more negative raises NotPSDError. The symmetric root is
    unique, so features mapped through it do not flip sign between calls on
    nearby matrices.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] == 0:
        return np.zeros((0, 0))
    scale = np.linalg.norm(M)
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12 * max(scale, 1.0)):
        raise NotPSDError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    tol = PSD_TOL * scale
    if w[0] < -tol:
        raise NotPSDError(f"smallest eigenvalue {w[0]:.3e} below -{tol:.3e}")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T
