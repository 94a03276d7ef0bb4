"""
Linear learners run on the extracted features z.

- svm_step:  Pegasos hinge-loss SGD, lambda_p = 1/C, eta_t = 1/(lambda_p t)
- lms_step:  regularized LMS adaptive filter
- ridge_closed_form: kernel ridge regression coefficients
- FeatureWhitener: running centering/decorrelation of z ahead of either learner

Both online learners carry an unregularized intercept b next to w.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from commons.exceptions import DimensionError, InputError
from commons.linalg import spd_solve, symmetrize

logger = logging.getLogger(__name__)

LMS_SAFETY = 0.5
WHITEN_RIDGE = 1e-6


@dataclass
class LinearModel:
    """
    Weights, intercept and the per-learner state: step counter t for
    Pegasos, the running max ||z||^2 for the default LMS step.
    """

    w: np.ndarray
    b: float = 0.0
    t: int = 0
    C: float = 1.0
    lambda_reg: float = 0.0
    mu: Optional[float] = None
    project: bool = True
    fit_intercept: bool = True
    z_sq_max: float = field(default=0.0, repr=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 1:
            raise DimensionError(f"weights must be a vector, got shape {self.w.shape}")
        if not self.C > 0:
            raise InputError(f"C must be > 0, got {self.C}")
        if self.lambda_reg < 0:
            raise InputError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.mu is not None and not self.mu > 0:
            raise InputError(f"LMS step must be > 0, got {self.mu}")

    @classmethod
    def zeros(cls, dim: int, **kwargs) -> "LinearModel":
        return cls(w=np.zeros(dim), **kwargs)


def _check(m: LinearModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != m.w.shape:
        raise DimensionError(f"feature has shape {z.shape}, weights {m.w.shape}")
    return z


def svm_step(m: LinearModel, z, y: float) -> LinearModel:
    """
    w <- (1 - eta_t lambda_p) w + [y (w^T z + b) < 1] eta_t y z, followed by
    the projection onto the ball of radius 1/sqrt(lambda_p) when enabled.
    The intercept takes the same step, b <- b + eta_t y, and is neither
    shrunk nor projected.
    """
    z = _check(m, z)
    if y not in (-1, 1):
        raise InputError(f"classification labels must be +1/-1, got {y}")
    lam_p = 1.0 / m.C
    m.t += 1
    eta = 1.0 / (lam_p * m.t)
    violated = y * predict(m, z) < 1.0
    w = (1.0 - eta * lam_p) * m.w
    if violated:
        w = w + eta * y * z
        if m.fit_intercept:
            m.b += eta * y
    if m.project:
        radius = 1.0 / np.sqrt(lam_p)
        norm = float(np.linalg.norm(w))
        if norm > radius:
            w = w * (radius / norm)
    m.w = w
    return m


def lms_step(m: LinearModel, z, y: float) -> LinearModel:
    """
    w <- w + mu [(y - w^T z - b) z - lambda_reg w],   b <- b + mu (y - w^T z - b)

    Without an explicit mu, mu = 0.5 / (max ||z||^2 seen + 1 + lambda_reg);
    the 1 accounts for the intercept input and is dropped without one.
    """
    z = _check(m, z)
    m.z_sq_max = max(m.z_sq_max, float(z @ z))
    mu = m.mu
    if mu is None:
        denom = m.z_sq_max + float(m.fit_intercept) + m.lambda_reg
        mu = LMS_SAFETY / denom if denom > 0 else LMS_SAFETY
    err = y - predict(m, z)
    m.w = m.w + mu * (err * z - m.lambda_reg * m.w)
    if m.fit_intercept:
        m.b += mu * err
    m.t += 1
    return m


def ridge_closed_form(K, y, lam: float) -> np.ndarray:
    """beta = (K + lam N I)^-1 y."""
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    N = K.shape[0]
    if K.shape != (N, N) or y.shape != (N,):
        raise DimensionError(f"K {K.shape} and y {y.shape} do not match")
    if not lam > 0:
        raise InputError(f"ridge lambda must be > 0, got {lam}")
    if N == 0:
        return np.zeros(0)
    return spd_solve(0.5 * (K + K.T) + lam * N * np.eye(N), y)


def predict(m: LinearModel, z) -> float:
    return float(m.w @ _check(m, z)) + m.b


def classify(m: LinearModel, z) -> int:
    """sign(w^T z + b) with sign(0) = +1."""
    return 1 if predict(m, z) >= 0 else -1


class FeatureWhitener:
    """
    Running mean and covariance of z (Welford), and the map

        z -> (Sigma + eps I)^{-1/2} (z - mean),   eps = 1e-6 tr(Sigma) / d

    built from the eigendecomposition of Sigma. Directions with no variance
    stay at zero instead of being blown up. Before two samples have been
    seen, or while Sigma is still zero, z is only centered.
    """

    def __init__(self, dim: int, ridge: float = WHITEN_RIDGE):
        if dim < 1:
            raise InputError(f"feature dimension must be >= 1, got {dim}")
        if not ridge > 0:
            raise InputError(f"whitening ridge must be > 0, got {ridge}")
        self.ridge = float(ridge)
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))
        self._root: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cov(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self._m2)
        return symmetrize(self._m2 / self.count)

    def update(self, z) -> "FeatureWhitener":
        z = np.asarray(z, dtype=float)
        if z.shape != self.mean.shape:
            raise DimensionError(f"feature has shape {z.shape}, whitener expects {self.mean.shape}")
        self.count += 1
        delta = z - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + np.outer(delta, z - self.mean)
        self._root = None
        return self

    def _inverse_root(self) -> Optional[np.ndarray]:
        if self._root is None:
            cov = self.cov
            total = float(np.trace(cov))
            if total <= 0.0:
                return None
            w, V = np.linalg.eigh(cov)
            w = np.clip(w, 0.0, None) + self.ridge * total / self.dim
            self._root = (V / np.sqrt(w)) @ V.T
        return self._root

    def transform(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != self.mean.shape:
            raise DimensionError(f"feature has shape {z.shape}, whitener expects {self.mean.shape}")
        root = self._inverse_root()
        centered = z - self.mean
        return centered if root is None else root @ centered
