"""
Kernel matrix approximation by the extracted features, and the checks that
bound how far kernel-based learners move when K is replaced by K_hat.
"""

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from commons.exceptions import DimensionError, InputError, PreconditionError
from kernels.logic import KernelSpec, kernel_matrix, psd_sqrt_factor
from learners.logic import ridge_closed_form
from subspace.logic import SubspaceModel, extract_feature, ls_fit

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-9
POWER_TOL = 1e-8
POWER_MAX_ITER = 10_000


@dataclass
class ErrorRecord:
    e: float
    y: Optional[float] = None


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    holds: bool
    slack: float
    hypothesis_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _report(name: str, lhs: float, rhs: float, hypothesis_ok: bool) -> BoundReport:
    return BoundReport(
        name=name,
        lhs=float(lhs),
        rhs=float(rhs),
        holds=bool(lhs <= rhs + BOUND_SLACK),
        slack=float(rhs - lhs),
        hypothesis_ok=bool(hypothesis_ok),
    )


def feature_map_z(model: SubspaceModel, q) -> np.ndarray:
    """z = (A^T K_S A)^{1/2} q, so that z_i^T z_j = q_i^T A^T K_S A q_j."""
    q = np.asarray(getattr(q, "q", q), dtype=float)
    if q.shape != (model.r,):
        raise DimensionError(f"feature must have length {model.r}, got shape {q.shape}")
    return psd_sqrt_factor(model.projected_gram()) @ q


def feature_matrix(model: SubspaceModel, X) -> np.ndarray:
    """Q (r x N) of the samples in X against a fixed model."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = np.zeros((model.r, X.shape[0]))
    for j, x in enumerate(X):
        Q[:, j] = extract_feature(model, x).q
    return Q


def approx_kernel_matrix(model: SubspaceModel, Q) -> np.ndarray:
    """K_hat = Q^T A^T K_S A Q."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != model.r:
        raise DimensionError(f"Q must be r x N with r={model.r}, got shape {Q.shape}")
    K_hat = Q.T @ model.projected_gram() @ Q
    return 0.5 * (K_hat + K_hat.T)


def kernel_mismatch(K, K_hat) -> float:
    """(1/N) ||K - K_hat||_F."""
    K = np.asarray(K, dtype=float)
    K_hat = np.asarray(K_hat, dtype=float)
    if K.shape != K_hat.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"shape mismatch: {K.shape} vs {K_hat.shape}")
    N = K.shape[0]
    if N == 0:
        return 0.0
    return float(np.linalg.norm(K - K_hat, "fro") / N)


def window_mismatch(X_window, model: SubspaceModel) -> float:
    """Mismatch of one window scored against a single model state."""
    X_window = np.atleast_2d(np.asarray(X_window, dtype=float))
    K = kernel_matrix(model.spec, X_window)
    K_hat = approx_kernel_matrix(model, feature_matrix(model, X_window))
    return kernel_mismatch(K, K_hat)


def windowed_mismatch(X, model_trajectory: Sequence[SubspaceModel], N_wind: int) -> float:
    """
    Average mismatch over the N - N_wind windows of length N_wind ending at
    samples N_wind+1 .. N. Each window is scored against the model as it was
    right after its last sample, i.e. ``model_trajectory[t]`` for window end t
    (0-based).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if N_wind < 1:
        raise InputError(f"window length must be >= 1, got {N_wind}")
    if N <= N_wind:
        raise PreconditionError(f"need more than {N_wind} samples, got {N}")
    if len(model_trajectory) != N:
        raise DimensionError(f"trajectory has {len(model_trajectory)} states for {N} samples")
    values = [
        window_mismatch(X[end - N_wind + 1: end + 1], model_trajectory[end])
        for end in range(N_wind, N)
    ]
    return float(np.mean(values))


def spectral_norm(M, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER, seed: int = 0) -> float:
    """Largest singular value of a symmetric matrix by power iteration."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if M.size == 0 or not np.any(M):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = M @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - estimate) <= tol * norm:
            return norm
        estimate = norm
    logger.warning("power iteration did not converge in %d iterations", max_iter)
    return estimate


def check_prop4(errors: List[ErrorRecord], K, K_hat) -> BoundReport:
    """
    Deterministic kernel-approximation bound:

        (1/N) ||K - K_hat||_F <= sqrt(e_bar) (sqrt(e_bar) + 2)

    with e_bar the mean LS fit. The hypotheses are e_i in [0, 1] and
    |k| <= 1 on the data; e_i must come from the same model as K_hat.
    """
    K = np.asarray(K, dtype=float)
    e = np.array([float(getattr(rec, "e", rec)) for rec in errors])
    if e.shape[0] != K.shape[0]:
        raise DimensionError(f"{e.shape[0]} error records for a {K.shape[0]}-sample kernel")
    if e.shape[0] == 0:
        return _report("kernel_approximation", 0.0, 0.0, True)
    lhs = kernel_mismatch(K, K_hat)
    e_bar = float(np.mean(e))
    rhs = np.sqrt(e_bar) * (np.sqrt(e_bar) + 2.0)
    hypothesis_ok = bool(np.all((e >= 0.0) & (e <= 1.0)) and np.abs(K).max() <= 1.0 + 1e-12)
    return _report("kernel_approximation", lhs, rhs, hypothesis_ok)


def check_prop7(K, K_hat, y, lam: float) -> BoundReport:
    """
    Kernel ridge regression stability:

        ||beta* - beta_hat*|| <= B_y ||K - K_hat||_2 / (lam^2 N)

    with beta* = (K + lam N I)^-1 y and B_y = max |y|.
    """
    K = np.asarray(K, dtype=float)
    K_hat = np.asarray(K_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if K.shape != K_hat.shape or y.shape != (K.shape[0],):
        raise DimensionError(f"shapes K {K.shape}, K_hat {K_hat.shape}, y {y.shape} do not match")
    if not lam > 0:
        raise InputError(f"ridge lambda must be > 0, got {lam}")
    N = K.shape[0]
    beta = ridge_closed_form(K, y, lam)
    beta_hat = ridge_closed_form(K_hat, y, lam)
    lhs = float(np.linalg.norm(beta - beta_hat))
    B_y = float(np.abs(y).max()) if N else 0.0
    rhs = B_y * spectral_norm(K - K_hat) / (lam ** 2 * N) if N else 0.0
    return _report("ridge_stability", lhs, rhs, True)


def bound_errors(model: SubspaceModel, X, Q) -> List[ErrorRecord]:
    """e_i = LS fit of each sample against ``model`` with its feature Q[:, i]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return [ErrorRecord(e=ls_fit(model, x, Q[:, i])) for i, x in enumerate(X)]


def mismatch_curve(spec: KernelSpec, X, models: Sequence[SubspaceModel]) -> List[float]:
    """Full-sample mismatch of X against each model (e.g. one per rank)."""
    K = kernel_matrix(spec, X)
    return [kernel_mismatch(K, approx_kernel_matrix(m, feature_matrix(m, X))) for m in models]
