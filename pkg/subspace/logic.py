"""
Kernel subspace model L = Phi_S A and its learners.

Batch solver (alternating minimization over the whole dataset), plus the two
online trackers. Both admit every sample to the support set; the parametric
one treats L as a free matrix and takes a plain gradient step, the
nonparametric one takes the kernel-weighted step on A (the gradient in L
mapped back through K_S). Budgeting and censoring live in ``budget.logic``.

A model seeded from one sample stays rank one in exact arithmetic under
either update (every q is a multiple of the seed row), so other directions
only grow out of rounding, at a rate set by their eigenvalue over lam. The
``kpca`` init seeds the model from a warm-up block instead.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Literal, NamedTuple, Optional

import numpy as np

from commons.exceptions import (
    ConsistencyError,
    DimensionError,
    DivergenceError,
    InputError,
    PreconditionError,
)
from commons.linalg import spd_inverse, spd_solve, symmetrize
from kernels.logic import KernelSpec, eval_kernel, kernel_matrix, kernel_vector

logger = logging.getLogger(__name__)

# =====================
# Constants
# =====================
MAX_ITER = 50
FIT_TOL = 1e-9
BATCH_INIT_SCALE = 0.1
KPCA_FLOOR = 1e-10

InitMode = Literal["ones", "random", "kpca"]
INIT_MODES = ("ones", "random", "kpca")
StepMode = Literal["harmonic", "harmonic_sq", "inv_feature_norm", "constant"]
STEP_MODES = ("harmonic", "harmonic_sq", "inv_feature_norm", "constant")


@dataclass
class FeatureVector:
    q: np.ndarray

    def __len__(self):
        return len(self.q)


@dataclass(frozen=True)
class StepSchedule:
    """
    Step size rule for the online updates.

    harmonic c/n, harmonic_sq c/n^2, inv_feature_norm c/||q||, constant c.
    """

    mode: StepMode = "harmonic"
    c: float = 1.0

    def __post_init__(self):
        if self.mode not in STEP_MODES:
            raise InputError(f"unknown step mode {self.mode!r}")
        if not self.c > 0:
            raise InputError(f"step scale must be > 0, got {self.c}")

    def step(self, n: int, q=None) -> float:
        if n < 1:
            raise PreconditionError(f"sample index must be >= 1, got {n}")
        if self.mode == "harmonic":
            return self.c / n
        if self.mode == "harmonic_sq":
            return self.c / (n * n)
        if self.mode == "inv_feature_norm":
            norm = 0.0 if q is None else float(np.linalg.norm(q))
            # q = 0 only when x is orthogonal to every support vector
            return self.c / norm if norm > 0 else self.c
        return self.c


class SubspaceModel:
    """
    Support set S, coefficient matrix A (|S| x r), Gram matrix K_S and the
    cached regularized inverse (A^T K_S A + lam I)^-1.

    The support inputs and K_S live in capacity-doubling buffers so that
    bordering K_S on admission costs O(|S|).
    """

    def __init__(self, spec: KernelSpec, x0, A0, lam: float, n: int = 1):
        x0 = np.asarray(x0, dtype=float)
        A0 = np.atleast_2d(np.asarray(A0, dtype=float))
        if x0.ndim != 1:
            raise DimensionError(f"initial support vector must be a vector, got shape {x0.shape}")
        if A0.shape[0] != 1:
            raise DimensionError(f"initial A must have one row, got shape {A0.shape}")
        if lam < 0:
            raise InputError(f"lambda must be >= 0, got {lam}")
        self.spec = spec
        self.lam = float(lam)
        self.r = A0.shape[1]
        self.n = int(n)
        self.A = A0.copy()
        self.eta = np.ones(1)
        self._X = np.zeros((4, x0.shape[0]))
        self._K = np.zeros((4, 4))
        self._m = 0
        self._admit_buffers(x0, np.zeros(0), eval_kernel(spec, x0, x0))
        self.invalidate()

    # ---------- views ----------
    @property
    def dim(self) -> int:
        return self._X.shape[1]

    @property
    def sv_count(self) -> int:
        return self._m

    @property
    def support_x(self) -> np.ndarray:
        return self._X[: self._m]

    @property
    def K_S(self) -> np.ndarray:
        return self._K[: self._m, : self._m]

    # ---------- caches ----------
    def invalidate(self):
        self._KA = None
        self._gram = None
        self._gram_inv = None

    def replace_A(self, A: np.ndarray, gram: Optional[np.ndarray] = None):
        """Install new coefficients; ``gram`` is A^T K_S A when the caller already has it."""
        self.A = A
        self.invalidate()
        if gram is not None:
            self._gram = symmetrize(gram)

    def kernel_times_A(self) -> np.ndarray:
        """K_S A (|S| x r)."""
        if self._KA is None:
            self._KA = self.K_S @ self.A
        return self._KA

    def projected_gram(self) -> np.ndarray:
        """A^T K_S A (r x r)."""
        if self._gram is None:
            self._gram = symmetrize(self.A.T @ self.kernel_times_A())
        return self._gram

    def regularized_inverse(self) -> np.ndarray:
        """M_cache = (A^T K_S A + lam I)^-1, recomputed when invalid."""
        if self._gram_inv is None:
            M = self.projected_gram() + self.lam * np.eye(self.r)
            self._gram_inv = spd_inverse(M, jitter=self.lam > 0)
        return self._gram_inv

    # ---------- support set edits ----------
    def _admit_buffers(self, x: np.ndarray, k: np.ndarray, kappa: float):
        m = self._m
        if m == self._X.shape[0]:
            cap = 2 * m
            X = np.zeros((cap, self.dim))
            X[:m] = self._X[:m]
            K = np.zeros((cap, cap))
            K[:m, :m] = self._K[:m, :m]
            self._X, self._K = X, K
        self._X[m] = x
        self._K[m, :m] = k
        self._K[:m, m] = k
        self._K[m, m] = kappa
        self._m = m + 1

    def admit(self, x, k: Optional[np.ndarray] = None, kappa: Optional[float] = None):
        """
        Append x to S with eta = 1 and border K_S. A is left to the caller,
        which must append the matching row before the model is used again.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        if k is None:
            k = kernel_vector(self.spec, self.support_x, x)
        if kappa is None:
            kappa = eval_kernel(self.spec, x, x)
        self._admit_buffers(x, k, kappa)
        self.eta = np.append(self.eta, 1.0)
        self.invalidate()

    def remove(self, i: int):
        """Drop the i-th support vector, its row of A and its row/column of K_S."""
        m = self._m
        if not 0 <= i < m:
            raise PreconditionError(f"support index {i} out of range [0, {m})")
        if m == 1:
            raise PreconditionError("cannot remove the last support vector")
        keep = np.r_[0:i, i + 1:m]
        self._K[: m - 1, : m - 1] = self._K[np.ix_(keep, keep)]
        self._X[: m - 1] = self._X[keep]
        self._m = m - 1
        self.A = self.A[keep]
        self.eta = self.eta[keep]
        self.invalidate()

    # ---------- inspection ----------
    def snapshot(self) -> "SubspaceModel":
        """Independent copy; only valid between updates."""
        return copy.deepcopy(self)

    def audit(self, atol: float = 1e-10):
        """Recompute K_S and the cached inverse from scratch; raise on drift."""
        if self.A.shape != (self._m, self.r):
            raise ConsistencyError(f"A has shape {self.A.shape}, expected {(self._m, self.r)}")
        if len(self.eta) != self._m:
            raise ConsistencyError("eta length does not match the support set")
        fresh = kernel_matrix(self.spec, self.support_x)
        if not np.allclose(self.K_S, fresh, rtol=1e-12, atol=atol):
            raise ConsistencyError("K_S drifted from the support set kernel matrix")
        M = symmetrize(self.A.T @ fresh @ self.A) + self.lam * np.eye(self.r)
        residual = np.abs(self.regularized_inverse() @ M - np.eye(self.r)).max()
        if residual > 1e-8:
            raise ConsistencyError(f"cached inverse is off by {residual:.3e}")

    def __repr__(self):
        return f"SubspaceModel(r={self.r}, sv_count={self._m}, n={self.n}, lam={self.lam})"


def kpca_model(spec: KernelSpec, X0, r: int, lam: float) -> SubspaceModel:
    """
    Model over a warm-up block X0 (m x D, m >= r): S = X0, n = m and
    A = U_r diag(w_r)^-1/2 from the top r eigenpairs of K_S, so the columns
    of L are the leading kernel principal directions of the block with unit
    norm. Eigenvalues below 1e-10 w_max are floored there.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    m = X0.shape[0]
    if r < 1:
        raise InputError(f"rank must be >= 1, got {r}")
    if m < r:
        raise InputError(f"kpca init needs at least r={r} warm-up samples, got {m}")
    w, U = np.linalg.eigh(kernel_matrix(spec, X0))
    w, U = w[::-1][:r], U[:, ::-1][:, :r]
    floor = KPCA_FLOOR * float(w[0])
    if not floor > 0:
        raise PreconditionError("warm-up block has a zero kernel matrix")
    A = U / np.sqrt(np.maximum(w, floor))
    model = SubspaceModel(spec, X0[0], A[:1], lam)
    for x in X0[1:]:
        model.admit(x)
    model.replace_A(A)
    model.n = m
    logger.debug("kpca init over %d samples, eigenvalues %.3e .. %.3e", m, w[0], w[-1])
    return model


def init_model(
    spec: KernelSpec,
    x,
    r: int,
    lam: float,
    init: InitMode = "ones",
    seed=None,
) -> SubspaceModel:
    """
    Model with S = {x}, n = 1 and A = 1_{1 x r} or i.i.d. uniform(0, 1).
    For ``kpca`` x is the warm-up block handed to ``kpca_model``.
    """
    if r < 1:
        raise InputError(f"rank must be >= 1, got {r}")
    if init == "kpca":
        return kpca_model(spec, x, r, lam)
    if init == "ones":
        A0 = np.ones((1, r))
    elif init == "random":
        A0 = np.random.default_rng(seed).uniform(0.0, 1.0, size=(1, r))
    else:
        raise InputError(f"unknown init {init!r}")
    return SubspaceModel(spec, x, A0, lam)


def seed_block(X: np.ndarray, r: int, init: InitMode, warmup: Optional[int] = None):
    """
    (seed, m): what ``init_model`` takes for a finite stream X and how many
    leading samples it consumes. Only ``kpca`` uses a warm-up block, r
    samples unless ``warmup`` says otherwise.
    """
    if X.shape[0] == 0:
        raise InputError("empty stream")
    if init != "kpca":
        if warmup not in (None, 1):
            raise InputError(f"a warm-up block needs init='kpca', got init={init!r}")
        return X[0], 1
    m = r if warmup is None else int(warmup)
    if not r <= m <= X.shape[0]:
        raise InputError(f"kpca warm-up must satisfy r={r} <= m <= N={X.shape[0]}, got {m}")
    return X[:m], m


# =====================
# Feature extraction
# =====================
class Projection(NamedTuple):
    q: np.ndarray
    k: np.ndarray       # k(x_S, x)
    kappa: float        # k(x, x)


def project(model: SubspaceModel, x) -> Projection:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise DimensionError(f"expected a vector of length {model.dim}, got shape {x.shape}")
    k = kernel_vector(model.spec, model.support_x, x)
    q = model.regularized_inverse() @ (model.A.T @ k)
    return Projection(q=q, k=k, kappa=eval_kernel(model.spec, x, x))


def extract_feature(model: SubspaceModel, x) -> FeatureVector:
    """q = (A^T K_S A + lam I)^-1 A^T k(x_S, x)."""
    return FeatureVector(q=project(model, x).q)


def projection_fit(model: SubspaceModel, proj: Projection) -> float:
    Aq = model.A @ proj.q
    cross = float(proj.k @ Aq)
    quad = float(proj.q @ model.projected_gram() @ proj.q)
    value = proj.kappa - 2.0 * cross + quad
    if value < 0.0:
        if value < -FIT_TOL * max(1.0, abs(proj.kappa), quad):
            raise ConsistencyError(f"negative LS fit {value:.3e}")
        value = 0.0
    return value


def ls_fit(model: SubspaceModel, x, q) -> float:
    """||phi(x) - L q||^2 expanded through the kernel trick, clamped at 0."""
    q = np.asarray(getattr(q, "q", q), dtype=float)
    if q.shape != (model.r,):
        raise DimensionError(f"feature must have length {model.r}, got shape {q.shape}")
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise DimensionError(f"expected a vector of length {model.dim}, got shape {x.shape}")
    proj = Projection(
        q=q,
        k=kernel_vector(model.spec, model.support_x, x),
        kappa=eval_kernel(model.spec, x, x),
    )
    return projection_fit(model, proj)


def average_fit(model: SubspaceModel, X, Q) -> float:
    """
    (1/n) sum ||phi(x_v) - L q_v||^2 with the current subspace and stored
    features, i.e. the cumulative fit of a stream scored by its final model.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if X.shape[0] != Q.shape[0]:
        raise DimensionError(f"{X.shape[0]} samples but {Q.shape[0]} features")
    if X.shape[0] == 0:
        return 0.0
    Kx = kernel_matrix(model.spec, X, model.support_x)
    diag = np.array([eval_kernel(model.spec, x, x) for x in X])
    AQ = Q @ model.A.T
    quad = np.einsum("ij,jk,ik->i", Q, model.projected_gram(), Q)
    fits = diag - 2.0 * np.einsum("ij,ij->i", Kx, AQ) + quad
    return float(np.mean(np.clip(fits, 0.0, None)))


# =====================
# Batch solver
# =====================
def _batch_fits(K: np.ndarray, A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    KA = K @ A
    cross = np.einsum("ij,ji->i", KA, Q)
    quad = np.einsum("ij,jk,ki->i", Q.T, A.T @ KA, Q)
    return np.diag(K) - 2.0 * cross + quad


def _batch_objective(K: np.ndarray, A: np.ndarray, Q: np.ndarray, lam: float) -> float:
    N = K.shape[0]
    fits = _batch_fits(K, A, Q)
    reg = np.trace(A.T @ K @ A) + np.sum(Q * Q)
    return float(fits.sum() / (2 * N) + lam * reg / (2 * N))


def objective(X, A, Q, spec: KernelSpec, lam: float) -> float:
    """
    (1/2N) sum [k(x,x) - 2 k^T A q + q^T A^T K A q]
    + (lam/2N) [tr(A^T K A) + sum ||q||^2], with A over all N inputs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    N = X.shape[0]
    if A.shape[0] != N or Q.shape != (A.shape[1], N):
        raise DimensionError(f"A {A.shape} and Q {Q.shape} do not match N={N}")
    return _batch_objective(kernel_matrix(spec, X), A, Q, lam)


def stationarity_residual(K: np.ndarray, A: np.ndarray, Q: np.ndarray, lam: float) -> float:
    """Frobenius norm of the objective gradient in (A, Q)."""
    N = K.shape[0]
    G = A.T @ K @ A
    grad_Q = ((G + lam * np.eye(G.shape[0])) @ Q - A.T @ K) / N
    grad_A = K @ (A @ (Q @ Q.T + lam * np.eye(Q.shape[0])) - Q.T) / N
    return float(np.sqrt(np.sum(grad_A ** 2) + np.sum(grad_Q ** 2)))


@dataclass
class BatchResult:
    A: np.ndarray
    Q: np.ndarray
    objective_trace: List[float]
    converged: bool
    iterations: int
    residual: float
    fits: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def batch_bkfe(
    X,
    spec: KernelSpec,
    r: int,
    lam: float,
    max_iter: int = MAX_ITER,
    tol: float = 1e-8,
    seed=None,
) -> BatchResult:
    """
    Alternating minimization of the batch objective:

        Q = (A^T K A + lam I)^-1 A^T K
        A = Q^T (Q Q^T + lam I)^-1

    Stops when the objective moves by less than ``tol`` or after
    ``max_iter`` sweeps. The objective trace is non-increasing.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if N < 1:
        raise InputError("batch solver needs at least one sample")
    if r < 1 or r > N:
        raise InputError(f"rank must satisfy 1 <= r <= N={N}, got {r}")
    if not lam > 0:
        raise InputError(f"batch solver needs lambda > 0, got {lam}")
    K = kernel_matrix(spec, X)
    A = np.random.default_rng(seed).uniform(0.0, 1.0, size=(N, r)) * BATCH_INIT_SCALE
    I_r = np.eye(r)

    trace: List[float] = []
    converged = False
    Q = np.zeros((r, N))
    for it in range(1, max_iter + 1):
        KA = K @ A
        Q = spd_solve(symmetrize(A.T @ KA) + lam * I_r, KA.T)
        A = spd_solve(symmetrize(Q @ Q.T) + lam * I_r, Q).T
        value = _batch_objective(K, A, Q, lam)
        if not np.isfinite(value):
            raise DivergenceError(f"objective became {value} at iteration {it}")
        trace.append(value)
        if len(trace) > 1 and abs(trace[-2] - value) < tol:
            converged = True
            break

    residual = stationarity_residual(K, A, Q, lam)
    if converged:
        logger.info("batch solver converged in %d iterations (objective %.6e)", len(trace), trace[-1])
    else:
        logger.warning("batch solver stopped at max_iter=%d (objective %.6e)", max_iter, trace[-1])
    return BatchResult(
        A=A,
        Q=Q,
        objective_trace=trace,
        converged=converged,
        iterations=len(trace),
        residual=residual,
        fits=np.clip(_batch_fits(K, A, Q), 0.0, None),
    )


# =====================
# Online updates
# =====================
def _check_step(model: SubspaceModel, q, mu: float) -> np.ndarray:
    q = np.asarray(getattr(q, "q", q), dtype=float)
    if q.shape != (model.r,):
        raise DimensionError(f"feature must have length {model.r}, got shape {q.shape}")
    if not (np.isfinite(mu) and mu >= 0):
        raise InputError(f"step size must be finite and >= 0, got {mu}")
    return q


def parametric_update(
    model: SubspaceModel,
    x,
    q,
    mu: float,
    k: Optional[np.ndarray] = None,
) -> SubspaceModel:
    """
    Every sample joins S:

        A <- [A - mu A (q q^T + (lam/n) I) ; mu q^T]

    A^T K_S A is carried over in O(|S| r) instead of being recomputed:
    with M = I - mu (q q^T + (lam/n) I) and g = A^T k(x_S, x),

        A_+^T K_+ A_+ = M G M + mu (M g q^T + q g^T M) + mu^2 k(x, x) q q^T
    """
    q = _check_step(model, q, mu)
    n = model.n + 1
    x = np.asarray(x, dtype=float)
    if k is None:
        k = kernel_vector(model.spec, model.support_x, x)
    kappa = eval_kernel(model.spec, x, x)
    M = np.eye(model.r) - mu * (np.outer(q, q) + (model.lam / n) * np.eye(model.r))
    g = model.A.T @ k
    Mgq = np.outer(M @ g, q)
    gram = M @ model.projected_gram() @ M + mu * (Mgq + Mgq.T) + mu * mu * kappa * np.outer(q, q)
    A = np.vstack([model.A @ M, mu * q[None, :]])
    model.admit(x, k=k, kappa=kappa)
    model.replace_A(A, gram=gram)
    model.n = n
    return model


def nonparametric_update(
    model: SubspaceModel,
    x,
    q,
    mu: float,
    k: Optional[np.ndarray] = None,
) -> SubspaceModel:
    """
    Kernel-weighted step on the enlarged support set:

        G = K_+ [A;0] q q^T - k_+ q^T + (lam/n) K_+ [A;0]
        A <- [A;0] - mu G

    K_+ [A;0] = [K_S A ; k^T A] reuses the cached K_S A, so the step costs
    one O(|S| r) border instead of a pass over K_+. ``k`` may carry
    k(x_S, x) when the caller already computed it.
    """
    q = _check_step(model, q, mu)
    n = model.n + 1
    KA = model.kernel_times_A()
    A = model.A
    model.admit(x, k=k)
    k_plus = model.K_S[:, -1]
    KA0 = np.vstack([KA, (k_plus[:-1] @ A)[None, :]])
    G = KA0 @ (np.outer(q, q) + (model.lam / n) * np.eye(model.r)) - np.outer(k_plus, q)
    model.replace_A(np.vstack([A, np.zeros((1, model.r))]) - mu * G)
    model.n = n
    return model


UpdateRule = Literal["parametric", "nonparametric"]


@dataclass
class OnlineRun:
    model: SubspaceModel
    Q: np.ndarray
    fits: np.ndarray
    start: int = 1


def track_online(
    X,
    spec: KernelSpec,
    r: int,
    lam: float,
    schedule: StepSchedule,
    rule: UpdateRule = "nonparametric",
    init: InitMode = "ones",
    seed=None,
    warmup: Optional[int] = None,
    on_step: Optional[Callable[[int, SubspaceModel], None]] = None,
) -> OnlineRun:
    """
    Unbudgeted online tracker over a finite stream. The first sample (the
    first ``warmup`` samples with init="kpca") seeds the model; every later
    sample is projected, scored and then used for an update. Returned
    features/fits are those of samples start+1..N, ``start`` being the
    size of the seed block.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if rule not in ("parametric", "nonparametric"):
        raise InputError(f"unknown update rule {rule!r}")
    seed_x, start = seed_block(X, r, init, warmup)
    model = init_model(spec, seed_x, r, lam, init=init, seed=seed)
    update = parametric_update if rule == "parametric" else nonparametric_update
    Q = np.zeros((X.shape[0] - start, r))
    fits = np.zeros(X.shape[0] - start)
    for t, x in enumerate(X[start:]):
        proj = project(model, x)
        Q[t] = proj.q
        fits[t] = projection_fit(model, proj)
        update(model, x, proj.q, schedule.step(model.n + 1, proj.q), k=proj.k)
        if on_step is not None:
            on_step(start + t + 1, model)
    return OnlineRun(model=model, Q=Q, fits=fits, start=start)
