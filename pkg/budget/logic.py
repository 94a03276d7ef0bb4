"""
Budgeted, censored online kernel feature extraction.

Each sample is projected on the current subspace; a fit below the censoring
threshold leaves the model untouched. Otherwise the sample joins the support
set through the nonparametric update and, if that pushes |S| past the
budget B, one support vector is removed.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Literal, Optional, Tuple

import numpy as np

from commons.exceptions import InputError, PreconditionError
from kernels.logic import KernelSpec
from subspace.logic import (
    InitMode,
    StepSchedule,
    SubspaceModel,
    init_model,
    nonparametric_update,
    project,
    projection_fit,
    seed_block,
)

logger = logging.getLogger(__name__)

CENSOR_WINDOW = 100
CLIP_LOW, CLIP_HIGH = 0.5, 2.0

CensorMode = Literal["fixed", "adaptive"]
RemovalRule = Literal["recency_min_norm", "brute_force", "fifo"]
REMOVAL_RULES = ("recency_min_norm", "brute_force", "fifo")


@dataclass
class CensorPolicy:
    """
    Threshold on the LS fit below which a sample is skipped.

    In adaptive mode epsilon follows a moving window of recent fits so that
    the fraction of admitted samples tracks ``target_rate``.
    """

    epsilon: float = 0.0
    mode: CensorMode = "fixed"
    target_rate: float = 0.5
    window: int = CENSOR_WINDOW
    fits: Deque[float] = field(default_factory=deque, repr=False)
    admitted: Deque[bool] = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise InputError(f"unknown censoring mode {self.mode!r}")
        if self.epsilon < 0:
            raise InputError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 < self.target_rate <= 1:
            raise InputError(f"target rate must be in (0, 1], got {self.target_rate}")
        if self.window < 1:
            raise InputError(f"window must be >= 1, got {self.window}")
        self.fits = deque(self.fits, maxlen=self.window)
        self.admitted = deque(self.admitted, maxlen=self.window)

    @classmethod
    def adaptive(cls, target_rate: float = 0.5, window: int = CENSOR_WINDOW) -> "CensorPolicy":
        return cls(epsilon=0.0, mode="adaptive", target_rate=target_rate, window=window)

    @property
    def observed_rate(self) -> float:
        if not self.admitted:
            return 1.0
        return sum(self.admitted) / len(self.admitted)


@dataclass(frozen=True)
class BudgetPolicy:
    B: Optional[int] = None
    beta: float = 1.0
    rule: RemovalRule = "recency_min_norm"

    def __post_init__(self):
        if self.B is not None and self.B < 1:
            raise InputError(f"budget must be >= 1, got {self.B}")
        if not 0 < self.beta <= 1:
            raise InputError(f"beta must be in (0, 1], got {self.beta}")
        if self.rule not in REMOVAL_RULES:
            raise InputError(f"unknown removal rule {self.rule!r}")


@dataclass
class StepResult:
    q: np.ndarray
    fit: float
    censored: bool
    removed_index: Optional[int]
    sv_count: int


def censor_decide(fit: float, policy: CensorPolicy) -> bool:
    """True when the sample is censored (fit < epsilon). Records history."""
    censored = fit < policy.epsilon
    policy.fits.append(float(fit))
    policy.admitted.append(not censored)
    return censored


def adapt_threshold(policy: CensorPolicy) -> float:
    """
    epsilon <- mean(window fits) * observed_rate / target_rate, clipped to
    [0.5, 2] x the previous epsilon once epsilon is positive.
    """
    if policy.mode != "adaptive" or not policy.fits:
        return policy.epsilon
    proposal = float(np.mean(policy.fits)) * policy.observed_rate / policy.target_rate
    previous = policy.epsilon
    if previous > 0:
        proposal = min(max(proposal, CLIP_LOW * previous), CLIP_HIGH * previous)
    if proposal != previous:
        logger.debug("censoring threshold %.4e -> %.4e", previous, proposal)
    policy.epsilon = proposal
    return proposal


def distortion_of_removal(model: SubspaceModel, i: int) -> float:
    """
    tr{A^T K A - 2 A_-i^T K(S\\i, S) A + A_-i^T K(S\\i, S\\i) A_-i}, the
    squared HS distance between the subspace before and after dropping i.
    """
    m = model.sv_count
    if not 0 <= i < m:
        raise PreconditionError(f"support index {i} out of range [0, {m})")
    keep = np.r_[0:i, i + 1:m]
    K, A = model.K_S, model.A
    A_rest = A[keep]
    value = (
        np.trace(A.T @ K @ A)
        - 2.0 * np.trace(A_rest.T @ K[keep] @ A)
        + np.trace(A_rest.T @ K[np.ix_(keep, keep)] @ A_rest)
    )
    return max(float(value), 0.0)


def select_removal(model: SubspaceModel, rule: RemovalRule) -> int:
    if rule == "fifo":
        return 0
    if rule == "brute_force":
        scores = np.array([distortion_of_removal(model, i) for i in range(model.sv_count)])
    else:
        scores = model.eta * np.linalg.norm(model.A, axis=1)
    # argmin keeps the smallest index on ties
    return int(np.argmin(scores))


def maintain_budget(model: SubspaceModel, budget: BudgetPolicy) -> Tuple[SubspaceModel, int]:
    """Remove one support vector from an over-budget model."""
    if budget.B is None or model.sv_count <= budget.B:
        raise PreconditionError(f"support set of {model.sv_count} is within budget {budget.B}")
    i = select_removal(model, budget.rule)
    logger.debug("budget %s: removing support vector %d of %d", budget.rule, i, model.sv_count)
    model.remove(i)
    return model, i


FeatureHook = Callable[[SubspaceModel, np.ndarray], None]


def okfeb_step(
    model: SubspaceModel,
    x,
    censor: CensorPolicy,
    budget: BudgetPolicy,
    schedule: StepSchedule,
    feature_hook: Optional[FeatureHook] = None,
) -> Tuple[SubspaceModel, StepResult]:
    """
    One streaming step:
      1. q, fit against the current model (``feature_hook`` sees them here)
      2. censored -> only n advances
      3. degrade prior eta by beta, nonparametric update on S + {x}
      4. over budget -> maintain_budget
    """
    proj = project(model, x)
    fit = projection_fit(model, proj)
    if feature_hook is not None:
        feature_hook(model, proj.q)

    censored = censor_decide(fit, censor)
    adapt_threshold(censor)
    if censored:
        model.n += 1
        return model, StepResult(q=proj.q, fit=fit, censored=True, removed_index=None, sv_count=model.sv_count)

    mu = schedule.step(model.n + 1, proj.q)
    model.eta *= budget.beta
    nonparametric_update(model, x, proj.q, mu, k=proj.k)
    removed = None
    if budget.B is not None and model.sv_count > budget.B:
        model, removed = maintain_budget(model, budget)
    return model, StepResult(q=proj.q, fit=fit, censored=False, removed_index=removed, sv_count=model.sv_count)


@dataclass
class OkfebRun:
    model: SubspaceModel
    results: List[StepResult]
    start: int = 1

    @property
    def fits(self) -> np.ndarray:
        return np.array([res.fit for res in self.results])

    @property
    def Q(self) -> np.ndarray:
        return np.array([res.q for res in self.results])


def run_okfeb(
    X,
    spec: KernelSpec,
    r: int,
    lam: float,
    censor: CensorPolicy,
    budget: BudgetPolicy,
    schedule: StepSchedule,
    init: InitMode = "random",
    seed=None,
    warmup: Optional[int] = None,
    on_step: Optional[Callable[[int, SubspaceModel, StepResult], None]] = None,
) -> OkfebRun:
    """
    OK-FEB over a finite stream; the first sample (or, with init="kpca",
    the first ``warmup`` samples, which must fit in the budget) seeds the
    model. Results cover samples start+1..N.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    seed_x, start = seed_block(X, r, init, warmup)
    if budget.B is not None and start > budget.B:
        raise InputError(f"warm-up block of {start} samples exceeds the budget B={budget.B}")
    model = init_model(spec, seed_x, r, lam, init=init, seed=seed)
    results: List[StepResult] = []
    for t, x in enumerate(X[start:], start=start + 1):
        model, res = okfeb_step(model, x, censor, budget, schedule)
        results.append(res)
        if on_step is not None:
            on_step(t, model, res)
    return OkfebRun(model=model, results=results, start=start)
