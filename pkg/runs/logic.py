"""
okfeb run pipelines
- synth:        synthetic stream -> LIBSVM/CSV
- track:        OK-FEB over a stream -> one metric line per sample (or cadence tick)
- approx:       windowed kernel mismatch along the model trajectory
- classify:     OK-FEB features -> Pegasos, predict-then-update accuracy
- regress:      OK-FEB features -> LMS, predict-then-update MSE
- check_bounds: kernel-approximation and ridge-stability bounds on a finite sample

Metric lines are JSON objects (or CSV rows with --csv); the final line is
``{"summary": {...}}``. Output is byte-identical for identical configs unless
--timing is on.
"""

import csv
import json
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from itertools import islice
from typing import IO, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from django.conf import settings

from approx.logic import (
    approx_kernel_matrix,
    bound_errors,
    check_prop4,
    check_prop7,
    feature_map_z,
    feature_matrix,
    kernel_mismatch,
    window_mismatch,
    windowed_mismatch,
)
from budget.logic import BudgetPolicy, CensorPolicy, StepResult, okfeb_step
from commons.exceptions import ConfigError, InputError
from datasets.logic import (
    Sample,
    StreamConfig,
    gen_dynamic_spheroids,
    gen_two_spheres,
    open_samples,
    write_csv,
    write_libsvm,
)
from kernels.logic import KernelSpec, kernel_matrix
from learners.logic import FeatureWhitener, LinearModel, classify, lms_step, predict, svm_step
from subspace.logic import StepSchedule, SubspaceModel, init_model, project, projection_fit

from .forms import RunConfigForm

logger = logging.getLogger(__name__)

# =====================
# Config
# =====================
EXIT_BOUND_VIOLATED = 3

DEFAULTS = {
    "source": "two-spheres",
    "path": "",
    "dim": None,
    "labeled": True,
    "n": 2000,
    "sigma": 0.1,
    "shuffle": False,
    "standardize": "",
    "synth_format": "libsvm",
    "kernel": "gaussian",
    "gamma": 1.0,
    "degree": 2,
    "offset": 1.0,
    "rank": 10,
    "budget": None,
    "lam": 1e-3,
    "beta": 1.0,
    "epsilon": "0",
    "target_rate": None,
    "step": "harmonic",
    "step_scale": 1.0,
    "removal": "recency_min_norm",
    "init": "random",
    "warmup": None,
    "seed": 0,
    "features": "okfeb",
    "C": 1.0,
    "lambda_reg": 0.0,
    "lms_mu": None,
    "whiten": None,          # classify only unless asked
    "ridge_lambda": 0.1,
    "cap": None,
    "window": None,
    "cadence": 1,
    "segments": "",
    "timing": False,
    "csv": False,
}

# Dataset specifications; B is 1.2-1.5 r rounded up, C maps to lambda_reg for regression.
PRESETS: Dict[str, dict] = {
    "adult": {"rank": 50, "budget": 60, "gamma": 20.0, "C": 10.0, "dim": 123},
    "cadata": {"rank": 5, "budget": 8, "gamma": 7e7, "C": 0.01, "lambda_reg": 0.01, "dim": 8},
    "slice": {"rank": 10, "budget": 12, "gamma": 50.0, "C": 0.01, "lambda_reg": 0.01, "dim": 384},
    "year": {"rank": 10, "budget": 12, "gamma": 5e7, "C": 0.01, "lambda_reg": 0.01, "dim": 90},
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    source: str
    path: str
    dim: Optional[int]
    labeled: bool
    n: int
    sigma: float
    shuffle: bool
    standardize: str
    synth_format: str
    kernel: str
    gamma: float
    degree: int
    offset: float
    rank: int
    budget: Optional[int]
    lam: float
    beta: float
    epsilon: object          # float or "auto"
    target_rate: float
    step: str
    step_scale: float
    removal: str
    init: str
    warmup: Optional[int]
    seed: int
    features: str
    C: float
    lambda_reg: float
    lms_mu: Optional[float]
    whiten: bool
    ridge_lambda: float
    cap: int
    window: Optional[int]
    cadence: int
    segments: Tuple[int, ...]
    timing: bool
    csv: bool

    # ---------- typed views ----------
    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(family=self.kernel, gamma=self.gamma, degree=self.degree, offset=self.offset)

    @property
    def schedule(self) -> StepSchedule:
        return StepSchedule(mode=self.step, c=self.step_scale)

    @property
    def budget_policy(self) -> BudgetPolicy:
        return BudgetPolicy(B=self.budget, beta=self.beta, rule=self.removal)

    def censor_policy(self) -> CensorPolicy:
        if self.epsilon == "auto":
            return CensorPolicy.adaptive(target_rate=self.target_rate, window=settings.OKFEB_CENSOR_WINDOW)
        return CensorPolicy(epsilon=float(self.epsilon))

    @property
    def stream_config(self) -> StreamConfig:
        return StreamConfig(
            source=self.source,
            path=self.path or None,
            D=self.dim,
            labeled=self.labeled,
            n=self.n,
            sigma=self.sigma,
            seed=self.seed,
            shuffle_seed=self.seed if self.shuffle else None,
            standardize=self.standardize or None,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["segments"] = list(self.segments)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data["segments"] = tuple(data.get("segments") or ())
        return cls(**{f.name: data[f.name] for f in fields(cls)})


def build_config(command: str, options: dict) -> RunConfig:
    """
    defaults <- dataset preset <- explicit options (None = not given),
    validated by RunConfigForm. OKFEB_SEED overrides the seed.
    """
    data = dict(DEFAULTS)
    preset = options.get("dataset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown dataset preset {preset!r}")
        data.update(PRESETS[preset])
    data.update({k: v for k, v in options.items() if k in DEFAULTS and v is not None})
    if data["target_rate"] is None:
        data["target_rate"] = settings.OKFEB_DEFAULT_TARGET_RATE
    if data["cap"] is None:
        data["cap"] = settings.OKFEB_BOUND_CHECK_CAP
    if data["whiten"] is None:
        data["whiten"] = command == "classify"
    if settings.OKFEB_SEED is not None:
        try:
            data["seed"] = int(settings.OKFEB_SEED)
        except ValueError:
            raise ConfigError(f"OKFEB_SEED must be an integer, got {settings.OKFEB_SEED!r}") from None
    data["command"] = command

    form = RunConfigForm(data=data)
    if not form.is_valid():
        raise ConfigError(form.error_line())
    cleaned = form.cleaned_data
    cleaned["standardize"] = cleaned.get("standardize") or ""
    cleaned["path"] = cleaned.get("path") or ""
    return RunConfig(**{f.name: cleaned[f.name] for f in fields(RunConfig)})


# =====================
# Metrics output
# =====================
@dataclass
class MetricsLine:
    n: int
    ls_fit: float
    censored: bool
    sv_count: int
    removed_index: Optional[int]
    cum_avg_fit: float
    elapsed_ns: Optional[int] = None
    accuracy: Optional[float] = None
    mse: Optional[float] = None
    window_mismatch: Optional[float] = None

    OPTIONAL = ("elapsed_ns", "accuracy", "mse", "window_mismatch")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in self.OPTIONAL or v is not None}


def metric_columns(cfg: "RunConfig") -> List[str]:
    columns = ["n", "ls_fit", "censored", "sv_count", "removed_index", "cum_avg_fit"]
    if cfg.timing:
        columns.append("elapsed_ns")
    if cfg.command == "classify":
        columns.append("accuracy")
    if cfg.command == "regress":
        columns.append("mse")
    if cfg.window:
        columns.append("window_mismatch")
    return columns


class MetricsSink:
    """
    JSON lines (default) or CSV rows with a fixed header. The summary is a
    JSON line after the metrics, or on ``err`` in CSV mode.
    """

    def __init__(self, out: IO[str], columns: List[str], as_csv: bool = False, err: Optional[IO[str]] = None):
        self.out = out
        self.err = err
        self.lines = 0
        self._writer = None
        if as_csv:
            self._writer = csv.DictWriter(out, fieldnames=columns, restval="", lineterminator="\n")
            self._writer.writeheader()

    def write(self, record: dict):
        if self._writer is not None:
            self._writer.writerow(record)
        else:
            self.out.write(json.dumps(record) + "\n")
        self.lines += 1

    def close(self, summary: dict):
        line = json.dumps({"summary": summary}) + "\n"
        if self._writer is None:
            self.out.write(line)
        elif self.err is not None:
            self.err.write(line)


@dataclass
class RunOutputs:
    summary: dict
    lines: int
    exit_code: int = 0


def segment_summary(fits: List[float], boundaries: Tuple[int, ...]) -> List[dict]:
    """Mean/variance of ls_fit per segment [1, b1], [b1+1, b2], ..., [bk+1, n]."""
    n = len(fits)
    edges = [0] + [b for b in boundaries if b < n] + [n]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        chunk = np.asarray(fits[lo:hi])
        out.append({
            "start": lo + 1,
            "end": hi,
            "mean_ls_fit": float(chunk.mean()) if len(chunk) else 0.0,
            "var_ls_fit": float(chunk.var()) if len(chunk) else 0.0,
        })
    return out


# =====================
# Streaming engine
# =====================
SampleHook = Callable[[SubspaceModel, np.ndarray, Sample], None]


@dataclass
class StreamState:
    model: Optional[SubspaceModel] = None
    censor: Optional[CensorPolicy] = None
    fits: List[float] = field(default_factory=list)
    updates: int = 0


def stream_okfeb(
    cfg: RunConfig,
    samples: Iterable[Sample],
    emit: Optional[Callable[[MetricsLine, Sample], None]] = None,
    hook: Optional[SampleHook] = None,
    after_step: Optional[Callable[[SubspaceModel, Sample], None]] = None,
) -> StreamState:
    """
    Drive OK-FEB over a sample stream. The first sample (with init="kpca",
    the first ``warmup`` samples) seeds the model; seed samples are scored
    against the seeded model and counted as admitted. ``hook`` sees
    (pre-update model, q, sample); ``after_step`` the updated model.
    """
    spec = cfg.kernel_spec
    budget = cfg.budget_policy
    schedule = cfg.schedule
    state = StreamState(censor=cfg.censor_policy())
    recent = deque(maxlen=cfg.window) if cfg.window else None
    block: List[Sample] = []
    block_size = (cfg.warmup or cfg.rank) if cfg.init == "kpca" else 1
    t = 0
    fit_sum = 0.0

    def record(sample: Sample, res: StepResult, elapsed: int):
        nonlocal t, fit_sum
        t += 1
        state.fits.append(res.fit)
        state.updates += not res.censored
        fit_sum += res.fit
        if after_step is not None:
            after_step(state.model, sample)

        if recent is not None:
            recent.append(sample.x)
        if emit is not None and t % cfg.cadence == 0:
            line = MetricsLine(
                n=t,
                ls_fit=res.fit,
                censored=res.censored,
                sv_count=res.sv_count,
                removed_index=res.removed_index,
                cum_avg_fit=fit_sum / t,
                elapsed_ns=elapsed if cfg.timing else None,
            )
            if recent is not None and t > cfg.window:
                line.window_mismatch = window_mismatch(np.array(recent), state.model)
            emit(line, sample)

    for sample in samples:
        start = time.perf_counter_ns()
        if state.model is None:
            block.append(sample)
            if len(block) < block_size:
                continue
            X0 = np.array([s.x for s in block])
            seed_x = X0 if cfg.init == "kpca" else X0[0]
            state.model = init_model(spec, seed_x, cfg.rank, cfg.lam, init=cfg.init, seed=cfg.seed)
            for s in block:
                proj = project(state.model, s.x)
                fit = projection_fit(state.model, proj)
                if hook is not None:
                    hook(state.model, proj.q, s)
                res = StepResult(q=proj.q, fit=fit, censored=False, removed_index=None, sv_count=state.model.sv_count)
                record(s, res, time.perf_counter_ns() - start)
            continue
        step_hook = None
        if hook is not None:
            step_hook = lambda m, q, s=sample: hook(m, q, s)  # noqa: E731
        state.model, res = okfeb_step(state.model, sample.x, state.censor, budget, schedule, feature_hook=step_hook)
        record(sample, res, time.perf_counter_ns() - start)
    if block and state.model is None:
        raise InputError(f"stream ended after {len(block)} samples, before the kpca warm-up block of {block_size}")
    return state


def _base_summary(cfg: RunConfig, state: StreamState) -> dict:
    n = len(state.fits)
    summary = {
        "command": cfg.command,
        "n": n,
        "updates": state.updates,
        "update_rate": state.updates / n if n else 0.0,
        "sv_count": state.model.sv_count if state.model is not None else 0,
        "mean_ls_fit": float(np.mean(state.fits)) if n else 0.0,
        "epsilon": state.censor.epsilon if state.censor is not None else 0.0,
        "segments": segment_summary(state.fits, cfg.segments) if n else [],
    }
    return summary


# =====================
# Pipelines
# =====================
def pipeline_synth(cfg: RunConfig, out: IO[str], err: Optional[IO[str]] = None) -> RunOutputs:
    if cfg.source == "two-spheres":
        samples = gen_two_spheres(cfg.n, sigma=cfg.sigma, seed=cfg.seed)
    else:
        samples = gen_dynamic_spheroids(cfg.n, seed=cfg.seed)
    if cfg.synth_format == "csv":
        count = write_csv(samples, out, labeled=cfg.source == "two-spheres")
    else:
        count = write_libsvm(samples, out)
    return RunOutputs(summary={"command": "synth", "n": count, "source": cfg.source}, lines=count)


def pipeline_track(cfg: RunConfig, out: IO[str], err: Optional[IO[str]] = None) -> RunOutputs:
    sink = MetricsSink(out, metric_columns(cfg), as_csv=cfg.csv, err=err)
    state = stream_okfeb(cfg, open_samples(cfg.stream_config), emit=lambda line, s: sink.write(line.to_dict()))
    summary = _base_summary(cfg, state)
    sink.close(summary)
    return RunOutputs(summary=summary, lines=sink.lines)


def _raw_or_mapped(cfg: RunConfig, model: SubspaceModel, q: np.ndarray, sample: Sample) -> np.ndarray:
    if cfg.features == "raw":
        return sample.x
    return feature_map_z(model, q)


def _learner_input(learner: Dict[str, object], z: np.ndarray) -> np.ndarray:
    """z through the running whitener when one is attached, after folding z into it."""
    whitener = learner.get("whitener")
    if whitener is None:
        return z
    return whitener.update(z).transform(z)


def pipeline_classify(cfg: RunConfig, out: IO[str], err: Optional[IO[str]] = None) -> RunOutputs:
    sink = MetricsSink(out, metric_columns(cfg), as_csv=cfg.csv, err=err)
    learner: Dict[str, object] = {"model": None, "correct": 0, "seen": 0}

    def hook(model: SubspaceModel, q: np.ndarray, sample: Sample):
        if sample.y is None:
            raise InputError("classification needs labeled samples")
        z = _raw_or_mapped(cfg, model, q, sample)
        if learner["model"] is None:
            learner["model"] = LinearModel.zeros(z.shape[0], C=cfg.C)
            learner["whitener"] = FeatureWhitener(z.shape[0]) if cfg.whiten else None
        z = _learner_input(learner, z)
        lin = learner["model"]
        learner["correct"] += classify(lin, z) == sample.y
        learner["seen"] += 1
        svm_step(lin, z, sample.y)

    def emit(line: MetricsLine, sample: Sample):
        line.accuracy = learner["correct"] / learner["seen"]
        sink.write(line.to_dict())

    state = stream_okfeb(cfg, open_samples(cfg.stream_config), emit=emit, hook=hook)
    summary = _base_summary(cfg, state)
    summary["features"] = cfg.features
    summary["whiten"] = cfg.whiten
    summary["accuracy"] = learner["correct"] / learner["seen"] if learner["seen"] else 0.0
    sink.close(summary)
    return RunOutputs(summary=summary, lines=sink.lines)


def pipeline_regress(cfg: RunConfig, out: IO[str], err: Optional[IO[str]] = None) -> RunOutputs:
    sink = MetricsSink(out, metric_columns(cfg), as_csv=cfg.csv, err=err)
    learner: Dict[str, object] = {"model": None, "sq_err": 0.0, "seen": 0}

    def hook(model: SubspaceModel, q: np.ndarray, sample: Sample):
        if sample.y is None:
            raise InputError("regression needs labeled samples")
        z = _raw_or_mapped(cfg, model, q, sample)
        if learner["model"] is None:
            learner["model"] = LinearModel.zeros(z.shape[0], lambda_reg=cfg.lambda_reg, mu=cfg.lms_mu)
            learner["whitener"] = FeatureWhitener(z.shape[0]) if cfg.whiten else None
        z = _learner_input(learner, z)
        lin = learner["model"]
        learner["sq_err"] += (sample.y - predict(lin, z)) ** 2
        learner["seen"] += 1
        lms_step(lin, z, sample.y)

    def emit(line: MetricsLine, sample: Sample):
        line.mse = learner["sq_err"] / learner["seen"]
        sink.write(line.to_dict())

    state = stream_okfeb(cfg, open_samples(cfg.stream_config), emit=emit, hook=hook)
    summary = _base_summary(cfg, state)
    summary["features"] = cfg.features
    summary["whiten"] = cfg.whiten
    summary["mse"] = learner["sq_err"] / learner["seen"] if learner["seen"] else 0.0
    sink.close(summary)
    return RunOutputs(summary=summary, lines=sink.lines)


def pipeline_approx(cfg: RunConfig, out: IO[str], err: Optional[IO[str]] = None) -> RunOutputs:
    """Windowed mismatch along the trajectory, plus the full-sample mismatch of the final model."""
    N_wind = cfg.window or 100
    xs: List[np.ndarray] = []
    trajectory: List[Optional[SubspaceModel]] = []

    def keep(model: SubspaceModel, sample: Sample):
        xs.append(sample.x)
        # only window ends need a snapshot
        trajectory.append(model.snapshot() if len(xs) > N_wind else None)

    state = stream_okfeb(cfg, islice(open_samples(cfg.stream_config), cfg.cap), after_step=keep)
    summary = _base_summary(cfg, state)
    summary["window"] = N_wind
    lines = 0
    if xs:
        X = np.array(xs)
        record = {"rank": cfg.rank, "budget": cfg.budget, "window": N_wind, "n": len(xs)}
        if len(xs) > N_wind:
            record["windowed_mismatch"] = windowed_mismatch(X, trajectory, N_wind)
        model = state.model
        K = kernel_matrix(cfg.kernel_spec, X)
        record["mismatch"] = kernel_mismatch(K, approx_kernel_matrix(model, feature_matrix(model, X)))
        out.write(json.dumps(record) + "\n")
        lines = 1
        summary.update({k: v for k, v in record.items() if k.endswith("mismatch")})
    out.write(json.dumps({"summary": summary}) + "\n")
    return RunOutputs(summary=summary, lines=lines)


def pipeline_check_bounds(cfg: RunConfig, out: IO[str], err: Optional[IO[str]] = None) -> RunOutputs:
    samples = list(islice(open_samples(cfg.stream_config), cfg.cap + 1))
    if len(samples) > cfg.cap:
        raise ConfigError(f"check_bounds is capped at N={cfg.cap} samples (raise --cap)")
    state = stream_okfeb(cfg, samples)
    summary = _base_summary(cfg, state)
    if not samples:
        summary["holds"] = True
        out.write(json.dumps({"summary": summary}) + "\n")
        return RunOutputs(summary=summary, lines=0)

    X = np.array([s.x for s in samples])
    model = state.model
    Q = feature_matrix(model, X)
    K = kernel_matrix(cfg.kernel_spec, X)
    K_hat = approx_kernel_matrix(model, Q)
    reports = [check_prop4(bound_errors(model, X, Q), K, K_hat)]
    if all(s.y is not None for s in samples):
        y = np.array([s.y for s in samples])
        reports.append(check_prop7(K, K_hat, y, cfg.ridge_lambda))
    for rep in reports:
        out.write(json.dumps(rep.to_dict()) + "\n")

    violated = [rep.name for rep in reports if rep.hypothesis_ok and not rep.holds]
    summary["holds"] = not violated
    summary["violated"] = violated
    out.write(json.dumps({"summary": summary}) + "\n")
    return RunOutputs(summary=summary, lines=len(reports), exit_code=EXIT_BOUND_VIOLATED if violated else 0)


PIPELINES = {
    "synth": pipeline_synth,
    "track": pipeline_track,
    "approx": pipeline_approx,
    "classify": pipeline_classify,
    "regress": pipeline_regress,
    "check_bounds": pipeline_check_bounds,
}


def execute(cfg: RunConfig, out: IO[str], err: Optional[IO[str]] = None) -> RunOutputs:
    logger.info("running %s (seed=%s)", cfg.command, cfg.seed)
    return PIPELINES[cfg.command](cfg, out, err)
