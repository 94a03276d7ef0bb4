"""
Sample streams: LIBSVM/CSV readers and writers, synthetic generators and
standardization.

Readers are lazy generators over lines, so files never need to fit in
memory; ``-`` stands for standard input.
"""

import csv
import logging
import math
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, List, Literal, Optional

import numpy as np

from commons.exceptions import DimensionError, InputError, ParseError

logger = logging.getLogger(__name__)

SourceKind = Literal["libsvm", "csv", "two-spheres", "dynamic-spheroids"]
SOURCES = ("libsvm", "csv", "two-spheres", "dynamic-spheroids")
SYNTHETIC_DIM = 3


@dataclass
class Sample:
    x: np.ndarray
    y: Optional[float] = None


@dataclass(frozen=True)
class StreamConfig:
    source: SourceKind = "two-spheres"
    path: Optional[str] = None
    D: Optional[int] = None
    labeled: bool = True
    n: int = 2000
    sigma: float = 0.1
    seed: Optional[int] = None
    shuffle_seed: Optional[int] = None
    standardize: Optional[Literal["two_pass", "running"]] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InputError(f"unknown source {self.source!r}")
        if self.source in ("libsvm", "csv") and not self.path:
            raise InputError(f"{self.source} source needs a path ('-' for stdin)")
        if self.source == "libsvm" and not self.D:
            raise InputError("libsvm source needs the dimension D")
        if self.standardize not in (None, "two_pass", "running"):
            raise InputError(f"unknown standardize mode {self.standardize!r}")


# =====================
# LIBSVM
# =====================
def _parse_libsvm_line(line_no: int, line: str, D: int) -> Sample:
    tokens = line.split()
    if not tokens:
        raise ParseError(line_no, "empty line")
    try:
        y = float(tokens[0])
    except ValueError:
        raise ParseError(line_no, f"bad label {tokens[0]!r}") from None
    x = np.zeros(D)
    last = 0
    for tok in tokens[1:]:
        idx_s, sep, val_s = tok.partition(":")
        if not sep:
            raise ParseError(line_no, f"expected index:value, got {tok!r}")
        try:
            idx = int(idx_s)
            val = float(val_s)
        except ValueError:
            raise ParseError(line_no, f"bad pair {tok!r}") from None
        if idx < 1 or idx > D:
            raise ParseError(line_no, f"index {idx} out of range 1..{D}")
        if idx <= last:
            raise ParseError(line_no, f"index {idx} not strictly increasing")
        if not math.isfinite(val):
            raise ParseError(line_no, f"non-finite value {val_s!r}")
        x[idx - 1] = val
        last = idx
    return Sample(x=x, y=y)


def parse_libsvm(lines: Iterable[str], D: int) -> Iterator[Sample]:
    """``label idx:val ...`` with 1-based, strictly increasing indices."""
    if D < 1:
        raise InputError(f"dimension must be >= 1, got {D}")
    for line_no, line in enumerate(lines, start=1):
        yield _parse_libsvm_line(line_no, line.rstrip("\r\n"), D)


def format_number(v: float) -> str:
    """Integral values without a decimal point, others by shortest repr."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_libsvm(sample: Sample) -> str:
    label = format_number(sample.y if sample.y is not None else 0.0)
    pairs = [f"{i + 1}:{format_number(v)}" for i, v in enumerate(sample.x) if v != 0.0]
    return " ".join([label, *pairs])


def write_libsvm(samples: Iterable[Sample], out: IO[str]) -> int:
    count = 0
    for sample in samples:
        out.write(format_libsvm(sample) + "\n")
        count += 1
    return count


# =====================
# CSV
# =====================
def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_csv(lines: Iterable[str], labeled: bool = True, D: Optional[int] = None) -> Iterator[Sample]:
    """
    Comma-separated rows, label first when ``labeled``. A first row that is
    not numeric is taken as a header and skipped.
    """
    width = None
    for line_no, row in enumerate(csv.reader(lines), start=1):
        if line_no == 1 and row and not all(_is_number(tok) for tok in row):
            continue
        if not row:
            raise ParseError(line_no, "empty line")
        try:
            values = [float(tok) for tok in row]
        except ValueError:
            raise ParseError(line_no, f"non-numeric field in {row!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(line_no, "non-finite value")
        y = None
        if labeled:
            if len(values) < 2:
                raise ParseError(line_no, "labeled row needs a label and at least one feature")
            y, values = values[0], values[1:]
        if width is None:
            width = len(values)
            if D is not None and width != D:
                raise ParseError(line_no, f"expected {D} features, got {width}")
        elif len(values) != width:
            raise ParseError(line_no, f"expected {width} features, got {len(values)}")
        yield Sample(x=np.array(values), y=y)


def write_csv(samples: Iterable[Sample], out: IO[str], labeled: bool = True) -> int:
    writer = csv.writer(out, lineterminator="\n")
    count = 0
    for sample in samples:
        row = [format_number(v) for v in sample.x]
        if labeled:
            row.insert(0, format_number(sample.y if sample.y is not None else 0.0))
        writer.writerow(row)
        count += 1
    return count


# =====================
# Synthetic generators
# =====================
def _unit_directions(rng: np.random.Generator, n: int, dim: int = SYNTHETIC_DIM) -> np.ndarray:
    u = rng.standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def gen_two_spheres(n: int, sigma: float = 0.1, seed=None) -> Iterator[Sample]:
    """
    Concentric spheres in R^3: radius 1 for y = +1, radius 2 for y = -1,
    uniform direction plus isotropic Gaussian noise sigma.
    """
    if n < 0:
        raise InputError(f"n must be >= 0, got {n}")
    if sigma < 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    radii = np.where(labels > 0, 1.0, 2.0)
    X = radii[:, None] * _unit_directions(rng, n) + sigma * rng.standard_normal((n, SYNTHETIC_DIM))
    for x, y in zip(X, labels):
        yield Sample(x=x, y=float(y))


def gen_dynamic_spheroids(n: int = 2000, seed=None) -> Iterator[Sample]:
    """
    First half on the spheroid diag(3, 1, 1) u, second half on diag(1, 3, 1) u,
    with u uniform on the unit sphere (stretched-uniform sampling).
    """
    if n < 0 or n % 2:
        raise InputError(f"n must be a non-negative even number, got {n}")
    rng = np.random.default_rng(seed)
    U = _unit_directions(rng, n)
    half = n // 2
    X = np.vstack([U[:half] * np.array([3.0, 1.0, 1.0]), U[half:] * np.array([1.0, 3.0, 1.0])])
    for x in X:
        yield Sample(x=x)


# =====================
# Standardization
# =====================
class RunningStandardizer:
    """Welford running mean/variance; transforms with the estimates so far."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def update(self, x: np.ndarray):
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (x - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self._m2 / self.count)

    def transform(self, x: np.ndarray) -> np.ndarray:
        std = self.std
        out = x.copy()
        scaled = std > 0
        out[scaled] = (x[scaled] - self.mean[scaled]) / std[scaled]
        return out


def standardize(stream: Iterable[Sample], mode: Literal["two_pass", "running"] = "two_pass") -> Iterator[Sample]:
    """
    Zero mean, unit variance per coordinate. ``two_pass`` materializes the
    stream first; ``running`` uses the estimates accumulated so far. A
    constant coordinate is passed through unchanged.
    """
    if mode == "two_pass":
        samples = list(stream)
        if not samples:
            return
        X = np.array([s.x for s in samples])
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = std == 0
        if constant.any():
            logger.warning("zero-variance coordinates left unscaled: %s", np.flatnonzero(constant).tolist())
        mean[constant] = 0.0
        std[constant] = 1.0
        for s in samples:
            yield Sample(x=(s.x - mean) / std, y=s.y)
    elif mode == "running":
        scaler = None
        for s in stream:
            if scaler is None:
                scaler = RunningStandardizer(s.x.shape[0])
            scaler.update(s.x)
            yield Sample(x=scaler.transform(s.x), y=s.y)
        if scaler is not None and scaler.count > 1 and (scaler.std == 0).any():
            logger.warning("zero-variance coordinates left unscaled: %s", np.flatnonzero(scaler.std == 0).tolist())
    else:
        raise InputError(f"unknown standardize mode {mode!r}")


# =====================
# Stream factory
# =====================
@contextmanager
def open_text(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path, "r", encoding="utf-8") as fh:
            yield fh


def _source(cfg: StreamConfig, fh) -> Iterator[Sample]:
    if cfg.source == "libsvm":
        return parse_libsvm(fh, cfg.D)
    if cfg.source == "csv":
        return parse_csv(fh, labeled=cfg.labeled, D=cfg.D)
    if cfg.source == "two-spheres":
        return gen_two_spheres(cfg.n, sigma=cfg.sigma, seed=cfg.seed)
    return gen_dynamic_spheroids(cfg.n, seed=cfg.seed)


def open_samples(cfg: StreamConfig) -> Iterator[Sample]:
    """Sample stream for a config: read/generate, then shuffle and standardize."""
    if cfg.source in ("libsvm", "csv"):
        with open_text(cfg.path) as fh:
            yield from _post_process(cfg, _source(cfg, fh))
    else:
        yield from _post_process(cfg, _source(cfg, None))


def _post_process(cfg: StreamConfig, stream: Iterator[Sample]) -> Iterator[Sample]:
    if cfg.shuffle_seed is not None:
        items: List[Sample] = list(stream)
        order = np.random.default_rng(cfg.shuffle_seed).permutation(len(items))
        stream = iter([items[i] for i in order])
    if cfg.standardize:
        stream = standardize(stream, mode=cfg.standardize)
    return _check_dims(stream, cfg.D if cfg.source in ("libsvm", "csv") else None)


def _check_dims(stream: Iterator[Sample], D: Optional[int]) -> Iterator[Sample]:
    for s in stream:
        if D is not None and s.x.shape[0] != D:
            raise DimensionError(f"sample has dimension {s.x.shape[0]}, expected {D}")
        yield s
