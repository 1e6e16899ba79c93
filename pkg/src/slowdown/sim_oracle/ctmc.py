"""Event-driven simulation of the (X, Y) chain with batch-means intervals."""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import t as student_t

from ..model import ModelParams, ParameterError
from ..solver import worker_count
from ..variants import AbandonmentParams, FiniteBufferParams

N_BATCHES = 32
PATH_CAP = 20_000_000
NO_BUFFER_BOUND = np.iinfo(np.int64).max


def stream(seed: int, replication: int, name: str) -> np.random.Generator:
    """Independent generator for a named stream of one replication."""
    key = (int(replication), zlib.crc32(name.encode()))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def unpack_model(model) -> tuple[ModelParams, int, float]:
    """(base params, buffer bound, abandonment rate) for any supported model."""
    if isinstance(model, FiniteBufferParams):
        return model.base, int(model.N), 0.0
    if isinstance(model, AbandonmentParams):
        return model.base, NO_BUFFER_BOUND, float(model.delta)
    if isinstance(model, ModelParams):
        return model, NO_BUFFER_BOUND, 0.0
    raise ParameterError(f"unsupported model type {type(model).__name__}")


@dataclass(frozen=True)
class SimConfig:
    params: object  # ModelParams, FiniteBufferParams or AbandonmentParams
    horizon: float
    seed: int = 0
    warmup: float | None = None  # default: 10% of the horizon
    replications: int = 1
    initial_state: tuple[int, int] = (0, 0)
    record_path: bool = False
    customers: int | None = None  # coupling runs: number of arrivals

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ParameterError(f"horizon must be positive, got {self.horizon!r}")
        if not 0 <= self.effective_warmup < self.horizon:
            raise ParameterError("warmup must satisfy 0 <= warmup < horizon")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ParameterError("replications must be a positive integer")
        if self.customers is not None and self.customers < 1:
            raise ParameterError("customers must be positive")
        base, bound, _ = unpack_model(self.params)
        x0, y0 = self.initial_state
        if not (0 <= y0 <= min(x0, base.s) and x0 <= bound):
            raise ParameterError(f"invalid initial state {self.initial_state!r}")

    @property
    def effective_warmup(self) -> float:
        return 0.1 * self.horizon if self.warmup is None else float(self.warmup)


@dataclass(frozen=True)
class Estimate:
    value: float
    half_width: float

    def covers(self, truth: float, widths: float = 1.0) -> bool:
        return abs(self.value - truth) <= widths * self.half_width


@dataclass(frozen=True)
class ExcursionStats:
    """Sojourns of X at or above s: completed count, mean length, longest
    length (the sojourn still running at the horizon counts, censored)."""

    count: int
    mean_length: float
    max_length: float


@dataclass(frozen=True)
class SamplePath:
    time: np.ndarray
    total_customers: np.ndarray
    nondelayed_in_service: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "total_customers", "nondelayed_in_service"])
            for t, x, y in zip(self.time, self.total_customers, self.nondelayed_in_service):
                w.writerow([format(float(t), ".17g"), int(x), int(y)])


@dataclass(frozen=True)
class SimEstimates:
    p_wait_hat: Estimate
    mean_L_hat: Estimate
    busy_period_stats: ExcursionStats
    sample_path: SamplePath | None = None


@njit(nogil=True, cache=True)
def _accumulate(acc_w, acc_l, t0, t1, x, s, start, width):
    """Add the holding interval [t0, t1] in state x to the batch integrals."""
    nb = acc_w.shape[0]
    a = max(t0, start)
    k = min(max(int((a - start) / width), 0), nb - 1)
    while a < t1 and k < nb:
        edge = start + (k + 1) * width if k < nb - 1 else np.inf
        stop = min(t1, edge)
        if stop > a:
            if x >= s:
                acc_w[k] += stop - a
            acc_l[k] += (stop - a) * x
            a = stop
        k += 1


@njit(nogil=True, cache=True)
def _ctmc(rng, s, lam, mf, ms, bound, delta, x0, y0, warmup, horizon, nb, record, cap):
    width = (horizon - warmup) / nb
    acc_w = np.zeros(nb)
    acc_l = np.zeros(nb)
    n_path = 1 if record else 0
    size = 1024 if record else 1
    pt = np.zeros(size)
    px = np.zeros(size, dtype=np.int64)
    py = np.zeros(size, dtype=np.int64)
    px[0] = x0
    py[0] = y0
    x, y, t = x0, y0, 0.0
    exc_start = 0.0 if x0 >= s else -1.0
    exc_n, exc_sum, exc_max = 0, 0.0, 0.0
    overflow = False
    while True:
        up = lam if x < bound else 0.0
        if x < s:
            slow = (x - y) * ms
            aband = 0.0
        else:
            slow = (s - y) * ms
            aband = (x - s) * delta
        fast = y * mf
        total = up + slow + fast + aband
        dt = rng.exponential(1.0 / total) if total > 0 else np.inf
        t_next = min(t + dt, horizon)
        _accumulate(acc_w, acc_l, t, t_next, x, s, warmup, width)
        if t_next >= horizon:
            break
        t = t_next
        u = rng.random() * total
        if u < up:
            if x < s:
                y += 1
            x += 1
        elif u < up + fast:
            x -= 1
            y -= 1
        else:  # slow completion or abandonment: Y unchanged
            x -= 1
        if exc_start < 0 and x >= s:
            exc_start = t
        elif exc_start >= 0 and x < s:
            length = t - exc_start
            exc_n += 1
            exc_sum += length
            exc_max = max(exc_max, length)
            exc_start = -1.0
        if record:
            if n_path == size and size < cap:
                size = min(2 * size, cap)
                pt2 = np.zeros(size)
                px2 = np.zeros(size, dtype=np.int64)
                py2 = np.zeros(size, dtype=np.int64)
                pt2[:n_path] = pt[:n_path]
                px2[:n_path] = px[:n_path]
                py2[:n_path] = py[:n_path]
                pt, px, py = pt2, px2, py2
            if n_path < size:
                pt[n_path] = t
                px[n_path] = x
                py[n_path] = y
                n_path += 1
            else:
                overflow = True
    if exc_start >= 0:
        exc_max = max(exc_max, horizon - exc_start)
    return acc_w / width, acc_l / width, exc_n, exc_sum, exc_max, pt[:n_path], px[:n_path], py[:n_path], overflow


def _replication(config: SimConfig, rep: int):
    base, bound, delta = unpack_model(config.params)
    x0, y0 = config.initial_state
    return _ctmc(
        stream(config.seed, rep, "ctmc"),
        base.s, base.lam, base.mu_fast, base.mu_slow, bound, delta,
        x0, y0, config.effective_warmup, float(config.horizon), N_BATCHES,
        bool(config.record_path), PATH_CAP,
    )


def _batch_estimate(batches: np.ndarray) -> Estimate:
    n = len(batches)
    mean = float(batches.mean())
    sd = float(batches.std(ddof=1)) if n > 1 else math.inf
    return Estimate(mean, float(student_t.ppf(0.975, n - 1)) * sd / math.sqrt(n))


def simulate(config: SimConfig) -> SimEstimates:
    """Time-average P(X >= s) and E[X] with 95% batch-means intervals.

    Batches from all replications are pooled.  The sample path, when
    requested, is the one of replication 0.
    """
    reps = range(config.replications)
    workers = min(worker_count(), config.replications)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(lambda r: _replication(config, r), reps))
    else:
        runs = [_replication(config, r) for r in reps]
    wait = np.concatenate([r[0] for r in runs])
    level = np.concatenate([r[1] for r in runs])
    exc_n = sum(r[2] for r in runs)
    exc_sum = sum(r[3] for r in runs)
    exc = ExcursionStats(
        count=int(exc_n),
        mean_length=float(exc_sum / exc_n) if exc_n else 0.0,
        max_length=float(max(r[4] for r in runs)),
    )
    path = None
    if config.record_path:
        if runs[0][8]:
            raise ParameterError(f"sample path exceeds {PATH_CAP} events; shorten the horizon")
        path = SamplePath(runs[0][5], runs[0][6], runs[0][7])
    return SimEstimates(_batch_estimate(wait), _batch_estimate(level), exc, path)
