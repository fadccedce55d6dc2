"""Time grids, sampled paths, random-stream specs and Monte-Carlo statistics."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import norm

DEFAULT_CI_LEVEL = 0.99
DEFAULT_Z_CRIT = 3.0
_MAX_STEPS = 2**40
_UINT64 = 2**64


class InsufficientDataError(ValueError):
    """Raised when an estimate is requested from fewer than two samples."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * dt`` for ``i = 0..n_steps``.

    Only ``(dt, n_steps)`` is stored; times are always recomputed as ``i * dt``.
    """

    dt: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def time(self, i: int) -> float:
        return i * self.dt

    def index(self, t: float) -> int:
        """Grid index of time ``t``; ``t`` must lie on the grid."""
        i = int(round(t / self.dt))
        if not 0 <= i <= self.n_steps or abs(i * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a grid point of {self}")
        return i

    def index_floor(self, t: float) -> int:
        """Last grid index with ``t_i <= t`` (clipped to the grid)."""
        i = int(math.floor(t / self.dt + 1e-9))
        return min(max(i, 0), self.n_steps)

    def coarsen(self, stride: int) -> TimeGrid:
        if stride < 1 or self.n_steps % stride:
            raise ValueError(f"stride {stride} does not divide n_steps={self.n_steps}")
        return TimeGrid(self.dt * stride, self.n_steps // stride)


def make_grid(t_end: float, dt: float) -> TimeGrid:
    if not (t_end > 0 and dt > 0):
        raise ValueError(f"t_end and dt must be positive (got t_end={t_end}, dt={dt})")
    ratio = t_end / dt
    if not math.isfinite(ratio) or ratio > _MAX_STEPS:
        raise ValueError(f"t_end/dt = {ratio} is out of range")
    n = int(round(ratio))
    if n < 1:
        raise ValueError(f"t_end={t_end} is shorter than one step dt={dt}")
    if abs(ratio - n) > 1e-9 * ratio:
        raise ValueError(f"dt={dt} does not divide t_end={t_end}")
    return TimeGrid(dt, n)


@dataclass(frozen=True)
class Path:
    """A trajectory sampled at every point of ``grid``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_steps + 1,):
            raise ValueError(f"expected {self.grid.n_steps + 1} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    def at(self, t: float) -> float:
        return float(self.values[self.grid.index(t)])

    def times(self) -> np.ndarray:
        return self.grid.times()


@dataclass(frozen=True)
class RngSpec:
    """Key of one counter-based random stream: ``(master_seed, stream_index)``."""

    master_seed: int
    stream_index: int = 0

    def __post_init__(self) -> None:
        for name in ("master_seed", "stream_index"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < _UINT64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {v}")


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int
    ci_level: float = DEFAULT_CI_LEVEL

    @property
    def z(self) -> float:
        return float(norm.ppf(0.5 + self.ci_level / 2))

    @property
    def half_width(self) -> float:
        return self.z * self.std_error

    @property
    def ci(self) -> tuple[float, float]:
        return (self.mean - self.half_width, self.mean + self.half_width)

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean, "se": self.std_error, "n": self.n_samples}


def mc_estimate(samples: Sequence[float] | np.ndarray, ci_level: float = DEFAULT_CI_LEVEL) -> MCEstimate:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if not 0 < ci_level < 1:
        raise ValueError(f"ci_level must lie in (0, 1), got {ci_level}")
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    return MCEstimate(mean, se, int(x.size), ci_level)


def exact(value: float) -> MCEstimate:
    """An exact value expressed as an estimate with zero standard error."""
    return MCEstimate(float(value), 0.0, 0)


def _as_estimate(v: MCEstimate | float) -> MCEstimate:
    return v if isinstance(v, MCEstimate) else exact(v)


@dataclass(frozen=True)
class TestResult:
    lhs: MCEstimate
    rhs: MCEstimate
    z_score: float
    passed: bool
    tolerance_spec: str
    name: str = ""
    z_crit: float = DEFAULT_Z_CRIT
    allowance: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def difference(self) -> float:
        return self.lhs.mean - self.rhs.mean

    @property
    def joint_se(self) -> float:
        return math.hypot(self.lhs.std_error, self.rhs.std_error)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "lhs": self.lhs.mean,
            "lhs_se": self.lhs.std_error,
            "rhs": self.rhs.mean,
            "rhs_se": self.rhs.std_error,
            "z": self.z_score,
            "z_crit": self.z_crit,
            "allowance": self.allowance,
            "passed": self.passed,
            "tolerance": self.tolerance_spec,
            **({"extra": self.extra} if self.extra else {}),
        }

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (
            f"[{flag}] {self.name}: lhs={self.lhs.mean:.6g}±{self.lhs.std_error:.2g} "
            f"rhs={self.rhs.mean:.6g}±{self.rhs.std_error:.2g} z={self.z_score:.3g} "
            f"allowance={self.allowance:.3g}"
        )


def equality_test(
    lhs: MCEstimate | float,
    rhs: MCEstimate | float,
    z_crit: float = DEFAULT_Z_CRIT,
    abs_bias_allowance: float = 0.0,
    name: str = "",
    **extra: Any,
) -> TestResult:
    """Pass iff ``|lhs - rhs| <= z_crit * sqrt(se_l**2 + se_r**2) + allowance``."""
    lo, ro = _as_estimate(lhs), _as_estimate(rhs)
    if not (math.isfinite(lo.mean) and math.isfinite(ro.mean)):
        raise ValueError("both sides need a finite mean")
    if abs_bias_allowance < 0 or z_crit < 0:
        raise ValueError("z_crit and abs_bias_allowance must be nonnegative")
    diff = abs(lo.mean - ro.mean)
    se = math.hypot(lo.std_error, ro.std_error)
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.inf
    passed = diff <= z_crit * se + abs_bias_allowance
    spec = f"|diff| <= {z_crit:g}*joint_se + {abs_bias_allowance:.3g}"
    return TestResult(lo, ro, z, bool(passed), spec, name, z_crit, abs_bias_allowance, dict(extra))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SIGMAQ_THREADS", "1")))
    except ValueError:
        return 1


def map_paths(
    fn: Callable[[int, int], dict[str, np.ndarray]],
    n_paths: int,
    chunk_paths: int,
    threads: int | None = None,
) -> dict[str, np.ndarray]:
    """Run ``fn(first_stream, count)`` over path chunks and concatenate in path order.

    Each chunk owns disjoint stream indices, so the result does not depend on
    ``threads`` or on scheduling order.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    chunk_paths = max(1, int(chunk_paths))
    starts = list(range(0, n_paths, chunk_paths))
    jobs = [(s, min(chunk_paths, n_paths - s)) for s in starts]
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(jobs) == 1:
        parts = [fn(s, c) for s, c in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: fn(*job), jobs))
    keys = parts[0].keys()
    return {k: np.concatenate([p[k] for p in parts], axis=0) for k in keys}
