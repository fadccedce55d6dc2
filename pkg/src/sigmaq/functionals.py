"""Pathwise functionals: running maxima, drawdowns, last passages, local time.

Functions accept either a :class:`~sigmaq.core.Path` or a 2-D array of paths
(one path per row) and work along the last axis. Array results are returned
for array input and :class:`Path` results for :class:`Path` input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import Path, RngSpec, TimeGrid, make_grid
from .simulate import ProcessSpec, initial_value, simulate_paths

CROSS_REL_TOL = 1e-6


class CalibrationError(RuntimeError):
    """The pilot run for local-time calibration produced no occupation at all."""


def _unwrap(path: Path | np.ndarray) -> tuple[TimeGrid | None, np.ndarray]:
    if isinstance(path, Path):
        return path.grid, path.values
    return None, np.asarray(path, dtype=np.float64)


def _wrap(grid: TimeGrid | None, values: np.ndarray) -> Path | np.ndarray:
    return values if grid is None else Path(grid, values)


def running_max(path: Path | np.ndarray) -> Path | np.ndarray:
    grid, v = _unwrap(path)
    return _wrap(grid, np.maximum.accumulate(v, axis=-1))


def drawdown(path: Path | np.ndarray) -> tuple[Any, Any]:
    """Drawdown ``S - M`` and relative drawdown ``1 - M/S``.

    The relative drawdown is undefined when the path starts at 0: for a
    :class:`Path` it is then ``None``; for arrays the affected rows are NaN.
    """
    grid, v = _unwrap(path)
    s = np.maximum.accumulate(v, axis=-1)
    dd = s - v
    start = v[..., :1]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rdd = np.where(start != 0, 1.0 - v / s, np.nan)
    if grid is None:
        return dd, rdd
    return Path(grid, dd), (Path(grid, rdd) if v[0] != 0 else None)


def interval_min(values: np.ndarray, stride: int) -> np.ndarray:
    """Minimum over each closed block ``[i*stride, (i+1)*stride]`` of the last axis."""
    return _interval_reduce(values, stride, np.minimum)


def interval_max(values: np.ndarray, stride: int) -> np.ndarray:
    return _interval_reduce(values, stride, np.maximum)


def _interval_reduce(values: np.ndarray, stride: int, op) -> np.ndarray:
    n = values.shape[-1] - 1
    if stride < 1 or n % stride:
        raise ValueError(f"stride {stride} does not divide {n} steps")
    body = values[..., :-1].reshape(values.shape[:-1] + (n // stride, stride))
    red = op.reduce(body, axis=-1)
    return op(red, values[..., stride::stride])


def step_envelope_min(step_low: np.ndarray, stride: int) -> np.ndarray:
    """Coarsen per-step minima (one per fine step) to per-block minima."""
    n = step_low.shape[-1]
    if stride < 1 or n % stride:
        raise ValueError(f"stride {stride} does not divide {n} steps")
    return step_low.reshape(step_low.shape[:-1] + (n // stride, stride)).min(axis=-1)


@dataclass(frozen=True)
class LastPassage:
    """Result of a last-passage scan over the window ``(t, t_end]``.

    ``g_hat`` is the last grid time at which the path was in the target set
    (NaN, or ``None`` for a single path, when it never was).
    """

    level: float
    zero_threshold: float
    t: float
    t_end: float
    occurred_after_t: Any
    g_hat: Any

    @property
    def no_visit_after_t(self) -> Any:
        return np.logical_not(self.occurred_after_t)


def _window(grid: TimeGrid | None, n_points: int, t: float, t_end: float | None) -> tuple[int, int, TimeGrid]:
    if grid is None:
        raise ValueError("a grid is required for array input")
    if grid.n_steps + 1 != n_points:
        raise ValueError("grid does not match the number of values")
    k_end = grid.n_steps if t_end is None else grid.index(t_end)
    if not 0 <= t < k_end * grid.dt:
        raise ValueError(f"need 0 <= t < t_end, got t={t}, t_end={k_end * grid.dt}")
    return grid.index_floor(t), k_end, grid


def _last_true(mask: np.ndarray, times: np.ndarray) -> np.ndarray:
    any_ = mask.any(axis=-1)
    last = mask.shape[-1] - 1 - np.argmax(mask[..., ::-1], axis=-1)
    return np.where(any_, times[last], np.nan)


def _finish(grid, single, level, eps, t, k_end, occurred, g_hat) -> LastPassage:
    if single:
        g = float(g_hat[0])
        return LastPassage(level, eps, t, k_end * grid.dt, bool(occurred[0]), None if np.isnan(g) else g)
    return LastPassage(level, eps, t, k_end * grid.dt, occurred, g_hat)


def last_passage(path: Path | np.ndarray, a: float, eps: float, t: float,
                 grid: TimeGrid | None = None, low: np.ndarray | None = None,
                 t_end: float | None = None) -> LastPassage:
    """Last time the path is in ``[0, max(a, eps)]``, and whether that happens after ``t``.

    The target set is ``{x <= a}`` for ``a > 0`` and ``{x <= eps}`` for
    ``a = 0``. With ``low`` (the minimum of the path over each grid interval,
    one column per interval) visits between grid points are also detected.
    A visit later than the window end is never seen, so ``no_visit_after_t``
    over-estimates the event ``{g <= t}``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if a < 0:
        raise ValueError("level must be nonnegative")
    g0, v = _unwrap(path)
    grid = g0 or grid
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    k_t, k_end, grid = _window(grid, v2.shape[-1], t, t_end)
    thr = a if a > 0 else eps
    hit = v2[:, : k_end + 1] <= thr
    g_hat = _last_true(hit, grid.times()[: k_end + 1])
    # grid points strictly after t
    first = k_t + 1
    occurred = hit[:, first:].any(axis=-1)
    if low is not None:
        lw = np.atleast_2d(low)
        # a continuous path below thr at t stays below just after t
        occurred = occurred | (lw[:, k_t:k_end] <= thr).any(axis=-1)
    return _finish(grid, single, a, eps, t, k_end, occurred, g_hat)


def last_level_time(path: Path | np.ndarray, level: float, t: float,
                    grid: TimeGrid | None = None, hi: np.ndarray | None = None,
                    lo: np.ndarray | None = None, t_end: float | None = None) -> LastPassage:
    """Last crossing of ``level`` by a positive path.

    A crossing is registered at grid index ``i`` when ``M_{i-1} - K`` and
    ``M_i - K`` have opposite signs or ``|M_i - K| <= K * 1e-6``. Optional
    per-interval envelopes ``hi``/``lo`` flag intervals whose range straddles
    the level. No crossing at all leaves ``g_hat`` unset (``sup`` of the empty
    set, read as 0 in the event ``{g_K <= t}``).
    """
    if not level > 0:
        raise ValueError("level must be positive")
    g0, v = _unwrap(path)
    grid = g0 or grid
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    k_t, k_end, grid = _window(grid, v2.shape[-1], t, t_end)
    band = level * CROSS_REL_TOL
    d = v2[:, : k_end + 1] - level
    near = np.abs(d) <= band
    cross = np.zeros_like(near)
    cross[:, 1:] = (np.sign(d[:, 1:]) * np.sign(d[:, :-1]) < 0) | near[:, 1:]
    cross[:, 0] = near[:, 0]
    g_hat = _last_true(cross, grid.times()[: k_end + 1])
    occurred = cross[:, k_t + 1:].any(axis=-1)
    if hi is not None and lo is not None:
        h, l_ = np.atleast_2d(hi)[:, k_t:k_end], np.atleast_2d(lo)[:, k_t:k_end]
        occurred = occurred | ((l_ <= level + band) & (h >= level - band)).any(axis=-1)
    return _finish(grid, single, level, band, t, k_end, occurred, g_hat)


def positive_part_above(path: Path | np.ndarray, a: float) -> Path | np.ndarray:
    grid, v = _unwrap(path)
    return _wrap(grid, np.maximum(v - a, 0.0))


def local_time_band(path: Path | np.ndarray, eps: float, calibration: float = 1.0,
                    grid: TimeGrid | None = None) -> Path | np.ndarray:
    """Occupation-band local time at 0.

    ``A_hat(t_k) = calibration / eps * dt * #{i < k : x(t_i) <= eps}``: a left
    Riemann sum, so ``A_hat(0) = 0`` and ``A_hat`` only grows across steps
    that start inside the band.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g0, v = _unwrap(path)
    grid = g0 or grid
    if grid is None:
        raise ValueError("a grid is required for array input")
    inside = (v[..., :-1] <= eps).astype(np.float64)
    out = np.zeros(v.shape)
    np.cumsum(inside, axis=-1, out=out[..., 1:])
    out *= calibration * grid.dt / eps
    return _wrap(g0, out)


def calibrate_local_time(process: ProcessSpec | np.ndarray, eps: float, pilot_n: int = 10_000,
                         t_ref: float = 1.0, dt: float = 2.0**-8, seed: int = 0,
                         x0: float | None = None) -> float:
    """Factor ``c`` with ``c * E[raw A_hat(t_ref)] = E[X(t_ref)] - X(0)`` on a pilot run.

    ``process`` is either a spec (simulated on ``[0, t_ref]`` with ``dt``) or
    an array of pilot paths sampled on that grid.
    """
    grid = make_grid(t_ref, dt)
    if isinstance(process, ProcessSpec):
        paths = simulate_paths(process, grid, RngSpec(seed), pilot_n)
        start = initial_value(process) if x0 is None else x0
    else:
        paths = np.atleast_2d(np.asarray(process, dtype=np.float64))[:pilot_n]
        if paths.shape[-1] != grid.n_steps + 1:
            raise ValueError("pilot paths do not match the (t_ref, dt) grid")
        start = float(paths[0, 0]) if x0 is None else x0
    raw = local_time_band(paths, eps, 1.0, grid)[:, -1]
    denom = float(raw.mean())
    if denom <= 0.0:
        raise CalibrationError(
            f"no pilot path entered the band [0, {eps}]; try a larger eps"
        )
    return (float(paths[:, -1].mean()) - start) / denom
