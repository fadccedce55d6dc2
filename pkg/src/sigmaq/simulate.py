"""Exact path generators on a uniform grid.

Every generator comes in two flavours: ``<name>_paths(grid, rng, n_paths, ...)``
returns an array of shape ``(n_paths, n_steps + 1)`` where row ``p`` uses stream
``rng.stream_index + p``, and ``<name>(grid, rng, ...)`` returns the single
:class:`~sigmaq.core.Path` driven by ``rng`` itself. Row ``p`` of an ensemble is
therefore bit-identical to the single path with ``stream_index + p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import backend
from .core import Path, RngSpec, TimeGrid

KINDS = (
    "brownian",
    "gbm_martingale",
    "reflected_bm",
    "squared_bessel",
    "bessel_power",
    "inverse_bessel3",
    "ou_bridge",
)


@dataclass(frozen=True)
class ProcessSpec:
    """A process kind with its parameters.

    Parameters that do not apply to ``kind`` are ignored. ``delta`` for
    ``bessel_power`` defaults to ``2 * (1 - r)`` but may be set independently;
    ``x0`` defaults to 1 for ``inverse_bessel3`` and 0 otherwise.
    """

    kind: str
    mu: float = 0.0
    x0: float | None = None
    delta: float | None = None
    r: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}; expected one of {KINDS}")
        if self.x0 is None:
            object.__setattr__(self, "x0", 1.0 if self.kind == "inverse_bessel3" else 0.0)
        if self.kind == "squared_bessel":
            if self.delta is None or not self.delta > 0:
                raise ValueError(f"squared_bessel needs delta > 0, got {self.delta}")
            if not self.x0 >= 0:
                raise ValueError(f"squared_bessel needs x0 >= 0, got {self.x0}")
        if self.kind == "bessel_power":
            if self.r is None or not 0 < self.r < 1:
                raise ValueError(f"bessel_power needs r in (0, 1), got {self.r}")
            if self.delta is not None and not self.delta > 0:
                raise ValueError(f"delta must be positive, got {self.delta}")
        if self.kind == "inverse_bessel3" and not self.x0 > 0:
            raise ValueError(f"inverse_bessel3 needs x0 > 0, got {self.x0}")
        for name in ("mu", "x0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def bessel_delta(self) -> float:
        if self.kind == "bessel_power":
            return 2.0 * (1.0 - self.r) if self.delta is None else float(self.delta)
        if self.kind == "inverse_bessel3":
            return 3.0
        return float(self.delta)

    @property
    def beta(self) -> float | None:
        """Exponent of the speed density ``m(x) ~ x**beta`` in natural scale."""
        if self.kind == "bessel_power":
            return 1.0 / self.r - 2.0
        if self.kind == "reflected_bm":
            return 0.0
        return None

    def to_dict(self) -> dict[str, Any]:
        d = {"kind": self.kind}
        if self.kind == "brownian":
            d.update(mu=self.mu, x0=self.x0)
        elif self.kind == "squared_bessel":
            d.update(delta=self.delta, x0=self.x0)
        elif self.kind == "bessel_power":
            d.update(r=self.r, delta=self.bessel_delta)
        elif self.kind == "inverse_bessel3":
            d.update(x0=self.x0)
        return d


def _check_n(n_paths: int) -> int:
    if int(n_paths) != n_paths or n_paths < 1:
        raise ValueError(f"n_paths must be a positive integer, got {n_paths}")
    return int(n_paths)


def _stream_end_ok(rng: RngSpec, n_paths: int) -> None:
    if rng.stream_index + n_paths > 2**64:
        raise ValueError("stream indices overflow 64 bits")


def brownian_paths(grid: TimeGrid, rng: RngSpec, n_paths: int, mu: float = 0.0,
                   x0: float = 0.0) -> np.ndarray:
    n_paths = _check_n(n_paths)
    _stream_end_ok(rng, n_paths)
    out = np.empty((n_paths, grid.n_steps + 1))
    backend.kernels.brownian(rng.master_seed, rng.stream_index, grid.dt, float(mu), float(x0), out)
    return out


def brownian(grid: TimeGrid, rng: RngSpec, mu: float = 0.0, x0: float = 0.0) -> Path:
    """Brownian motion with drift ``mu`` started at ``x0`` (exact Gaussian increments)."""
    return Path(grid, brownian_paths(grid, rng, 1, mu, x0)[0])


def log_gbm_paths(grid: TimeGrid, rng: RngSpec, n_paths: int) -> np.ndarray:
    """``log M_t = B_t - t/2``; the drift is folded into the increments."""
    return brownian_paths(grid, rng, n_paths, mu=-0.5)


def gbm_martingale_paths(grid: TimeGrid, rng: RngSpec, n_paths: int) -> np.ndarray:
    out = log_gbm_paths(grid, rng, n_paths)
    np.exp(out, out=out)
    return out


def gbm_martingale(grid: TimeGrid, rng: RngSpec) -> Path:
    """Exponential martingale ``M_t = exp(B_t - t/2)``, ``M_0 = 1``."""
    return Path(grid, gbm_martingale_paths(grid, rng, 1)[0])


def reflected_bm_paths(grid: TimeGrid, rng: RngSpec, n_paths: int
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reflected BM via ``X = S - B``, ``A = S``.

    ``S`` is the running maximum of ``B`` in continuous time: each step draws
    the maximum of the Brownian bridge between grid values, so ``A`` is exact
    in law and the third output ``low[:, i]`` is the exact minimum of ``X``
    on ``[t_i, t_{i+1}]``.
    """
    n_paths = _check_n(n_paths)
    _stream_end_ok(rng, n_paths)
    n1 = grid.n_steps + 1
    x = np.empty((n_paths, n1))
    a = np.empty((n_paths, n1))
    low = np.empty((n_paths, grid.n_steps))
    backend.kernels.reflected(rng.master_seed, rng.stream_index, grid.dt, x, a, low)
    return x, a, low


def reflected_bm(grid: TimeGrid, rng: RngSpec) -> tuple[Path, Path]:
    x, a, _ = reflected_bm_paths(grid, rng, 1)
    return Path(grid, x[0]), Path(grid, a[0])


def squared_bessel_paths(grid: TimeGrid, rng: RngSpec, n_paths: int, delta: float,
                         x0: float = 0.0) -> np.ndarray:
    """Squared Bessel process sampled through its exact Poisson-gamma transition."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not x0 >= 0:
        raise ValueError(f"x0 must be nonnegative, got {x0}")
    n_paths = _check_n(n_paths)
    _stream_end_ok(rng, n_paths)
    out = np.empty((n_paths, grid.n_steps + 1))
    backend.kernels.squared_bessel(rng.master_seed, rng.stream_index, out, grid.dt, float(delta), float(x0))
    return out


def squared_bessel(grid: TimeGrid, rng: RngSpec, delta: float, x0: float = 0.0) -> Path:
    return Path(grid, squared_bessel_paths(grid, rng, 1, delta, x0)[0])


def bessel_power_paths(grid: TimeGrid, rng: RngSpec, n_paths: int, r: float,
                       delta: float | None = None) -> np.ndarray:
    """``Z**r`` for a squared Bessel ``Z`` of dimension ``2(1 - r)`` started at 0."""
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    delta = 2.0 * (1.0 - r) if delta is None else delta
    out = squared_bessel_paths(grid, rng, n_paths, delta, 0.0)
    np.power(out, r, out=out)
    return out


def bessel_power(grid: TimeGrid, rng: RngSpec, r: float, delta: float | None = None) -> Path:
    return Path(grid, bessel_power_paths(grid, rng, 1, r, delta)[0])


def inverse_bessel3_paths(grid: TimeGrid, rng: RngSpec, n_paths: int, x0: float = 1.0) -> np.ndarray:
    """``1/sqrt(Z)`` with ``Z`` a 3-dimensional squared Bessel process from ``1/x0**2``."""
    if not x0 > 0:
        raise ValueError(f"x0 must be positive, got {x0}")
    out = squared_bessel_paths(grid, rng, n_paths, 3.0, 1.0 / (x0 * x0))
    np.sqrt(out, out=out)
    np.divide(1.0, out, out=out)
    return out


def inverse_bessel3(grid: TimeGrid, rng: RngSpec, x0: float = 1.0) -> Path:
    return Path(grid, inverse_bessel3_paths(grid, rng, 1, x0)[0])


def ou_bridge_paths(grid: TimeGrid, rng: RngSpec, n_paths: int) -> np.ndarray:
    """Bridge ``V_t = (1 - t) U_{t/(1-t)}`` built from a standard OU process ``U``.

    ``U`` solves ``dU = -U ds + dW`` from 0 and is advanced by its exact
    Gaussian transition between consecutive warped times.
    """
    if grid.t_end >= 1.0:
        raise ValueError(f"the bridge lives on [0, 1); got t_end={grid.t_end}")
    n_paths = _check_n(n_paths)
    _stream_end_ok(rng, n_paths)
    t = grid.times()
    s = t / (1.0 - t)
    ds = np.diff(s)
    coef = np.exp(-ds)
    scale = np.sqrt(-np.expm1(-2.0 * ds) / 2.0)
    noise = np.empty((n_paths, grid.n_steps))
    backend.kernels.fill_normals(rng.master_seed, rng.stream_index, noise, 0)
    u = np.empty((n_paths, grid.n_steps + 1))
    u[:, 0] = 0.0
    backend.kernels.ar1(coef, scale, noise, u)
    u *= 1.0 - t
    return u


def ou_bridge(grid: TimeGrid, rng: RngSpec) -> Path:
    return Path(grid, ou_bridge_paths(grid, rng, 1)[0])


def simulate_paths(spec: ProcessSpec, grid: TimeGrid, rng: RngSpec, n_paths: int) -> np.ndarray:
    """Values of the process named by ``spec`` (for ``reflected_bm``: ``X``)."""
    k = spec.kind
    if k == "brownian":
        return brownian_paths(grid, rng, n_paths, spec.mu, spec.x0)
    if k == "gbm_martingale":
        return gbm_martingale_paths(grid, rng, n_paths)
    if k == "reflected_bm":
        return reflected_bm_paths(grid, rng, n_paths)[0]
    if k == "squared_bessel":
        return squared_bessel_paths(grid, rng, n_paths, spec.delta, spec.x0)
    if k == "bessel_power":
        return bessel_power_paths(grid, rng, n_paths, spec.r, spec.delta)
    if k == "inverse_bessel3":
        return inverse_bessel3_paths(grid, rng, n_paths, spec.x0)
    return ou_bridge_paths(grid, rng, n_paths)


def initial_value(spec: ProcessSpec) -> float:
    k = spec.kind
    if k in ("brownian", "squared_bessel", "inverse_bessel3"):
        return float(spec.x0)
    if k == "gbm_martingale":
        return 1.0
    return 0.0
