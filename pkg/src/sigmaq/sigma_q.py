"""Nonnegative submartingales ``X = N + A`` and Monte-Carlo estimators of the
measure they generate.

The increasing part ``A`` is carried by the zero set of ``X``; the measure
``Q`` is characterised on each horizon by ``Q[Gamma_t 1{g <= t}] = E[Gamma_t X_t]``
where ``g`` is the last zero of ``X``. Two estimator regimes are supported:

* ``A_inf = infinity``: ``M^f_t = G(A_t) + f(A_t) X_t`` is a martingale and
  ``E[Gamma_t M^f_t] = Q[Gamma_t f(A_inf)]``;
* uniformly integrable ``X``: ``Q = X_inf . P``.

Ensembles are stored thinned to a coarse grid together with the minimum of
``X`` over every coarse interval, so last-passage events keep the resolution
of the simulation grid.
"""
from __future__ import annotations

import math
import operator
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from .core import (
    MCEstimate,
    RngSpec,
    TestResult,
    TimeGrid,
    equality_test,
    exact,
    map_paths,
    mc_estimate,
)
from .functionals import interval_max, interval_min, step_envelope_min
from .simulate import (
    ProcessSpec,
    gbm_martingale_paths,
    inverse_bessel3_paths,
    reflected_bm_paths,
    squared_bessel_paths,
)

A_INF_INFINITE = "a_inf_infinite"
CLASS_D = "class_D_uniformly_integrable"
# X_inf finite but N is only a local martingale (N^+ of class D)
N_PLUS_CLASS_D = "n_plus_class_D"
REGIMES = (A_INF_INFINITE, CLASS_D, N_PLUS_CLASS_D)

HALVING_FACTOR = 1.0 / (math.sqrt(2.0) - 1.0)
_CHUNK_POINTS = 2**22


class UnsupportedProcessError(ValueError):
    pass


class UnsupportedRegimeError(ValueError):
    pass


class InvalidPairError(ValueError):
    pass


# --------------------------------------------------------------------------- weights


class WeightFunction(ABC):
    """Nonnegative, integrable, nonincreasing ``f`` with closed-form ``F`` and ``G``.

    ``F(x) = int_0^x f`` and ``G(x) = int_x^inf f``.
    """

    name: str = ""

    @abstractmethod
    def f(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def F(self, x: np.ndarray) -> np.ndarray: ...

    @property
    @abstractmethod
    def total(self) -> float: ...

    @property
    @abstractmethod
    def support(self) -> tuple[float, bool]:
        """``(end, closed)``: ``f > 0`` exactly on ``[0, end]`` or ``[0, end)``."""

    @abstractmethod
    def to_dict(self) -> dict[str, Any]: ...

    def G(self, x: np.ndarray) -> np.ndarray:
        return self.total - self.F(x)

    @property
    def f_max(self) -> float:
        return float(self.f(np.zeros(1))[0])

    def positive_where(self, other: WeightFunction) -> bool:
        """True when ``self > 0`` wherever ``other > 0``."""
        e1, c1 = other.support
        e2, c2 = self.support
        return e1 < e2 or (e1 == e2 and (c2 or not c1))

    def __repr__(self) -> str:
        d = self.to_dict()
        kind = d.pop("kind")
        return f"{kind}(" + ", ".join(f"{k}={v:g}" for k, v in d.items()) + ")"


@dataclass(frozen=True, repr=False)
class Exponential(WeightFunction):
    """``f(x) = amplitude * exp(-rate * x)``."""

    rate: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if not (self.rate > 0 and self.amplitude > 0):
            raise ValueError("rate and amplitude must be positive")

    def f(self, x):
        return self.amplitude * np.exp(-self.rate * np.asarray(x, dtype=np.float64))

    def F(self, x):
        return self.total * -np.expm1(-self.rate * np.asarray(x, dtype=np.float64))

    def G(self, x):
        return self.total * np.exp(-self.rate * np.asarray(x, dtype=np.float64))

    @property
    def total(self):
        return self.amplitude / self.rate

    @property
    def support(self):
        return (math.inf, False)

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate, "amplitude": self.amplitude}


@dataclass(frozen=True, repr=False)
class Indicator(WeightFunction):
    """``f(x) = height * 1{x <= length}``."""

    length: float = 1.0
    height: float = 1.0

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.height > 0):
            raise ValueError("length and height must be positive")

    def f(self, x):
        return np.where(np.asarray(x) <= self.length, self.height, 0.0)

    def F(self, x):
        return self.height * np.minimum(np.asarray(x, dtype=np.float64), self.length)

    def G(self, x):
        return self.height * np.maximum(self.length - np.asarray(x, dtype=np.float64), 0.0)

    @property
    def total(self):
        return self.height * self.length

    @property
    def support(self):
        return (self.length, True)

    def to_dict(self):
        return {"kind": "indicator", "length": self.length, "height": self.height}


@dataclass(frozen=True, repr=False)
class PolynomialCutoff(WeightFunction):
    """``f(x) = height * (1 - x/length)**power`` on ``[0, length]``."""

    length: float = 1.0
    power: float = 1.0
    height: float = 1.0

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.power > 0 and self.height > 0):
            raise ValueError("length, power and height must be positive")

    def _u(self, x):
        return np.clip(1.0 - np.asarray(x, dtype=np.float64) / self.length, 0.0, 1.0)

    def f(self, x):
        return self.height * self._u(x) ** self.power

    def G(self, x):
        return self.total * self._u(x) ** (self.power + 1.0)

    def F(self, x):
        return self.total - self.G(x)

    @property
    def total(self):
        return self.height * self.length / (self.power + 1.0)

    @property
    def support(self):
        return (self.length, False)

    def to_dict(self):
        return {"kind": "polynomial_cutoff", "length": self.length, "power": self.power,
                "height": self.height}


class Unit(WeightFunction):
    """``f = 1``: the identity transform. Not integrable, so it has no ``G``."""

    def f(self, x):
        return np.ones_like(np.asarray(x, dtype=np.float64))

    def F(self, x):
        return np.asarray(x, dtype=np.float64).copy()

    @property
    def total(self):
        return math.inf

    @property
    def support(self):
        return (math.inf, False)

    def to_dict(self):
        return {"kind": "unit"}


WEIGHTS: dict[str, type[WeightFunction]] = {
    "exponential": Exponential,
    "indicator": Indicator,
    "polynomial_cutoff": PolynomialCutoff,
}


def weight_from_dict(d: dict[str, Any]) -> WeightFunction:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in WEIGHTS:
        raise ValueError(f"unknown weight kind {kind!r}; expected one of {sorted(WEIGHTS)}")
    return WEIGHTS[kind](**{k: float(v) for k, v in d.items()})


def screen_pair(f1: WeightFunction, f2: WeightFunction) -> None:
    """Admit ``(f1, f2)`` for the cross-weighted estimator or raise :class:`InvalidPairError`.

    The estimator averages ``(f1/f2)(A) G2(A) + f1(A) X``; it needs
    ``f2 > 0`` wherever ``f1 > 0`` and a bounded first term. On the
    catalogue the first condition implies the second: two exponentials give
    ``(f1/f2) G2 = c * exp(-rate1 * x)``, and a finite-support ``f1`` sees a
    continuous ratio on a compact set (or one vanishing with ``G2`` at an
    open cutoff end).
    """
    if isinstance(f1, Unit) or isinstance(f2, Unit):
        raise InvalidPairError("weights must be integrable")
    if not f2.positive_where(f1):
        raise InvalidPairError(
            f"{f2!r} vanishes where {f1!r} is positive; the ratio f1/f2 is undefined"
        )


# --------------------------------------------------------------------------- Gamma catalogue

_OPS: dict[str, Callable] = {"<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt}
_H: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float]] = {
    "exp_neg": (lambda x: np.exp(-np.abs(x)), 1.0),
    "atan": (np.arctan, math.pi / 2),
    "clip1": (lambda x: np.clip(x, -1.0, 1.0), 1.0),
}


@dataclass(frozen=True)
class GammaSpec:
    """A bounded functional of the path observed up to time ``s``.

    ``kind`` is ``const`` (value 1), ``indicator`` (``1{var_s op c}``) or
    ``bounded`` (``h(var_s)`` for a named bounded ``h``). ``var`` is one of
    ``X``, ``A``, ``N`` or an auxiliary path of the ensemble such as ``M``.
    """

    kind: str = "const"
    var: str = "X"
    s: float = 0.0
    op: str = "<="
    c: float = 0.0
    h: str = "exp_neg"

    def __post_init__(self) -> None:
        if self.kind not in ("const", "indicator", "bounded"):
            raise ValueError(f"unknown Gamma kind {self.kind!r}")
        if self.kind == "indicator" and self.op not in _OPS:
            raise ValueError(f"unknown comparison {self.op!r}")
        if self.kind == "bounded" and self.h not in _H:
            raise ValueError(f"unknown bounded function {self.h!r}; expected one of {sorted(_H)}")
        if self.s < 0:
            raise ValueError("observation time must be nonnegative")

    @property
    def time(self) -> float:
        return 0.0 if self.kind == "const" else self.s

    @property
    def bound(self) -> float:
        return _H[self.h][1] if self.kind == "bounded" else 1.0

    def evaluate(self, ens: SigmaEnsemble) -> np.ndarray:
        if self.kind == "const":
            return np.ones(ens.n_paths)
        v = ens.at(self.var, self.s)
        if self.kind == "indicator":
            return _OPS[self.op](v, self.c).astype(np.float64)
        return _H[self.h][0](v)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "const":
            return {"kind": "const"}
        d = {"kind": self.kind, "var": self.var, "s": self.s}
        d.update({"op": self.op, "c": self.c} if self.kind == "indicator" else {"h": self.h})
        return d

    def describe(self) -> str:
        if self.kind == "const":
            return "1"
        if self.kind == "indicator":
            return f"1{{{self.var}_{self.s:g} {self.op} {self.c:g}}}"
        return f"{self.h}({self.var}_{self.s:g})"


ONE = GammaSpec()


@dataclass(frozen=True)
class QFunctionalSpec:
    """What to estimate under ``Q``.

    ``shape="indicator"``: ``Q[Gamma_t 1{g_a <= t}]`` where ``g_a`` is the last
    time in ``[0, a]``. ``shape="f_of_a_inf"``: ``Q[Gamma_t f(A_inf)]``.
    ``method="identity"`` uses the defining identities under ``P``;
    ``method="density"`` uses ``Q = X_inf . P`` (uniformly integrable case)
    with the last passage truncated at ``horizon``.
    """

    shape: str
    t: float
    gamma: GammaSpec = ONE
    a: float = 0.0
    f: WeightFunction | None = None
    method: str = "identity"
    eps: float = 1e-3
    horizon: float | None = None

    def __post_init__(self) -> None:
        if self.shape not in ("indicator", "f_of_a_inf"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.method not in ("identity", "density"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.shape == "f_of_a_inf" and self.f is None:
            raise ValueError("shape f_of_a_inf needs a weight function")
        if self.gamma.time > self.t:
            raise ValueError(f"Gamma observed at {self.gamma.time} is not known at t={self.t}")
        if self.a < 0:
            raise ValueError("level a must be nonnegative")


# --------------------------------------------------------------------------- ensembles


@dataclass(frozen=True)
class SigmaProcess:
    """One path of ``X = N + A`` on ``grid``."""

    X: Any
    N: Any
    A: Any
    regime: str
    x0: float


@dataclass
class SigmaEnsemble:
    """Paths of ``X = N + A`` thinned to ``grid``.

    ``x_low[:, i]`` is the minimum of ``X`` over ``[t_i, t_{i+1}]`` at simulation
    resolution (exact in continuous time when ``exact_low``). ``x_low2`` is
    the same envelope computed from every second simulation point and feeds
    the step-halving bias allowance.
    """

    grid: TimeGrid
    X: np.ndarray
    A: np.ndarray
    regime: str
    x0: float = 0.0
    x_low: np.ndarray | None = None
    x_low2: np.ndarray | None = None
    exact_low: bool = False
    x_inf: float | np.ndarray | None = None
    aux: dict[str, np.ndarray] = field(default_factory=dict)
    name: str = ""
    sim_dt: float | None = None
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        if self.X.shape != self.A.shape or self.X.shape[1] != self.grid.n_steps + 1:
            raise ValueError("X and A must both have shape (n_paths, n_steps + 1)")
        if self.x_low is None:
            self.x_low = np.minimum(self.X[:, :-1], self.X[:, 1:])
        if self.sim_dt is None:
            self.sim_dt = self.grid.dt

    @classmethod
    def from_arrays(cls, grid: TimeGrid, X, A, regime: str = A_INF_INFINITE, **kw) -> SigmaEnsemble:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return cls(grid, X, A, regime, x0=float(X[0, 0]), **kw)

    @property
    def N(self) -> np.ndarray:
        return self.X - self.A

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def index(self, t: float) -> int:
        return self.grid.index(t)

    def at(self, var: str, t: float) -> np.ndarray:
        k = self.index(t)
        if var == "X":
            return self.X[:, k]
        if var == "A":
            return self.A[:, k]
        if var == "N":
            return self.X[:, k] - self.A[:, k]
        if var in self.aux:
            return self.aux[var][:, k]
        raise KeyError(f"ensemble {self.name!r} has no path variable {var!r}")

    def path(self, i: int) -> SigmaProcess:
        from .core import Path

        return SigmaProcess(Path(self.grid, self.X[i]), Path(self.grid, self.N[i]),
                            Path(self.grid, self.A[i]), self.regime, self.x0)

    def no_visit(self, t: float, thr: float, T: float | None = None, halved: bool = False) -> np.ndarray:
        """``1{min X > thr on (t, T]}`` per path (``T`` defaults to the horizon)."""
        k_t = self.grid.index_floor(t)
        k_T = self.grid.n_steps if T is None else self.index(T)
        if not k_t < k_T:
            raise ValueError(f"need t < T (t={t}, T={k_T * self.grid.dt})")
        low = self.x_low2 if halved else self.x_low
        if low is None:
            raise ValueError("this ensemble carries no half-resolution envelope")
        return (low[:, k_t:k_T] > thr).all(axis=1)


def _bessel_drift(z: np.ndarray, r: float, dt: float) -> np.ndarray:
    """``E[Z_{t+dt}**r | Z_t = z] - z**r`` for the squared Bessel of dimension ``2(1-r)``."""
    w = z / (2.0 * dt)
    out = np.zeros_like(z)
    m = w < 60.0
    wm = w[m]
    d = -(z[m] ** r) * gammaincc(1.0 - r, wm) + (2.0 * dt) ** r * np.exp(-wm) / gamma_fn(1.0 - r)
    out[m] = np.maximum(d, 0.0)
    return out


def bessel_compensator(z: np.ndarray, r: float, dt: float) -> np.ndarray:
    """Doob compensator of ``X = Z**r`` on the grid: ``A_k = sum_{i<k} E[X_{i+1} - X_i | Z_i]``."""
    a = np.zeros_like(z)
    np.cumsum(_bessel_drift(z[:, :-1], r, dt), axis=1, out=a[:, 1:])
    return a


def _thin(v: np.ndarray, stride: int) -> np.ndarray:
    return np.ascontiguousarray(v[:, ::stride])


def assemble_sigma(
    process: ProcessSpec,
    grid: TimeGrid,
    n_paths: int,
    rng: RngSpec,
    *,
    transform: str | None = None,
    strike: float = 1.0,
    stride: int = 1,
    halving: bool = False,
    compensator: str = "exact",
    band_eps: float = 0.05,
    band_calibration: float = 1.0,
    chunk_paths: int | None = None,
    threads: int | None = None,
) -> SigmaEnsemble:
    """Simulate ``n_paths`` paths on ``grid`` and keep every ``stride``-th point.

    Supported: ``reflected_bm`` (``A`` = running max of the driving BM),
    ``bessel_power`` (``A`` = discrete Doob compensator, or the calibrated
    occupation band with ``compensator="band"``), ``gbm_martingale`` with
    ``transform="put"`` (``X = (K - M)^+`` via the discrete Tanaka formula)
    and ``inverse_bessel3``/``gbm_martingale`` with ``transform="drawdown"``
    (``X = S - M``, ``A = S - M_0``).
    """
    if stride < 1 or grid.n_steps % stride:
        raise ValueError(f"stride {stride} does not divide n_steps={grid.n_steps}")
    if halving and stride % 2:
        raise ValueError("halving envelopes need an even stride")
    kind = process.kind
    key = (kind, transform)
    supported = {("reflected_bm", None), ("bessel_power", None), ("gbm_martingale", "put"),
                 ("gbm_martingale", "drawdown"), ("inverse_bessel3", "drawdown")}
    if key not in supported:
        raise UnsupportedProcessError(
            f"no class-(Sigma) construction for process {kind!r} with transform {transform!r}"
        )
    if transform == "put" and not strike > 0:
        raise ValueError("strike must be positive")
    if compensator not in ("exact", "band"):
        raise ValueError(f"unknown compensator {compensator!r}")
    cgrid = grid.coarsen(stride)
    dt = grid.dt
    half = stride // 2

    def chunk(first: int, count: int) -> dict[str, np.ndarray]:
        sub = RngSpec(rng.master_seed, rng.stream_index + first)
        out: dict[str, np.ndarray] = {}
        if kind == "reflected_bm":
            x, a, low = reflected_bm_paths(grid, sub, count)
            out["x_low"] = step_envelope_min(low, stride)
        elif kind == "bessel_power":
            z = squared_bessel_paths(grid, sub, count, process.bessel_delta, 0.0)
            x = z ** process.r
            if compensator == "exact":
                a = bessel_compensator(z, process.r, dt)
            else:
                from .functionals import local_time_band

                a = local_time_band(x, band_eps, band_calibration, grid)
            del z
        else:
            if kind == "gbm_martingale":
                m = gbm_martingale_paths(grid, sub, count)
            else:
                m = inverse_bessel3_paths(grid, sub, count, process.x0)
            if transform == "put":
                x = np.maximum(strike - m, 0.0)
                below = (m[:, :-1] < strike).astype(np.float64)
                n = np.empty_like(m)
                n[:, 0] = 0.0
                np.cumsum(below * np.diff(m, axis=1), axis=1, out=n[:, 1:])
                # A = X - N with N = X_0 - sum 1{M < K} dM
                a = x - x[:, :1] + n
                a[:, 0] = 0.0
                out["M_hi"] = interval_max(m, stride)
                out["M_lo"] = interval_min(m, stride)
            else:
                s = np.maximum.accumulate(m, axis=1)
                x = s - m
                a = s - m[:, :1]
                out["S"] = _thin(s, stride)
            out["M"] = _thin(m, stride)
            del m
        if "x_low" not in out:
            out["x_low"] = interval_min(x, stride)
        if halving:
            out["x_low2"] = interval_min(np.ascontiguousarray(x[:, ::2]), half)
        out["X"] = _thin(x, stride)
        out["A"] = _thin(a, stride)
        return out

    if chunk_paths is None:
        chunk_paths = max(1, _CHUNK_POINTS // (grid.n_steps + 1))
    res = map_paths(chunk, n_paths, chunk_paths, threads)
    X, A = res.pop("X"), res.pop("A")
    x_low, x_low2 = res.pop("x_low"), res.pop("x_low2", None)
    info = {"process": process.to_dict(), "transform": transform, "n_paths": n_paths,
            "sim_dt": dt, "t_end": grid.t_end, "stride": stride,
            "master_seed": rng.master_seed, "stream_index": rng.stream_index}
    if kind == "reflected_bm":
        return SigmaEnsemble(cgrid, X, A, A_INF_INFINITE, 0.0, x_low, x_low2, True,
                             aux=res, name="reflected_bm", sim_dt=dt, info=info)
    if kind == "bessel_power":
        info["compensator"] = compensator
        return SigmaEnsemble(cgrid, X, A, A_INF_INFINITE, 0.0, x_low, x_low2, False,
                             aux=res, name=f"bessel_power(r={process.r:g})", sim_dt=dt, info=info)
    if transform == "put":
        info["strike"] = strike
        return SigmaEnsemble(cgrid, X, A, CLASS_D, max(strike - 1.0, 0.0), x_low, x_low2, False,
                             x_inf=float(strike), aux=res, name=f"put(K={strike:g})", sim_dt=dt,
                             info=info)
    return SigmaEnsemble(cgrid, X, A, N_PLUS_CLASS_D, 0.0, x_low, x_low2, False, aux=res,
                         name=f"drawdown({kind})", sim_dt=dt, info=info)


# --------------------------------------------------------------------------- checks and estimators


def _worst(results: list[TestResult], name: str) -> TestResult:
    worst = max(results, key=lambda r: r.z_score)
    per = [r.to_dict() | {"t": r.extra.get("t")} for r in results]
    return replace(worst, name=name, passed=all(r.passed for r in results),
                   extra={"per_time": per})


def check_sigma_axioms(ens: SigmaEnsemble, eps_support: float = 0.01, tol: float = 0.02,
                       times: Sequence[float] = (1.0, 4.0, 16.0), z_crit: float = 3.0,
                       floor: float = 1e-12) -> list[TestResult]:
    """Martingale constancy of ``N``, monotonicity of ``A`` and support of ``dA``.

    The support statistic is, per path, the increase of ``A`` over coarse
    intervals on which ``X`` stays above ``eps_support`` divided by
    ``max(A_T, floor)``; its mean must not exceed ``tol``.
    """
    label = ens.name or "ensemble"
    usable = [t for t in times if t <= ens.grid.t_end + 1e-12]
    if not usable:
        usable = [ens.grid.t_end]
    n0 = float(np.mean(ens.X[:, 0] - ens.A[:, 0]))
    per_t = []
    for t in usable:
        nt = ens.at("N", t)
        est = mc_estimate(nt) if ens.n_paths > 1 else exact(float(nt[0]))
        per_t.append(equality_test(est, exact(n0), z_crit, 0.0, name=f"N_{t:g}", t=t))
    mart = _worst(per_t, f"{label}: E[N_t] constant")

    scale = np.maximum(1.0, np.abs(ens.A[:, :-1]))
    violations = int(np.count_nonzero(np.diff(ens.A, axis=1) < -1e-12 * scale))
    mono = equality_test(exact(violations), exact(0.0), 0.0, 0.0,
                         name=f"{label}: A nondecreasing")

    k_T = ens.index(max(usable))
    dA = np.diff(ens.A[:, : k_T + 1], axis=1)
    off = (ens.x_low[:, :k_T] > eps_support) * dA
    stat = off.sum(axis=1) / np.maximum(ens.A[:, k_T], floor)
    est = mc_estimate(stat) if ens.n_paths > 1 else exact(float(stat[0]))
    supp = equality_test(est, exact(0.0), 0.0, tol, name=f"{label}: dA carried by {{X=0}}",
                         eps_support=eps_support)
    return [mart, mono, supp]


def transform_f(ens: SigmaEnsemble, f: WeightFunction) -> SigmaEnsemble:
    """``X' = f(A) X`` with increasing part ``A' = F(A)``."""
    fa = f.f(ens.A)
    X = fa * ens.X
    A = f.F(ens.A)
    # f is nonincreasing, so f(A) at the right end bounds it on the interval
    x_low = ens.x_low * fa[:, 1:]
    x_low2 = None if ens.x_low2 is None else ens.x_low2 * fa[:, 1:]
    return SigmaEnsemble(ens.grid, X, A, ens.regime, float(f.f(np.zeros(1))[0]) * ens.x0,
                         x_low, x_low2, ens.exact_low, None, dict(ens.aux),
                         f"{f!r}(A)*{ens.name}", ens.sim_dt, dict(ens.info))


def mf_martingale(ens: SigmaEnsemble, f: WeightFunction) -> np.ndarray:
    """``M^f_t = G(A_t) + f(A_t) X_t`` per path and grid point."""
    if ens.regime != A_INF_INFINITE:
        raise UnsupportedRegimeError(
            f"M^f needs A_inf = infinity; ensemble regime is {ens.regime!r}. "
            "Use q_expect with method='density' (Q = X_inf . P) instead"
        )
    if not math.isfinite(f.total):
        raise ValueError("f must be integrable")
    return f.G(ens.A) + f.f(ens.A) * ens.X


def _mf_at(ens: SigmaEnsemble, f: WeightFunction, t: float) -> np.ndarray:
    if ens.regime != A_INF_INFINITE:
        mf_martingale(ens, f)
    a = ens.at("A", t)
    return f.G(a) + f.f(a) * ens.at("X", t)


def q_expect(ens: SigmaEnsemble, spec: QFunctionalSpec) -> MCEstimate:
    """Monte-Carlo estimate of a ``Q``-expectation described by ``spec``."""
    gam = spec.gamma.evaluate(ens)
    if spec.method == "identity":
        if spec.shape == "indicator":
            return mc_estimate(gam * np.maximum(ens.at("X", spec.t) - spec.a, 0.0))
        return mc_estimate(gam * _mf_at(ens, spec.f, spec.t))
    if ens.regime != CLASS_D or ens.x_inf is None:
        raise UnsupportedRegimeError("the density method needs a uniformly integrable X with known X_inf")
    if spec.shape != "indicator":
        raise UnsupportedRegimeError("the density method supports the indicator shape only")
    thr = max(spec.a, spec.eps)
    ind = ens.no_visit(spec.t, thr, spec.horizon)
    return mc_estimate(gam * np.asarray(ens.x_inf) * ind)


def horizon_consistency(ens: SigmaEnsemble, gamma: GammaSpec, t: float, a: float,
                        T: float | None = None, eps: float = 1e-3,
                        z_crit: float = 3.0) -> TestResult:
    """``E[Gamma (X_t - a)^+] = E[Gamma 1{no visit to [0, max(a, eps)] in (t, T]} (X_T - a)^+]``.

    Both sides are computed on the same paths. The allowance is ``2 eps`` for
    ``a = 0`` plus, for ensembles without an exact interval minimum, the
    step-halving estimate of the detection bias.
    """
    if ens.regime != A_INF_INFINITE:
        raise UnsupportedRegimeError("horizon_consistency needs A_inf = infinity")
    T = ens.grid.t_end if T is None else T
    if gamma.time > t:
        raise ValueError("Gamma must be observed by time t")
    g = gamma.evaluate(ens)
    lhs = mc_estimate(g * np.maximum(ens.at("X", t) - a, 0.0))
    thr = a if a > 0 else eps
    xT = np.maximum(ens.at("X", T) - a, 0.0)
    rhs = mc_estimate(g * ens.no_visit(t, thr, T) * xT)
    allowance = 2.0 * eps if a == 0 else 0.0
    extra: dict[str, Any] = {"t": t, "T": T, "a": a, "gamma": gamma.describe()}
    if not ens.exact_low and ens.x_low2 is not None:
        rhs2 = float(np.mean(g * ens.no_visit(t, thr, T, halved=True) * xT))
        disc = HALVING_FACTOR * abs(rhs2 - rhs.mean)
        allowance += disc
        extra["discretization_allowance"] = disc
    return equality_test(lhs, rhs, z_crit, allowance,
                         name=f"level-{a:g} identity, Gamma={gamma.describe()}, t={t:g}, T={T:g}",
                         **extra)


def cross_weighted(ens: SigmaEnsemble, f1: WeightFunction, f2: WeightFunction, T: float) -> np.ndarray:
    """Per-path ``(f1/f2)(A_T) M^{f2}_T = (f1/f2)(A_T) G2(A_T) + f1(A_T) X_T``."""
    a = ens.at("A", T)
    v1, v2 = f1.f(a), f2.f(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(v1 > 0, v1 / v2, 0.0)
    return ratio * f2.G(a) + v1 * ens.at("X", T)


def truncation_term(ens: SigmaEnsemble, f1: WeightFunction, f2: WeightFunction, T: float) -> np.ndarray:
    """Per-path ``(f1/f2)(A_T) G2(A_T) - G1(A_T)``.

    Its mean is exactly the gap between the cross-weighted mean at ``T`` and
    ``int f1`` (since ``E[M^{f1}_T] = int f1``), so it measures the horizon
    effect on the same paths.
    """
    a = ens.at("A", T)
    v1, v2 = f1.f(a), f2.f(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(v1 > 0, v1 / v2, 0.0)
    return ratio * f2.G(a) - f1.G(a)


def f_independence(ens: SigmaEnsemble, f1: WeightFunction, f2: WeightFunction,
                   T: float | None = None, z_crit: float = 3.0) -> TestResult:
    """``E[(f1/f2)(A_T) M^{f2}_T]`` against ``int f1``.

    The allowance is the measured horizon term ``|mean(truncation_term)|``;
    the change ``est(T) - est(T/4)`` is reported alongside.
    """
    screen_pair(f1, f2)
    if ens.regime != A_INF_INFINITE:
        raise UnsupportedRegimeError("f_independence needs A_inf = infinity")
    T = ens.grid.t_end if T is None else T
    est = mc_estimate(cross_weighted(ens, f1, f2, T))
    allowance = abs(float(np.mean(truncation_term(ens, f1, f2, T))))
    extra = {"T": T}
    try:
        extra["change_from_T_over_4"] = est.mean - float(np.mean(cross_weighted(ens, f1, f2, T / 4)))
    except ValueError:
        pass
    return equality_test(est, exact(f1.total), z_crit, allowance,
                         name=f"f-independence {f1!r} via {f2!r}, T={T:g}", **extra)


def ratio_limit(ens: SigmaEnsemble, f: WeightFunction, T_list: Sequence[float],
                f2: WeightFunction | None = None) -> list[MCEstimate]:
    """Weighted discrepancy ``min(|M^f_T / X_T - f(A_T)|, 1)`` for each ``T``.

    The discrepancy equals ``G(A_T)/X_T``; it is capped at 1 because
    ``1/X_T`` is not integrable. Weights are ``M^{f2}_T / int f2`` and
    paths with ``X_T = 0`` contribute 0.
    """
    f2 = Exponential() if f2 is None else f2
    out = []
    for T in T_list:
        x = ens.at("X", T)
        w = _mf_at(ens, f2, T) / f2.total
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(x > 0, np.minimum(f.G(ens.at("A", T)) / x, 1.0), 0.0)
        out.append(mc_estimate(w * d))
    return out
