"""Rothe time stepping and the piecewise-linear interpolants.

Step ``k`` solves ``(u_k - u_{k-1})/h + (-Delta)^s_1 u_k = [f]_h((k-1)h)``,
where ``[f]_h(t) = (1/h) int_t^{t+h} f`` is the forward Steklov average.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .energy import StepData
from .grid import Grid, KernelWeights
from .step import SignField, SolverOptions, StepFailure, StepSolution, solve_step

log = logging.getLogger(__name__)

SOURCE_KINDS = ("zero", "constant", "separable_analytic", "gridded_series")
PROFILES = ("one", "bump", "wave", "ramp", "checker")
TIME_PROFILES = ("constant", "linear", "sin", "cos")
SIMPSON_PANELS = 8


@dataclass(frozen=True)
class TimeGrid:
    T: float
    m: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def h(self) -> float:
        return self.T / self.m

    def knot(self, k: int) -> float:
        return k * self.T / self.m

    @property
    def knots(self) -> np.ndarray:
        return np.array([self.knot(k) for k in range(self.m + 1)])


def spatial_profile(name: str, grid: Grid) -> np.ndarray:
    if name == "one":
        return np.ones(grid.size)
    if name == "bump":
        L = np.array(grid.shape) * grid.spacing
        return np.prod(np.sin(np.pi * grid.centers / L), axis=1)
    if name == "wave":
        L = np.array(grid.shape) * grid.spacing
        return np.prod(np.sin(2.0 * np.pi * grid.centers / L), axis=1)
    if name == "ramp":
        L = np.array(grid.shape) * grid.spacing
        return np.prod(grid.centers / L, axis=1)
    if name == "checker":
        idx = np.indices(grid.shape).reshape(grid.dimension, -1).sum(0)
        return np.where(idx % 2 == 0, 1.0, -1.0)
    raise ValueError(f"unknown profile {name!r}; expected one of {PROFILES}")


@dataclass(frozen=True)
class SourceSpec:
    """Source term ``f(x, t)``.

    * ``zero``
    * ``constant``: ``amplitude * profile(x)``
    * ``separable_analytic``: ``amplitude * profile(x) * g(t)`` with ``g`` one of
      ``constant`` (1), ``linear`` (t), ``sin`` or ``cos`` of ``frequency*t + phase``
    * ``gridded_series``: ``values[j]`` at ``times[j]``, linear in between
    """

    kind: str = "zero"
    amplitude: float = 1.0
    profile: str = "one"
    time_profile: str = "constant"
    frequency: float = 1.0
    phase: float = 0.0
    times: tuple[float, ...] | None = None
    values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}; expected one of {SOURCE_KINDS}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.time_profile not in TIME_PROFILES:
            raise ValueError(f"unknown time profile {self.time_profile!r}")
        if not all(map(math.isfinite, (self.amplitude, self.frequency, self.phase))):
            raise ValueError("source parameters must be finite")
        if self.kind == "gridded_series":
            if self.times is None or self.values is None:
                raise ValueError("gridded_series needs times and values")
            times = tuple(float(t) for t in self.times)
            vals = np.array(self.values, dtype=float)
            if len(times) < 2 or np.any(np.diff(times) <= 0):
                raise ValueError("gridded_series times must be strictly increasing, at least two")
            if vals.ndim != 2 or vals.shape[0] != len(times):
                raise ValueError("gridded_series values must have shape (len(times), cells)")
            if not np.all(np.isfinite(vals)):
                raise ValueError("gridded_series values must be finite")
            vals.setflags(write=False)
            object.__setattr__(self, "times", times)
            object.__setattr__(self, "values", vals)

    def covers(self, a: float, b: float) -> bool:
        if self.kind != "gridded_series":
            return True
        slack = 1e-12 * max(1.0, abs(self.times[-1]))
        return a >= self.times[0] - slack and b <= self.times[-1] + slack

    # time factor g and its exact mean over [t, t+h]
    def _g(self, t: float) -> float:
        w, ph = self.frequency, self.phase
        tp = self.time_profile if self.kind == "separable_analytic" else "constant"
        return {"constant": 1.0, "linear": t, "sin": math.sin(w * t + ph),
                "cos": math.cos(w * t + ph)}[tp]

    def _g_mean(self, t: float, h: float) -> float:
        w, ph = self.frequency, self.phase
        tp = self.time_profile if self.kind == "separable_analytic" else "constant"
        if tp == "constant":
            return 1.0
        if tp == "linear":
            return t + h / 2.0
        if w == 0.0:
            return self._g(t)
        if tp == "sin":
            return (math.cos(w * t + ph) - math.cos(w * (t + h) + ph)) / (w * h)
        return (math.sin(w * (t + h) + ph) - math.sin(w * t + ph)) / (w * h)

    def evaluate(self, t: float, grid: Grid) -> np.ndarray:
        """``f(., t)`` on the grid."""
        if self.kind == "zero":
            return np.zeros(grid.size)
        if self.kind == "gridded_series":
            self._check_cells(grid)
            if not self.covers(t, t):
                raise ValueError(f"t={t} outside the series coverage [{self.times[0]}, {self.times[-1]}]")
            tt = np.asarray(self.times)
            j = int(np.clip(np.searchsorted(tt, t, side="right") - 1, 0, len(tt) - 2))
            th = (t - tt[j]) / (tt[j + 1] - tt[j])
            return (1.0 - th) * self.values[j] + th * self.values[j + 1]
        return self.amplitude * spatial_profile(self.profile, grid) * self._g(t)

    def breakpoints(self, a: float, b: float) -> list[float]:
        """``[a, ..., b]`` split at the series knots, where the integrand has kinks."""
        pts = [a]
        if self.kind == "gridded_series":
            pts += [t for t in self.times if a < t < b]
        return pts + [b]

    def _check_cells(self, grid: Grid) -> None:
        if self.values.shape[1] != grid.size:
            raise ValueError(f"series has {self.values.shape[1]} cells, grid has {grid.size}")


def simpson(fn: Callable[[float], np.ndarray | float], a: float, b: float,
            panels: int = SIMPSON_PANELS):
    """Composite Simpson rule with ``panels`` (even) subintervals."""
    if panels < 2 or panels % 2:
        raise ValueError("panels must be even and >= 2")
    x = np.linspace(a, b, panels + 1)
    wts = np.ones(panels + 1)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    vals = [fn(float(t)) for t in x]
    return sum(w * v for w, v in zip(wts, vals)) * (b - a) / (3.0 * panels)


def time_integral(src: SourceSpec, fn: Callable[[float], np.ndarray | float], a: float, b: float):
    """Integrate ``fn`` over ``[a, b]`` piecewise between the source's breakpoints."""
    if not src.covers(a, b):
        raise ValueError(f"[{a}, {b}] is outside the source's time coverage")
    pts = src.breakpoints(a, b)
    return sum(simpson(fn, lo, hi) for lo, hi in zip(pts, pts[1:]))


def steklov_average(src: SourceSpec, h: float, t: float, grid: Grid) -> np.ndarray:
    """``(1/h) int_t^{t+h} f(., mu) d mu``: closed form for analytic kinds, Simpson otherwise."""
    if not h > 0:
        raise ValueError("h must be positive")
    if not src.covers(t, t + h):
        raise ValueError(f"[{t}, {t + h}] is outside the source's time coverage")
    if src.kind == "zero":
        return np.zeros(grid.size)
    if src.kind == "gridded_series":
        src._check_cells(grid)
        return time_integral(src, lambda mu: src.evaluate(mu, grid), t, t + h) / h
    return src.amplitude * spatial_profile(src.profile, grid) * src._g_mean(t, h)


def source_energy(src: SourceSpec, a: float, b: float, grid: Grid) -> float:
    """``int_a^b ||f(., t)||^2_{L^2} dt`` with ``||g||^2 = v sum g_i^2``."""
    if src.kind == "zero":
        return 0.0
    v = grid.volume
    return float(time_integral(src, lambda mu: v * float(np.sum(src.evaluate(mu, grid) ** 2)), a, b))


@dataclass
class StepRecord:
    k: int
    iterations: int
    weak_residual: float
    slackness: float
    duality_gap: float
    objective: float
    solver_tag: str


@dataclass
class Trajectory:
    timegrid: TimeGrid
    snapshots: np.ndarray
    sign_fields: list[SignField]
    source: SourceSpec = field(default_factory=SourceSpec)
    grid: Grid | None = field(default=None, repr=False)
    steps: list[StepRecord] = field(default_factory=list)
    ledger: object | None = None

    @property
    def m(self) -> int:
        return self.timegrid.m

    @property
    def h(self) -> float:
        return self.timegrid.h

    @property
    def volume(self) -> float:
        return self.grid.volume if self.grid is not None else 1.0


class RotheFailure(RuntimeError):
    """A step of the scheme failed; ``partial`` holds the snapshots solved so far."""

    def __init__(self, k: int, cause: StepFailure, partial: np.ndarray):
        super().__init__(f"step {k} failed: {cause}")
        self.k = k
        self.cause = cause
        self.partial = partial


def run_rothe(u0, src: SourceSpec, tg: TimeGrid, K: KernelWeights,
              opts: SolverOptions = SolverOptions(), method: str = "primal_dual",
              on_step: Callable[[int, StepSolution], None] | None = None) -> Trajectory:
    from .diagnostics import check_energy_chain

    u0 = np.array(u0, dtype=float)
    if u0.shape != (K.size,) or not np.all(np.isfinite(u0)):
        raise ValueError(f"u0 must be a finite field of {K.size} cells")
    grid = K.grid
    h = tg.h
    snaps = np.empty((tg.m + 1, K.size))
    snaps[0] = u0
    zs = [SignField.from_signs(u0)]
    records = []
    for k in range(1, tg.m + 1):
        f_k = steklov_average(src, h, tg.knot(k - 1), grid)
        try:
            sol = solve_step(StepData(snaps[k - 1], f_k, h), K, opts, method)
        except StepFailure as exc:
            raise RotheFailure(k, exc, snaps[:k].copy()) from exc
        snaps[k] = sol.u
        zs.append(sol.z)
        records.append(StepRecord(k, sol.iterations, sol.weak_residual, sol.slackness,
                                  sol.duality_gap, sol.objective, sol.solver_tag))
        log.debug("step %d: %d iterations, residual %.2e", k, sol.iterations, sol.weak_residual)
        if on_step is not None:
            on_step(k, sol)
    snaps.setflags(write=False)
    traj = Trajectory(tg, snaps, zs, src, grid, records)
    traj.ledger = check_energy_chain(traj, K)
    return traj


def _locate(tg: TimeGrid, t: float) -> tuple[int, float]:
    # (k, theta) with t = (k-1)h + theta h, k in 1..m; theta = 1 exactly on a knot
    if not (0.0 <= t <= tg.T) or not math.isfinite(t):
        raise ValueError(f"t={t} outside [0, {tg.T}]")
    r = t / tg.h
    k = round(r)
    if abs(r - k) <= 1e-12 * max(1.0, r):
        return (max(k, 1), 1.0 if k >= 1 else 0.0)
    k = min(max(math.ceil(r), 1), tg.m)
    return k, (t - tg.knot(k - 1)) / tg.h


def interpolate_u(traj: Trajectory, t: float) -> np.ndarray:
    """``u^m(t) = theta u_k + (1 - theta) u_{k-1}``; knots return snapshots exactly."""
    k, th = _locate(traj.timegrid, t)
    if th == 1.0:
        return traj.snapshots[k].copy()
    if th == 0.0:
        return traj.snapshots[k - 1].copy()
    return th * traj.snapshots[k] + (1.0 - th) * traj.snapshots[k - 1]


def interpolate_Z(traj: Trajectory, t: float) -> SignField:
    """Same linear rule applied to ``Z_{k-1}, Z_k``, evaluated on demand."""
    k, th = _locate(traj.timegrid, t)
    a, b = traj.sign_fields[k - 1], traj.sign_fields[k]
    if th == 1.0:
        return SignField(b.pairs.copy(), b.exterior.copy())
    if th == 0.0:
        return SignField(a.pairs.copy(), a.exterior.copy())
    return b.combine(a, th, 1.0 - th)
