"""A priori estimates checked on computed trajectories.

Notation: ``[u]`` is the discrete seminorm, ``||u||^2 = v sum u_i^2``.
Testing the weak form of step ``k`` with ``u_k - u_{k-1}`` and with ``u_k``
gives, up to the step residual,

    [u_k] <= [u_{k-1}] + (h/4) ||[f]_h||^2 <= [u_{k-1}] + (1/4) int ||f||^2
    ||u_k||^2 <= ||u_0||^2 + 2h sum_{j<=k} <[f]_j, u_j>

The ledger stores both margins (right side minus left side).  Time sampling
for the sup and Hoelder checks uses every knot plus 4 interior points per
interval; since ``u^m`` is linear between knots, the L^2 norm and the
seminorm are convex along each segment and the sup is attained at a knot.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .energy import seminorm_s1
from .grid import KernelWeights
from .rothe import SourceSpec, TimeGrid, Trajectory, interpolate_u, run_rothe, source_energy, steklov_average
from .step import SolverOptions

LEDGER_COLUMNS = ("k", "t", "seminorm", "l2_norm", "increment_l2", "source_energy",
                  "margin_chain", "margin_l2")
INTERIOR_SAMPLES = 4


def l2_sq(u: np.ndarray, v: float) -> float:
    return float(v * np.dot(u, u))


@dataclass
class EnergyLedger:
    k: np.ndarray
    t: np.ndarray
    seminorm: np.ndarray
    l2_norm: np.ndarray
    increment_l2: np.ndarray
    source_energy: np.ndarray
    margin_chain: np.ndarray
    margin_l2: np.ndarray
    scale: float = 1.0

    def min_margin(self) -> float:
        # row 0 carries no inequality
        if len(self.k) < 2:
            return 0.0
        return float(min(self.margin_chain[1:].min(), self.margin_l2[1:].min()))

    def passes(self, tol: float = 1e-6) -> bool:
        return self.min_margin() >= -tol * self.scale

    def seminorm_nonincreasing(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.seminorm) <= tol * self.scale))

    def rows(self):
        for r in zip(*(getattr(self, c) for c in LEDGER_COLUMNS)):
            yield dict(zip(LEDGER_COLUMNS, r))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(LEDGER_COLUMNS)
            for row in self.rows():
                wr.writerow([int(row["k"])] + [f"{row[c]:.17g}" for c in LEDGER_COLUMNS[1:]])


def check_energy_chain(traj: Trajectory, K: KernelWeights) -> EnergyLedger:
    """Per-step seminorm chain and cumulative L^2 bound; violations show as negative margins."""
    tg, v, grid = traj.timegrid, K.volume, K.grid
    h, m = tg.h, tg.m
    U = traj.snapshots
    semi = np.array([seminorm_s1(u, K) for u in U])
    l2 = np.sqrt(np.maximum(v * np.einsum("ki,ki->k", U, U), 0.0))
    inc = np.zeros(m + 1)
    inc[1:] = np.sqrt(v * ((U[1:] - U[:-1]) ** 2).sum(1))
    energy = np.zeros(m + 1)
    m_chain = np.zeros(m + 1)
    m_l2 = np.zeros(m + 1)
    work = 0.0
    for k in range(1, m + 1):
        energy[k] = source_energy(traj.source, tg.knot(k - 1), tg.knot(k), grid)
        m_chain[k] = semi[k - 1] + energy[k] / 4.0 - semi[k]
        fk = steklov_average(traj.source, h, tg.knot(k - 1), grid)
        work += 2.0 * h * v * float(fk @ U[k])
        m_l2[k] = l2[0] ** 2 + work - l2[k] ** 2
    scale = max(1.0, semi[0] + l2[0] ** 2 + float(energy.sum()))
    return EnergyLedger(np.arange(m + 1), tg.knots, semi, l2, inc, energy, m_chain, m_l2, scale)


def sample_times(tg: TimeGrid, interior: int = INTERIOR_SAMPLES) -> np.ndarray:
    pts = [tg.knot(0)]
    for k in range(1, tg.m + 1):
        a = tg.knot(k - 1)
        pts += [a + tg.h * j / (interior + 1) for j in range(1, interior + 1)]
        pts.append(tg.knot(k))
    return np.array(pts)


def check_sup_bound(traj: Trajectory, K: KernelWeights) -> float:
    """``sup_t ||u^m(t)||^2 + [u^m(t)]`` over the sampled times."""
    best = 0.0
    for t in sample_times(traj.timegrid):
        u = interpolate_u(traj, float(t))
        best = max(best, l2_sq(u, K.volume) + seminorm_s1(u, K))
    return best


def time_derivative_norm(traj: Trajectory) -> float:
    """``int_0^T ||d_t u^m||^2 dt = (1/h) sum_k ||u_k - u_{k-1}||^2``."""
    d = np.diff(traj.snapshots, axis=0)
    return float(traj.volume * (d**2).sum() / traj.h)


def holder_quotient(traj: Trajectory, samples: int | None = None) -> float:
    """``max ||u^m(t1) - u^m(t2)|| / |t1 - t2|^(1/2)`` over pairs of sampled times.

    ``samples=None`` uses the knots plus interior points; an integer adds that
    many equispaced times on ``[0, T]`` to the knots.
    """
    tg = traj.timegrid
    if samples is None:
        times = sample_times(tg)
    else:
        if samples < 2:
            raise ValueError("need at least 2 samples")
        times = np.union1d(tg.knots, np.linspace(0.0, tg.T, samples))
    U = np.array([interpolate_u(traj, float(t)) for t in times])
    v = traj.volume
    best = 0.0
    for a in range(len(times) - 1):
        d = U[a + 1:] - U[a]
        dist = np.sqrt(v * (d**2).sum(1))
        dt = np.abs(times[a + 1:] - times[a])
        ok = dt > 0
        if ok.any():
            best = max(best, float((dist[ok] / np.sqrt(dt[ok])).max()))
    return best


def _same_source(a: SourceSpec, b: SourceSpec) -> bool:
    if a.kind != b.kind:
        return False
    if a.kind == "gridded_series":
        return a.times == b.times and np.array_equal(a.values, b.values)
    return (a.amplitude, a.profile, a.time_profile, a.frequency, a.phase) == \
           (b.amplitude, b.profile, b.time_profile, b.frequency, b.phase)


@dataclass
class ContractionReport:
    gaps: list[float]
    initial_gap: float
    max_growth: float
    scale: float
    identical: bool

    def passes(self, tol: float = 1e-6) -> bool:
        return self.max_growth <= tol * self.scale

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passes"] = self.passes()
        return d


def contraction_check(traj_a: Trajectory, traj_b: Trajectory) -> ContractionReport:
    """``max_k ||a_k - b_k|| - ||a_0 - b_0||``: nonpositive for an L^2 contraction."""
    if traj_a.timegrid != traj_b.timegrid:
        raise ValueError("trajectories use different time grids")
    if traj_a.snapshots.shape != traj_b.snapshots.shape:
        raise ValueError("trajectories live on different grids")
    if not _same_source(traj_a.source, traj_b.source):
        raise ValueError("trajectories use different sources")
    v = traj_a.volume
    d = traj_a.snapshots - traj_b.snapshots
    gaps = np.sqrt(v * (d**2).sum(1))
    scale = max(1.0, math.sqrt(l2_sq(traj_a.snapshots[0], v)), math.sqrt(l2_sq(traj_b.snapshots[0], v)))
    return ContractionReport([float(g) for g in gaps], float(gaps[0]), float((gaps - gaps[0]).max()),
                             scale, bool(np.array_equal(traj_a.snapshots, traj_b.snapshots)))


@dataclass
class RefinementRow:
    m: int
    difference: float | None
    sup_energy: float
    w12: float


@dataclass
class RefinementTable:
    rows: list[RefinementRow]
    trajectories: dict[int, Trajectory] = field(default_factory=dict, repr=False)

    @property
    def differences(self) -> list[float]:
        return [r.difference for r in self.rows if r.difference is not None]

    def nonincreasing(self, tol: float = 0.0) -> bool:
        d = self.differences
        return all(b <= a + tol for a, b in zip(d, d[1:]))

    def spread(self, attr: str) -> float:
        """``(max - min) / max`` of a column."""
        vals = [getattr(r, attr) for r in self.rows]
        top = max(vals)
        return 0.0 if top == 0 else (top - min(vals)) / top

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "nonincreasing": self.nonincreasing(),
                "sup_spread": self.spread("sup_energy"), "w12_spread": self.spread("w12")}


def check_nested(m_list) -> list[int]:
    ms = [int(m) for m in m_list]
    if len(ms) < 2:
        raise ValueError("m_list needs at least two entries")
    for a, b in zip(ms, ms[1:]):
        if not (a >= 1 and b > a and b % a == 0):
            raise ValueError(f"m_list must be increasing with each entry dividing the next, got {ms}")
    return ms


def max_difference_at_knots(coarse: Trajectory, fine: Trajectory) -> float:
    """Largest L^2 distance between the two interpolants at the coarse knots."""
    r = fine.m // coarse.m
    d = fine.snapshots[::r] - coarse.snapshots
    return float(np.sqrt(coarse.volume * (d**2).sum(1)).max())


def refinement_study(u0, src: SourceSpec, T: float, m_list, K: KernelWeights,
                     opts: SolverOptions = SolverOptions(), method: str = "primal_dual",
                     workers: int = 1) -> RefinementTable:
    ms = check_nested(m_list)

    def run(m):
        return run_rothe(u0, src, TimeGrid(T, m), K, opts, method)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = dict(zip(ms, pool.map(run, ms)))
    else:
        trajs = {m: run(m) for m in ms}
    rows = []
    for i, m in enumerate(ms):
        diff = max_difference_at_knots(trajs[m], trajs[ms[i + 1]]) if i + 1 < len(ms) else None
        rows.append(RefinementRow(m, diff, check_sup_bound(trajs[m], K), time_derivative_norm(trajs[m])))
    return RefinementTable(rows, trajs)
