"""Shared fixture corpus: small grids, short horizons."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from fracflow.grid import GridSpec, assemble_kernel, build_grid
from fracflow.rothe import SourceSpec, TimeGrid, run_rothe, spatial_profile


@dataclass(frozen=True)
class Case:
    name: str
    dim: int
    cells: int
    s: float
    T: float
    m: int


def kernel(dim: int, cells, s: float = 0.5, spacing: float | None = None, **kw):
    c = cells if isinstance(cells, int) else max(cells)
    spec = GridSpec(dim, cells, spacing if spacing is not None else 1.0 / c, **kw)
    grid = build_grid(spec)
    return grid, assemble_kernel(grid, s, spec)


def smooth_data(grid):
    u0 = spatial_profile("bump", grid) + 0.5 * spatial_profile("ramp", grid)
    src = SourceSpec("separable_analytic", 10.0, "wave", "sin", 60.0)
    return u0, src


SMOOTH = Case("smooth_1d", 1, 12, 0.5, 0.05, 16)


def _case_data(name, grid):
    rng = np.random.default_rng(7)
    if name == "smooth_1d":
        return smooth_data(grid)
    if name == "bump_1d_free":
        return spatial_profile("bump", grid), SourceSpec()
    if name == "random_2d_free":
        return rng.uniform(-1, 1, grid.size), SourceSpec()
    if name == "checker_2d_forced":
        return 0.5 * spatial_profile("checker", grid), SourceSpec("separable_analytic", 5.0, "checker", "cos", 40.0)
    if name == "series_1d":
        times = np.linspace(0.0, 0.05, 6)
        vals = rng.uniform(-8, 8, (6, grid.size))
        return rng.uniform(-1, 1, grid.size), SourceSpec("gridded_series", times=tuple(times), values=vals)
    if name == "ramp_2d_small_s":
        return spatial_profile("ramp", grid) + 0.3 * spatial_profile("wave", grid), SourceSpec(
            "separable_analytic", 400.0, "one", "linear")
    if name == "single_cell":
        return np.array([1.0]), SourceSpec()
    raise KeyError(name)


CORPUS = (
    SMOOTH,
    Case("bump_1d_free", 1, 12, 0.5, 0.05, 16),
    Case("random_2d_free", 2, 4, 0.5, 0.02, 8),
    Case("checker_2d_forced", 2, 4, 0.5, 0.02, 8),
    Case("series_1d", 1, 8, 0.5, 0.04, 8),
    Case("ramp_2d_small_s", 2, 4, 0.2, 0.01, 8),
    Case("single_cell", 1, 1, 0.5, 0.12, 12),
)


@lru_cache(maxsize=None)
def corpus_run(name: str, m: int | None = None):
    case = next(c for c in CORPUS if c.name == name)
    spacing = 1.0 if case.cells == 1 else None
    grid, K = kernel(case.dim, case.cells, case.s, spacing)
    u0, src = _case_data(name, grid)
    traj = run_rothe(u0, src, TimeGrid(case.T, m or case.m), K)
    return traj, K
