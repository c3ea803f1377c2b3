"""JSON run configuration."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .grid import Grid, GridSpec, assemble_kernel, build_grid
from .rothe import PROFILES, SourceSpec, spatial_profile
from .step import DEFAULT_P_SCHEDULE, SolverOptions

U0_PRESETS = ("zero", "bump", "wave", "ramp", "checker", "random", "file")


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Model):
    dimension: Literal[1, 2]
    cells_per_axis: Union[int, list[int]]
    spacing: float = Field(gt=0)
    exterior_radius: Optional[float] = None
    tail_mode: Literal["none", "analytic"] = "analytic"

    def to_spec(self) -> GridSpec:
        c = self.cells_per_axis
        return GridSpec(self.dimension, c if isinstance(c, int) else tuple(c), self.spacing,
                        self.exterior_radius, self.tail_mode)


class ProfileTerm(_Model):
    profile: Literal[PROFILES]
    amplitude: float = 1.0


class U0Config(_Model):
    """``preset`` scaled by ``amplitude``, plus any extra profile terms.

    ``random`` draws uniform values in ``[-amplitude, amplitude]`` from the run
    seed; ``file`` reads a snapshot CSV (flat index, coordinates, value).
    """

    preset: Literal[U0_PRESETS] = "zero"
    amplitude: float = 1.0
    extra: list[ProfileTerm] = []
    path: Optional[str] = None

    @model_validator(mode="after")
    def _need_path(self):
        if self.preset == "file" and not self.path:
            raise ValueError("u0 preset 'file' needs 'path'")
        return self

    def build(self, grid: Grid, seed: int, base: Path | None = None) -> np.ndarray:
        if self.preset == "zero":
            u = np.zeros(grid.size)
        elif self.preset == "random":
            u = np.random.default_rng(seed).uniform(-self.amplitude, self.amplitude, grid.size)
        elif self.preset == "file":
            p = Path(self.path)
            if base is not None and not p.is_absolute():
                p = base / p
            u = read_field_csv(p, grid.size)
        else:
            u = self.amplitude * spatial_profile(self.preset, grid)
        for term in self.extra:
            u = u + term.amplitude * spatial_profile(term.profile, grid)
        return u


class SourceConfig(_Model):
    kind: Literal["zero", "constant", "separable_analytic", "gridded_series"] = "zero"
    amplitude: float = 1.0
    profile: Literal[PROFILES] = "one"
    time_profile: Literal["constant", "linear", "sin", "cos"] = "constant"
    frequency: float = 1.0
    phase: float = 0.0
    times: Optional[list[float]] = None
    values: Optional[list[list[float]]] = None

    def to_spec(self) -> SourceSpec:
        return SourceSpec(self.kind, self.amplitude, self.profile, self.time_profile, self.frequency,
                          self.phase, None if self.times is None else tuple(self.times),
                          None if self.values is None else np.array(self.values, dtype=float))


class SolverConfig(_Model):
    method: Literal["primal_dual", "continuation"] = "primal_dual"
    p_schedule: list[float] = list(DEFAULT_P_SCHEDULE)
    inner_tol: float = 1e-12
    max_inner_iters: int = 20000
    extrapolate: bool = True
    pd_tol: float = 1e-12
    residual_tol: float = 1e-9
    max_pd_iters: int = 400000
    pd_check_every: int = 25
    preconditioned: bool = True
    delta_sign: float = 1e-9

    def to_options(self) -> SolverOptions:
        d = self.model_dump(exclude={"method"})
        d["p_schedule"] = tuple(d["p_schedule"])
        return SolverOptions(**d)


class RunConfig(_Model):
    grid: GridConfig
    s: float
    T: float = Field(gt=0)
    m: Optional[int] = Field(default=None, ge=1)
    m_list: Optional[list[int]] = None
    u0: U0Config = U0Config()
    u0_alt: Optional[U0Config] = None
    source: SourceConfig = SourceConfig()
    solver: SolverConfig = SolverConfig()
    output_dir: str = "run"
    seed: int = 0
    z_steps: list[int] = []
    tolerance: float = 1e-6

    @field_validator("s")
    @classmethod
    def _s_range(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("s must lie in (0, 1)")
        return v

    @model_validator(mode="after")
    def _steps(self):
        if self.m is None and self.m_list is None:
            raise ValueError("one of 'm' or 'm_list' is required")
        return self

    def build(self, base: Path | None = None):
        """``(grid, kernel, u0, source, options)``; raises ValueError on inconsistent input."""
        spec = self.grid.to_spec()
        grid = build_grid(spec)
        K = assemble_kernel(grid, self.s, spec)
        u0 = self.u0.build(grid, self.seed, base)
        src = self.source.to_spec()
        if src.kind == "gridded_series" and src.values.shape[1] != grid.size:
            raise ValueError(f"source values have {src.values.shape[1]} cells, grid has {grid.size}")
        return grid, K, u0, src, self.solver.to_options()


def read_field_csv(path: Path, size: int) -> np.ndarray:
    """Read a snapshot CSV: header, then ``index, coordinates..., value`` rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "index":
        raise ValueError(f"{path}: not a snapshot CSV")
    body = rows[1:]
    if len(body) != size:
        raise ValueError(f"{path}: {len(body)} rows, expected {size}")
    u = np.empty(size)
    seen = set()
    for r in body:
        i = int(r[0])
        if not 0 <= i < size or i in seen:
            raise ValueError(f"{path}: bad index {i}")
        seen.add(i)
        u[i] = float(r[-1])
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{path}: non-finite values")
    return u


def load_config(path: str | Path) -> RunConfig:
    return RunConfig.model_validate_json(Path(path).read_text())

