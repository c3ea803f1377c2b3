"""Uniform cell grids on a box and the discrete Gagliardo kernel.

Interior cells tile ``(0, L)^N`` with ``L = cells * dx``.  The exterior
``R^N \\ (0, L)^N`` is where the field is pinned to zero; it couples to each
interior cell through a single weight ``b_i``:

    b_i = v * ( sum over exterior lattice cells y_c in the square
                |y_c - x_i|_inf <= K dx  of  v |x_i - y_c|^-(N+s)
                + integral of |y|^-(N+s) outside the square of half width
                  R = (K + 1/2) dx )

The square is exactly tiled by lattice cells, so the far-field integral is
taken over the complement of a square, which has a closed form in both 1D and
2D (see :func:`far_field_integral`).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import quad

TAIL_MODES = ("none", "analytic")


@dataclass(frozen=True)
class GridSpec:
    dimension: int
    cells_per_axis: int | tuple[int, ...]
    spacing: float
    exterior_radius: float | None = None
    tail_mode: str = "analytic"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        cells = self.cells
        if any(c < 1 for c in cells):
            raise ValueError(f"cells_per_axis must be >= 1, got {self.cells_per_axis}")
        if self.exterior_radius is not None and self.exterior_radius < self.spacing:
            raise ValueError("exterior_radius must be >= spacing")
        if self.tail_mode not in TAIL_MODES:
            raise ValueError(f"tail_mode must be one of {TAIL_MODES}")

    @property
    def cells(self) -> tuple[int, ...]:
        c = self.cells_per_axis
        if isinstance(c, (int, np.integer)):
            return (int(c),) * self.dimension
        c = tuple(int(k) for k in c)
        if len(c) != self.dimension:
            raise ValueError(f"cells_per_axis {c} does not match dimension {self.dimension}")
        return c

    @property
    def side_lengths(self) -> tuple[float, ...]:
        return tuple(n * self.spacing for n in self.cells)


@dataclass(frozen=True)
class Grid:
    """Interior cell centers, flattened in C (row-major) order."""

    dimension: int
    shape: tuple[int, ...]
    spacing: float
    centers: np.ndarray = field(repr=False)
    volume: float

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def flat_index(self, multi_index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.shape))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.unravel_index(flat, self.shape))


def build_grid(spec: GridSpec) -> Grid:
    shape = spec.cells
    idx = np.indices(shape).reshape(spec.dimension, -1).T
    centers = (idx + 0.5) * spec.spacing
    centers.setflags(write=False)
    return Grid(spec.dimension, shape, float(spec.spacing), centers, spec.spacing**spec.dimension)


@lru_cache(maxsize=None)
def _square_angular_factor(alpha: float) -> float:
    # 2 * int_0^1 (1 + t^2)^(-alpha/2) dt
    val, _ = quad(lambda t: (1.0 + t * t) ** (-alpha / 2.0), 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * val


def far_field_integral(dimension: int, alpha: float, half_width: float) -> float:
    """Integral of ``|y|^-alpha`` over the complement of the square ``|y|_inf <= R``.

    1D: ``2 R^(1-alpha) / (alpha-1)``.  2D: splitting the complement into the
    four wedges ``|y_1| >= |y_2|`` etc. and substituting ``y_2 = t y_1`` gives
    ``4 A(alpha) R^(2-alpha) / (alpha-2)`` with
    ``A = 2 int_0^1 (1+t^2)^(-alpha/2) dt``.
    """
    R = half_width
    if dimension == 1:
        if alpha <= 1:
            raise ValueError("far field diverges for alpha <= 1 in 1D")
        return 2.0 * R ** (1.0 - alpha) / (alpha - 1.0)
    if alpha <= 2:
        raise ValueError("far field diverges for alpha <= 2 in 2D")
    return 4.0 * _square_angular_factor(alpha) * R ** (2.0 - alpha) / (alpha - 2.0)


class KernelWeights:
    """Pair weights ``w_ij = v^2 |x_i - x_j|^-(N+s)`` and exterior weights ``b_i``.

    Instances are treated as immutable after construction; arrays are marked
    read-only.  ``op_norm_estimate`` bounds the operator norm of the weighted
    difference map ``u -> (2 w_ij (u_i - u_j), 2 b_i u_i)`` whose l1 norm is
    the discrete seminorm counted over unordered pairs.
    """

    def __init__(self, grid: Grid, s: float, spec: GridSpec):
        if not 0.0 < s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {s}")
        if spec.exterior_radius is not None and spec.exterior_radius < spec.spacing:
            raise ValueError("exterior_radius must be >= spacing")
        self.grid = grid
        self.s = float(s)
        self.tail_mode = spec.tail_mode
        self.volume = grid.volume
        self.dimension = grid.dimension
        n_max = max(grid.shape)
        dx = grid.spacing
        R_ext = spec.exterior_radius if spec.exterior_radius is not None else n_max * dx
        # the square must contain every interior cell seen from every interior cell
        self.half_cells = max(math.ceil(R_ext / dx - 0.5 - 1e-12), n_max - 1, 1)
        self.truncation_radius = (self.half_cells + 0.5) * dx

        diff = grid.centers[:, None, :] - grid.centers[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        self.distances = dist
        self._offpair = ~np.eye(grid.size, dtype=bool)
        self._tail_cache: dict[float, np.ndarray] = {}
        self._pair_cache: dict[float, np.ndarray] = {}
        self.pair_weights = self.pair_weights_p(1.0)
        self.exterior_weights = self.tailweight(1.0)
        self.op_norm_estimate = self._op_norm_bound()
        self.distances.setflags(write=False)

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def exponent(self) -> float:
        return self.dimension + self.s

    def pair_weights_p(self, p: float) -> np.ndarray:
        """``v^2 |x_i - x_j|^-(p(N+s))``, i.e. ``(w_ij / v^2)^p v^2``."""
        p = float(p)
        out = self._pair_cache.get(p)
        if out is None:
            v = self.volume
            out = np.zeros_like(self.distances)
            m = self._offpair
            out[m] = v * v * self.distances[m] ** (-p * self.exponent)
            out.setflags(write=False)
            self._pair_cache[p] = out
        return out

    def tailweight(self, p: float) -> np.ndarray:
        """Exterior weight for the energy with kernel exponent ``p(N+s)``; ``p = 1`` gives ``b``."""
        p = float(p)
        hit = self._tail_cache.get(p)
        if hit is None:
            v = self.volume
            alpha = p * self.exponent
            # lattice square around x_i minus the interior cells it contains
            square = v * float(np.sum(self._lattice_offsets() ** (-alpha)))
            powd = np.zeros_like(self.distances)
            powd[self._offpair] = self.distances[self._offpair] ** (-alpha)
            q = square - v * powd.sum(1)
            if self.tail_mode == "analytic":
                q = q + far_field_integral(self.dimension, alpha, self.truncation_radius)
            hit = v * q
            hit.setflags(write=False)
            self._tail_cache[p] = hit
        return hit

    def _lattice_offsets(self) -> np.ndarray:
        K = self.half_cells
        r = np.arange(-K, K + 1)
        grids = np.meshgrid(*([r] * self.dimension), indexing="ij")
        off = np.stack([g.ravel() for g in grids], -1) * self.grid.spacing
        d = np.sqrt((off**2).sum(-1))
        return d[d > 0]

    def _op_norm_bound(self) -> float:
        # Gershgorin on K^T K for K with rows 2w(e_i - e_j) and 2b e_i
        w, b = self.pair_weights, self.exterior_weights
        rows = 8.0 * (w**2).sum(1) + 4.0 * b**2
        return float(math.sqrt(rows.max()))

    def dump_csv(self, directory: str | Path) -> None:
        """Write ``pair_weights.csv`` (i, j, w_ij) and ``exterior_weights.csv`` (i, b_i)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "pair_weights.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i", "j", "w_ij"])
            ii, jj = np.nonzero(self.pair_weights)
            for i, j in zip(ii, jj):
                wr.writerow([int(i), int(j), f"{self.pair_weights[i, j]:.17g}"])
        with open(directory / "exterior_weights.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i", "b_i"])
            for i, b in enumerate(self.exterior_weights):
                wr.writerow([i, f"{b:.17g}"])


def assemble_kernel(grid: Grid, s: float, spec: GridSpec) -> KernelWeights:
    return KernelWeights(grid, s, spec)
