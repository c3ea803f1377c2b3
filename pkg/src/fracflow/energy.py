"""Discrete fractional energies.

All sums run over *ordered* interior pairs ``i != j`` plus the exterior, which
contributes each cell twice (the pairs ``(x_i, y)`` and ``(y, x_i)``):

    seminorm(u) = sum_{i != j} w_ij |u_i - u_j| + 2 sum_i b_i |u_i|
    phi_p(u)    = (1 / 2p) [ sum_{i != j} a_ij(p) |u_i - u_j|^p + 2 sum_i t_i(p) |u_i|^p ]
    j_p(u)      = (4 / h) phi_p(u) + v sum_i ((u_i - u_prev_i) / h - f_i)^2

with ``a_ij(p) = v^2 |x_i - x_j|^-(p(N+s))`` and ``t_i(p)`` the exterior weight
for the same exponent.  The exponent ``p(N+s)`` equals ``N + s_p p`` for
``s_p = N + s - N/p``, so ``phi_p`` is the energy of the order-``s_p``
seminorm and ``phi_1 = seminorm / 2``.

Because of the ordered-pair convention the first variation of ``j_1`` is
``(2/h) r`` with the cell residual

    r_i = v (u_i - u_prev_i) / h + 2 sum_j w_ij Z_ij + 2 b_i zeta_i - v f_i .
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import KernelWeights


@dataclass(frozen=True)
class StepData:
    """One implicit step: previous state, averaged source, time step."""

    u_prev: np.ndarray
    f_step: np.ndarray
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"time step must be positive, got {self.h}")
        u = np.asarray(self.u_prev, dtype=float)
        f = np.asarray(self.f_step, dtype=float)
        if u.shape != f.shape or u.ndim != 1:
            raise ValueError(f"u_prev {u.shape} and f_step {f.shape} must be matching 1-d fields")
        object.__setattr__(self, "u_prev", u)
        object.__setattr__(self, "f_step", f)

    @property
    def target(self) -> np.ndarray:
        """``u_prev + h f``: the minimizer without the nonlocal term."""
        return self.u_prev + self.h * self.f_step

    @property
    def data_scale(self) -> float:
        return max(1.0, float(np.abs(self.u_prev).max(initial=0.0)) / self.h
                   + float(np.abs(self.f_step).max(initial=0.0)))


def as_field(u, K: KernelWeights) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (K.size,):
        raise ValueError(f"field has shape {u.shape}, grid has {K.size} cells")
    if not np.all(np.isfinite(u)):
        raise ValueError("field contains non-finite values")
    return u


def _check(step: StepData, K: KernelWeights) -> None:
    if step.u_prev.shape != (K.size,):
        raise ValueError(f"step data has {step.u_prev.shape[0]} cells, grid has {K.size}")


def differences(u: np.ndarray) -> np.ndarray:
    return u[:, None] - u[None, :]


def seminorm_s1(u, K: KernelWeights) -> float:
    u = as_field(u, K)
    return float((K.pair_weights * np.abs(differences(u))).sum()
                 + 2.0 * (K.exterior_weights * np.abs(u)).sum())


def phi_sp(u, K: KernelWeights, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    u = as_field(u, K)
    if p == 1:
        return 0.5 * seminorm_s1(u, K)
    a = K.pair_weights_p(p)
    t = K.tailweight(p)
    pairs = (a * np.abs(differences(u)) ** p).sum()
    ext = 2.0 * (t * np.abs(u) ** p).sum()
    return float((pairs + ext) / (2.0 * p))


def fidelity(u: np.ndarray, step: StepData, volume: float) -> float:
    r = (u - step.u_prev) / step.h - step.f_step
    return float(volume * (r @ r))


def j_sp(u, step: StepData, K: KernelWeights, p: float) -> float:
    u = as_field(u, K)
    _check(step, K)
    return 4.0 / step.h * phi_sp(u, K, p) + fidelity(u, step, K.volume)


def grad_j_sp(u, step: StepData, K: KernelWeights, p: float) -> np.ndarray:
    """Gradient of ``j_p`` for ``p > 1``.

    Each unordered pair enters ``phi_p`` twice, so ``d phi_p / d u_i`` is
    ``sum_j a_ij |u_i - u_j|^(p-1) sgn(u_i - u_j) + t_i |u_i|^(p-1) sgn(u_i)``;
    the fidelity term adds ``(2v/h) ((u_i - u_prev_i)/h - f_i)``.
    """
    if p <= 1:
        raise ValueError(f"gradient needs p > 1, got {p}")
    u = as_field(u, K)
    _check(step, K)
    d = differences(u)
    a = K.pair_weights_p(p)
    t = K.tailweight(p)
    dphi = (a * np.abs(d) ** (p - 1) * np.sign(d)).sum(1) + t * np.abs(u) ** (p - 1) * np.sign(u)
    h = step.h
    return 4.0 / h * dphi + 2.0 * K.volume / h * ((u - step.u_prev) / h - step.f_step)
