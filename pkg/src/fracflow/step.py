"""One implicit step: minimize ``j_1`` and certify the minimizer with a sign field.

Two independent routes to the same minimizer:

* :func:`solve_step_primal_dual` solves the saddle-point form
  ``min_u max_{|Z|<=1} <Z, Du> + fidelity`` with a diagonally preconditioned
  primal-dual hybrid gradient method.  The dual variable is the sign field.
* :func:`solve_step_continuation` minimizes the smooth energies ``j_p`` along
  a decreasing ``p`` schedule and extrapolates the path to ``p = 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear

from .energy import StepData, as_field, differences, grad_j_sp, j_sp, seminorm_s1
from .grid import KernelWeights

log = logging.getLogger(__name__)

DEFAULT_P_SCHEDULE = (1.5, 1.25, 1.1, 1.05, 1.01, 1.005, 1.001,
                      1.0005, 1.0001, 1.00005, 1.00001, 1.000001)


class StepFailure(RuntimeError):
    """A step solver stopped without meeting its tolerance."""

    def __init__(self, message: str, *, residual: float = math.nan, p: float | None = None,
                 solver: str = ""):
        super().__init__(message)
        self.residual = residual
        self.p = p
        self.solver = solver


@dataclass(frozen=True)
class SolverOptions:
    p_schedule: tuple[float, ...] = DEFAULT_P_SCHEDULE
    inner_tol: float = 1e-12
    max_inner_iters: int = 20000
    extrapolate: bool = True
    pd_tol: float = 1e-12
    residual_tol: float = 1e-9
    max_pd_iters: int = 400000
    pd_check_every: int = 25
    preconditioned: bool = True
    delta_sign: float = 1e-9
    eps_sign: float = 1e-10
    weight_floor: float = 1e-12
    continuation_residual_tol: float = 1e-5
    tie_tol: float = 1e-6

    def __post_init__(self):
        ps = tuple(float(p) for p in self.p_schedule)
        object.__setattr__(self, "p_schedule", ps)
        if not ps:
            raise ValueError("p_schedule must not be empty")
        if any(p <= 1 for p in ps):
            raise ValueError("every entry of p_schedule must exceed 1")
        if any(b >= a for a, b in zip(ps, ps[1:])):
            raise ValueError("p_schedule must be strictly decreasing")
        for name in ("inner_tol", "pd_tol", "residual_tol", "delta_sign", "eps_sign",
                     "weight_floor", "continuation_residual_tol", "tie_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_inner_iters < 1 or self.max_pd_iters < 1 or self.pd_check_every < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass
class SignField:
    """Antisymmetric pair values ``Z_ij`` and exterior values ``zeta_i``."""

    pairs: np.ndarray
    exterior: np.ndarray

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=float)
        self.exterior = np.asarray(self.exterior, dtype=float)
        n = self.exterior.shape[0]
        if self.pairs.shape != (n, n):
            raise ValueError(f"pair values {self.pairs.shape} do not match {n} cells")

    @classmethod
    def zeros(cls, n: int) -> "SignField":
        return cls(np.zeros((n, n)), np.zeros(n))

    @classmethod
    def from_signs(cls, u: np.ndarray) -> "SignField":
        """``sgn(u_i - u_j)`` and ``sgn(u_i)``, taking 0 on ties."""
        u = np.asarray(u, dtype=float)
        return cls(np.sign(differences(u)), np.sign(u))

    @property
    def size(self) -> int:
        return self.exterior.shape[0]

    def max_abs(self) -> float:
        return float(max(np.abs(self.pairs).max(initial=0.0), np.abs(self.exterior).max(initial=0.0)))

    def is_antisymmetric(self) -> bool:
        return bool(np.array_equal(self.pairs, -self.pairs.T))

    def combine(self, other: "SignField", a: float, b: float) -> "SignField":
        return SignField(a * self.pairs + b * other.pairs, a * self.exterior + b * other.exterior)


@dataclass
class StepSolution:
    u: np.ndarray
    z: SignField
    objective: float
    weak_residual: float
    iterations: int
    solver_tag: str
    slackness: float = 0.0
    duality_gap: float = math.nan
    path: list[tuple[float, np.ndarray]] = field(default_factory=list, repr=False)


def soft_threshold_oracle(c: float, b: float, h: float, v: float) -> float:
    """Exact minimizer of ``(4b/h)|u| + (v/h^2)(u - c)^2``.

    Setting ``0 in (4b/h) sgn(u) + (2v/h^2)(u - c)`` gives ``u = c - (2bh/v) sgn(u)``
    when ``|c| > 2bh/v`` and ``u = 0`` otherwise.
    """
    if not (b > 0 and h > 0 and v > 0):
        raise ValueError("b, h and v must be positive")
    thr = 2.0 * b * h / v
    return math.copysign(max(abs(c) - thr, 0.0), c) if c != 0 else 0.0


def extract_sign_field(u, z_raw: SignField, opts: SolverOptions = SolverOptions()) -> SignField:
    """Project a raw dual onto the feasible set and pin it to ``sgn`` off the ties."""
    u = np.asarray(u, dtype=float)
    pairs = np.clip(0.5 * (z_raw.pairs - z_raw.pairs.T), -1.0, 1.0)
    ext = np.clip(z_raw.exterior, -1.0, 1.0)
    delta = opts.delta_sign * max(1.0, float(np.abs(u).max(initial=0.0)))
    d = differences(u)
    pairs = np.where(np.abs(d) > delta, np.sign(d), pairs)
    ext = np.where(np.abs(u) > delta, np.sign(u), ext)
    return SignField(pairs, ext)


def snap_zeros(u: np.ndarray, rel_tol: float) -> np.ndarray:
    """Set values within ``rel_tol * max(1, |u|_inf)`` of zero to exactly zero."""
    tol = rel_tol * max(1.0, float(np.abs(u).max(initial=0.0)))
    return np.where(np.abs(u) <= tol, 0.0, u)


def cell_residual(u, z: SignField, step: StepData, K: KernelWeights) -> np.ndarray:
    u = as_field(u, K)
    v = K.volume
    return (v * (u - step.u_prev) / step.h
            + 2.0 * (K.pair_weights * z.pairs).sum(1)
            + 2.0 * K.exterior_weights * z.exterior
            - v * step.f_step)


def weak_residual(u, z: SignField, step: StepData, K: KernelWeights) -> float:
    """Largest residual of the weak form tested against each cell indicator.

    Reported per unit volume and relative to ``max(1, |u_prev|/h + |f|)``.
    """
    r = cell_residual(u, z, step, K)
    return float(np.abs(r).max(initial=0.0) / (K.volume * step.data_scale))


def complementary_slackness(u, z: SignField, K: KernelWeights) -> float:
    """``sum w (|du| - Z du) + 2 sum b (|u| - zeta u)``; termwise >= 0 for feasible ``Z``."""
    u = np.asarray(u, dtype=float)
    d = differences(u)
    return float((K.pair_weights * (np.abs(d) - z.pairs * d)).sum()
                 + 2.0 * (K.exterior_weights * (np.abs(u) - z.exterior * u)).sum())


# ---------------------------------------------------------------------------
# p > 1 subproblems


def _weighted_laplacian(u, step, K, p, floor):
    # Hessian of the quadratic majorizer |t|^p <= (p/2)|t0|^(p-2) t^2 + const at u
    n = K.size
    d = differences(u)
    om = np.maximum(np.abs(d), floor) ** (p - 2.0)
    E = (4.0 / step.h) * K.pair_weights_p(p) * om
    ext = (4.0 / step.h) * K.tailweight(p) * np.maximum(np.abs(u), floor) ** (p - 2.0)
    H = -E
    H[np.diag_indices(n)] = E.sum(1) - np.diag(E) + ext + 2.0 * K.volume / step.h**2
    return H


def solve_step_p(p: float, step: StepData, K: KernelWeights, warm_start=None,
                 opts: SolverOptions = SolverOptions()) -> tuple[np.ndarray, int]:
    """Minimize ``j_p`` for ``p > 1``.

    Gradient descent with Armijo backtracking, with the gradient preconditioned
    by the lagged-diffusivity matrix (Kacanov).  At unit step this is a
    majorize-minimize step, so the energy decreases monotonically.  For ``p``
    near 1 the gradient of ``j_p`` jumps across tied pairs by up to twice the
    pair weight, so convergence is measured on the step length, not on the
    gradient.  Returns ``(u, iterations)``.
    """
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    u = step.u_prev.copy() if warm_start is None else as_field(warm_start, K).copy()
    scale = max(1.0, float(np.abs(step.target).max(initial=0.0)))
    floor = opts.weight_floor * scale
    f = j_sp(u, step, K, p)
    for it in range(1, opts.max_inner_iters + 1):
        g = grad_j_sp(u, step, K, p)
        direction = np.linalg.solve(_weighted_laplacian(u, step, K, p, floor), g)
        slope = float(g @ direction)
        t = 1.0
        while True:
            trial = u - t * direction
            ft = j_sp(trial, step, K, p)
            if ft <= f - 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        moved = float(np.abs(trial - u).max())
        u, f = trial, ft
        if moved <= opts.inner_tol * scale:
            return u, it
    g = grad_j_sp(u, step, K, p)
    raise StepFailure(f"p={p}: no convergence in {opts.max_inner_iters} iterations",
                      residual=float(np.abs(g).max()), p=p, solver="continuation")


def fit_sign_field(u, step: StepData, K: KernelWeights, tie_tol: float) -> SignField:
    """Feasible sign field that best balances the weak form for a given ``u``.

    Off the ties (``|du| > tie_tol * max(1, |u|)``) the values are fixed to the
    signs.  On tied pairs and zero cells they are the bounded least-squares
    solution of ``cell_residual = 0``.
    """
    u = as_field(u, K)
    n = K.size
    tol = tie_tol * max(1.0, float(np.abs(u).max(initial=0.0)))
    d = differences(u)
    z = SignField(np.where(np.abs(d) > tol, np.sign(d), 0.0), np.where(np.abs(u) > tol, np.sign(u), 0.0))
    ii, jj = np.nonzero(np.triu((np.abs(d) <= tol) & (K.pair_weights > 0), 1))
    cells = np.nonzero(np.abs(u) <= tol)[0]
    m = ii.size + cells.size
    if m == 0:
        return z
    r0 = cell_residual(u, z, step, K) / K.volume
    A = np.zeros((n, m))
    cols = np.arange(ii.size)
    w = 2.0 * K.pair_weights[ii, jj] / K.volume
    A[ii, cols] = w
    A[jj, cols] = -w
    A[cells, ii.size + np.arange(cells.size)] = 2.0 * K.exterior_weights[cells] / K.volume
    x = lsq_linear(A, -r0, bounds=(-1.0, 1.0), method="bvls", tol=1e-14).x
    pairs = z.pairs.copy()
    pairs[ii, jj] = x[: ii.size]
    pairs[jj, ii] = -x[: ii.size]
    ext = z.exterior.copy()
    ext[cells] = x[ii.size:]
    return SignField(pairs, ext)


def solve_step_continuation(step: StepData, K: KernelWeights,
                            opts: SolverOptions = SolverOptions()) -> StepSolution:
    """Follow the minimizers of ``j_p`` as ``p`` decreases to 1.

    Each ``p`` is warm started from the previous minimizer.  With
    ``opts.extrapolate`` the last two iterates are extrapolated linearly in
    ``p - 1`` to ``p = 1``; the recorded path is unchanged.  The sign field
    comes from :func:`fit_sign_field`, since the ``p``-dual carries no
    information on tied pairs.
    """
    u = step.u_prev.copy()
    path: list[tuple[float, np.ndarray]] = []
    iters = 0
    for p in opts.p_schedule:
        try:
            u, k = solve_step_p(p, step, K, u, opts)
        except StepFailure as exc:
            raise StepFailure(f"continuation failed at p={p}: {exc}", residual=exc.residual,
                              p=p, solver="continuation") from exc
        iters += k
        path.append((p, u.copy()))
    if opts.extrapolate and len(path) >= 2:
        (p0, u0), (p1, u1) = path[-2], path[-1]
        u = u1 + (u1 - u0) * (p1 - 1.0) / (p0 - p1)
    u = snap_zeros(u, opts.tie_tol)
    z = fit_sign_field(u, step, K, opts.tie_tol)
    res = weak_residual(u, z, step, K)
    if res > opts.continuation_residual_tol:
        log.warning("continuation residual %.3e exceeds %.1e", res, opts.continuation_residual_tol)
    return StepSolution(u=u, z=z, objective=j_sp(u, step, K, 1.0), weak_residual=res,
                        iterations=iters, solver_tag="continuation",
                        slackness=complementary_slackness(u, z, K), path=path)


# ---------------------------------------------------------------------------
# primal-dual


def _primal_energy(u, step, K):
    # h/2 * j_1: seminorm + (v/2h)|u - target|^2
    r = u - step.target
    return seminorm_s1(u, K) + K.volume / (2.0 * step.h) * float(r @ r)


def _dual_energy(KtY, step, K):
    return float(step.target @ KtY) - step.h / (2.0 * K.volume) * float(KtY @ KtY)


def solve_step_primal_dual(step: StepData, K: KernelWeights,
                           opts: SolverOptions = SolverOptions(), warm_start=None) -> StepSolution:
    """Primal-dual hybrid gradient on ``min_u |Du|_1 + (v/2h)|u - (u_prev + h f)|^2``.

    ``D`` stacks the rows ``2 w_ij (e_i - e_j)`` (unordered pairs) and
    ``2 b_i e_i``, so ``|Du|_1`` is the seminorm and ``D^T Z`` is the nonlocal
    term of the cell residual.  Step sizes are the diagonal preconditioners
    ``sigma = 1/row sums`` and ``tau = 1/column sums`` (or the scalar choice
    ``sigma = tau = 1/|D|`` when ``opts.preconditioned`` is false).  The loop
    stops when the duality gap and the residual of the extracted sign field are
    both small.
    """
    _ = as_field(step.u_prev, K)
    n, v, h = K.size, K.volume, step.h
    W, b = K.pair_weights, K.exterior_weights
    c = step.target
    if opts.preconditioned:
        with np.errstate(divide="ignore"):
            sig_pairs = np.where(W > 0, 1.0 / (4.0 * np.where(W > 0, W, 1.0)), 0.0)
        sig_ext = 1.0 / (2.0 * b)
        tau = 1.0 / (2.0 * W.sum(1) + 2.0 * b)
    else:
        L = K.op_norm_estimate
        sig_pairs = np.full_like(W, 1.0 / L)
        sig_ext = np.full(n, 1.0 / L)
        tau = np.full(n, 1.0 / L)

    u = c.copy() if warm_start is None else as_field(warm_start, K).copy()
    ubar = u.copy()
    Y = np.zeros((n, n))
    zeta = np.zeros(n)
    q = v / h
    scale = max(1.0, _primal_energy(np.zeros(n), step, K))
    W2 = 2.0 * W
    b2 = 2.0 * b
    gap = math.inf
    for it in range(1, opts.max_pd_iters + 1):
        Y = np.clip(Y + sig_pairs * (W2 * (ubar[:, None] - ubar[None, :])), -1.0, 1.0)
        zeta = np.clip(zeta + sig_ext * (b2 * ubar), -1.0, 1.0)
        KtY = (W2 * Y).sum(1) + b2 * zeta
        u_new = (u - tau * KtY + tau * q * c) / (1.0 + tau * q)
        ubar = 2.0 * u_new - u
        u = u_new
        if it % opts.pd_check_every:
            continue
        gap = _primal_energy(u, step, K) - _dual_energy(KtY, step, K)
        if gap > opts.pd_tol * scale:
            continue
        us = snap_zeros(u, opts.delta_sign)
        z = extract_sign_field(us, SignField(Y, zeta), opts)
        res = weak_residual(us, z, step, K)
        if res <= opts.residual_tol:
            u = us
            return StepSolution(u=u, z=z, objective=j_sp(u, step, K, 1.0), weak_residual=res,
                                iterations=it, solver_tag="primal_dual",
                                slackness=complementary_slackness(u, z, K),
                                duality_gap=2.0 / h * gap)
    raise StepFailure(f"primal-dual: gap {gap:.3e} after {opts.max_pd_iters} iterations",
                      residual=2.0 / h * gap, solver="primal_dual")


def solve_step(step: StepData, K: KernelWeights, opts: SolverOptions = SolverOptions(),
               method: str = "primal_dual") -> StepSolution:
    if method == "primal_dual":
        return solve_step_primal_dual(step, K, opts)
    if method == "continuation":
        return solve_step_continuation(step, K, opts)
    raise ValueError(f"unknown step solver {method!r}")


def with_options(opts: SolverOptions, **changes) -> SolverOptions:
    return replace(opts, **changes)
