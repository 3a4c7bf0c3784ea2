"""Direct solvers for the stationary equation -lap v + Q = rho e^v / int(e^v).

newton_solve is the oracle against which flow limits are cross-checked:
damped Newton with a matrix-free symmetric linearization, solved by
preconditioned MINRES in the zero-mean gauge (constants are the exact null
direction of the problem). minimize_direct is a plain H1 gradient descent
on J_rho for the coercive regime rho < 8*pi.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .errors import DegenerateLinearization, NewtonFailure, StepSizeError
from .functionals import ProblemData, energy_J, volume
from .grid import Field, l2_norm

ZERO_MEAN = "zero_mean"
FIXED_VOLUME = "fixed_volume"

_MIN_DAMPING = 2.0 ** -20
_INNER_RTOL = 1e-10
_INNER_MAXITER = 2000

_MINRES_TOL_KW = "rtol" if "rtol" in inspect.signature(minres).parameters else "tol"


@dataclass
class NewtonConfig:
    max_iters: int = 100
    tol: float = 1e-11
    damping: float = 1.0
    gauge: str = ZERO_MEAN
    volume_target: float | None = None   # used by the fixed_volume gauge

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.gauge not in (ZERO_MEAN, FIXED_VOLUME):
            raise ValueError(f"unknown gauge {self.gauge!r}")


def residual(p: ProblemData, v: Field) -> Field:
    """-lap v + Q - rho e^v / int(e^v). Integrates to zero (both sides carry rho)."""
    from .flow import stationarity_residual_field

    return stationarity_residual_field(p, v)


def _linearization_solve(p: ProblemData, v: Field, rhs_vals: np.ndarray) -> np.ndarray:
    """Solve DG(v) delta = rhs on the zero-mean subspace, matrix-free.

    DG phi = -lap phi - rho (w phi / W - w int(w phi) / W^2), w = e^v. The
    operator is symmetric and annihilates constants; MINRES with the
    spectral (-lap + 1)^(-1) preconditioner handles possible indefiniteness
    away from the coercive regime.
    """
    g = v.grid
    n = g.n
    w = np.exp(v.values)
    W = g.cell_area * w.sum()
    ca = g.cell_area

    def matvec(x):
        phi = x.reshape(n, n)
        phi = phi - phi.mean()
        lap = np.fft.irfft2(-g.k2 * np.fft.rfft2(phi), s=(n, n))
        wphi = w * phi
        kterm = p.rho * (wphi / W - w * (ca * wphi.sum()) / W**2)
        out = -lap - kterm
        return (out - out.mean()).ravel()

    def precond(x):
        phi = x.reshape(n, n)
        out = np.fft.irfft2(np.fft.rfft2(phi) / (g.k2 + 1.0), s=(n, n))
        return out.ravel()

    A = LinearOperator((n * n, n * n), matvec=matvec, dtype=float)
    M = LinearOperator((n * n, n * n), matvec=precond, dtype=float)
    b = (rhs_vals - rhs_vals.mean()).ravel()
    sol, info = minres(A, b, M=M, maxiter=_INNER_MAXITER,
                       **{_MINRES_TOL_KW: _INNER_RTOL})
    if info != 0:
        raise DegenerateLinearization(
            f"Krylov stagnation (info={info}); possible near-8k*pi degeneracy")
    delta = sol.reshape(n, n)
    return delta - delta.mean()


def _apply_gauge(v: Field, cfg: NewtonConfig) -> Field:
    if cfg.gauge == ZERO_MEAN:
        return Field(v.grid, v.values - v.values.mean())
    target = cfg.volume_target if cfg.volume_target is not None else v.grid.area
    shift = np.log(target / volume(v))
    return Field(v.grid, v.values + shift)


def newton_solve(
    p: ProblemData,
    v_init: Field,
    cfg: NewtonConfig | None = None,
    callback: Callable[[float], None] | None = None,
) -> Field:
    """Damped Newton iteration; returns the gauge-fixed solution.

    `callback`, when given, receives the L2 residual norm of every iterate
    (useful for convergence-order audits). Non-convergence raises
    NewtonFailure carrying the best iterate and the residual history.
    """
    cfg = cfg or NewtonConfig()
    g = v_init.grid
    v = Field(g, v_init.values - v_init.values.mean())
    history: list[float] = []
    best_v, best_rn = v, np.inf

    for _ in range(cfg.max_iters):
        G = residual(p, v)
        rn = l2_norm(G)
        history.append(rn)
        if callback is not None:
            callback(rn)
        if rn < best_rn:
            best_v, best_rn = v, rn
        if rn <= cfg.tol:
            return _apply_gauge(v, cfg)

        delta = _linearization_solve(p, v, -G.values)
        s = cfg.damping
        accepted = None
        while s >= _MIN_DAMPING:
            trial = Field(g, v.values + s * delta)
            trial = Field(g, trial.values - trial.values.mean())
            if l2_norm(residual(p, trial)) < rn:
                accepted = trial
                break
            s *= 0.5
        if accepted is None:
            raise NewtonFailure("backtracking stalled (damping underflow)",
                                best=best_v, residual_history=history)
        v = accepted

    G = residual(p, v)
    rn = l2_norm(G)
    history.append(rn)
    if callback is not None:
        callback(rn)
    if rn <= cfg.tol:
        return _apply_gauge(v, cfg)
    raise NewtonFailure(f"no convergence in {cfg.max_iters} iterations "
                        f"(residual {rn:.3e})", best=best_v, residual_history=history)


def minimize_direct(p: ProblemData, v_init: Field, step: float, iters: int) -> Field:
    """H1 gradient descent on J_rho with fixed step, zero-mean gauge.

    Intended for the coercive regime rho < 8*pi. The update direction is
    (-lap + 1)^(-1) applied to the L2 gradient; any energy increase raises
    StepSizeError immediately.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    g = v_init.grid
    v = Field(g, v_init.values - v_init.values.mean())
    J_prev = energy_J(p, v)
    for _ in range(iters):
        grad = residual(p, v)
        direction = np.fft.irfft2(np.fft.rfft2(grad.values) / (g.k2 + 1.0),
                                  s=(g.n, g.n))
        vals = v.values - step * direction
        v = Field(g, vals - vals.mean())
        J_new = energy_J(p, v)
        if J_new > J_prev + 1e-13 * (1.0 + abs(J_prev)):
            raise StepSizeError(
                f"J increased by {J_new - J_prev:.3e}; reduce the step size")
        J_prev = J_new
    return v
