"""Exception types shared across the package."""

from __future__ import annotations


class MeanFlowError(Exception):
    """Base class for all package errors."""


class DataValidityError(MeanFlowError):
    """A field contains NaN or Inf samples."""


class BlowUpOverflow(MeanFlowError):
    """exp(v) would overflow f64 (v_max above the 700 safety threshold).

    Raised instead of letting Inf propagate silently, so runs in the
    blow-up regime can terminate gracefully.
    """

    def __init__(self, v_max: float):
        super().__init__(f"e^v overflow: v_max = {v_max:.3g} exceeds 700")
        self.v_max = float(v_max)


class StiffnessFailure(MeanFlowError):
    """Adaptive dt fell below dt_min; reported as likely blow-up."""

    def __init__(self, t: float, dt: float, cause: str = "energy-control"):
        super().__init__(f"dt underflow at t = {t:.6g} (dt = {dt:.3g}, cause: {cause})")
        self.t = float(t)
        self.dt = float(dt)
        self.cause = cause


class SolverFailure(MeanFlowError):
    """An inner linear solve did not converge within its iteration budget."""


class DegenerateLinearization(MeanFlowError):
    """Krylov stagnation on the Newton linearization (near-8kpi degeneracy)."""


class NewtonFailure(MeanFlowError):
    """Newton iteration failed; carries the best iterate and residual history."""

    def __init__(self, message: str, best, residual_history):
        super().__init__(message)
        self.best = best
        self.residual_history = list(residual_history)


class StepSizeError(MeanFlowError):
    """Direct minimization observed an energy increase (step too large)."""


class NotConcentratedError(MeanFlowError):
    """No radius achieves the requested core mass fraction (mass too spread)."""


class UnreachableTargetError(MeanFlowError):
    """Energy calibration could not reach the target; carries the (lambda, J) trace."""

    def __init__(self, target: float, trace):
        best = min((j for _, j in trace), default=float("nan"))
        super().__init__(f"target J <= {target:.6g} unreachable (best J = {best:.6g})")
        self.target = float(target)
        self.trace = list(trace)


class VolumeDriftError(MeanFlowError):
    """Relative volume drift exceeded the configured bound (integrator accuracy)."""


class FitFailure(MeanFlowError):
    """Gauss-Newton profile fit diverged; carries the moment-based initialization."""

    def __init__(self, message: str, initial_fit):
        super().__init__(message)
        self.initial_fit = initial_fit
