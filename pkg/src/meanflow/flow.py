"""Time integration of the volume-preserving gradient flow.

The evolution is d/dt e^v = lap(v) - Q + rho e^v / int(e^v), integrated
either by classical RK4 (with a diffusion stability cap) or by a
linearly-implicit scheme that freezes the diffusion coefficient e^(-v)
pointwise and solves the resulting Helmholtz-type system by preconditioned
conjugate gradients. Step size is controlled by the energy-monotonicity
identity: J must not increase beyond the discretization allowance, else
the step is halved and retried.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import BlowUpOverflow, SolverFailure, StiffnessFailure, VolumeDriftError
from .functionals import OVERFLOW_VMAX, ProblemData, energy_J, volume
from .grid import Field

EXPLICIT_RK4 = "explicit_rk4"
LINEARLY_IMPLICIT = "linearly_implicit"
_SCHEMES = (EXPLICIT_RK4, LINEARLY_IMPLICIT)

_GROW_FACTOR = 1.2
_GROW_AFTER = 20
_CG_MAXITER = 500


@dataclass
class FlowConfig:
    """Integrator knobs.

    dt adapts between dt_min and dt_max: halved whenever the energy check
    fails (or the inner solve does), grown by 1.2 after 20 clean steps.
    The run stops when the stationarity residual falls below stop_residual,
    when J falls below stop_energy, at t_end, or on a blow-up signal.
    """

    dt_init: float = 1e-3
    dt_min: float = 1e-9
    dt_max: float = 1e-2
    step_scheme: str = LINEARLY_IMPLICIT
    imex_tolerance: float = 1e-10
    t_end: float = 50.0
    stop_residual: float = 1e-8
    stop_energy: float = -1e9
    volume_drift_max: float = 1e-7
    record_interval: float = 0.1

    def __post_init__(self) -> None:
        if self.step_scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.step_scheme!r}; use one of {_SCHEMES}")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        for name in ("imex_tolerance", "t_end", "stop_residual", "volume_drift_max",
                     "record_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FlowState:
    """Value object passed between steps."""

    t: float
    v: Field
    a: float                 # conserved volume int e^(v0)
    steps_taken: int = 0
    last_dt: float = 0.0
    clean_steps: int = 0
    J_cache: float | None = None   # energy of v, reused by the controller

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("cached volume a must be positive")


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One time-series row of the run monitors."""

    t: float
    J: float
    volume_rel_drift: float
    dissipation: float
    v_max: float
    v_min: float
    residual: float
    r_min: float
    maxbound_margin: float
    dt: float


CSV_HEADER = "t,J,volume_drift,dissipation,v_max,v_min,residual,r_min,dt"


def csv_row(rec: DiagnosticsRecord) -> str:
    cols = (rec.t, rec.J, rec.volume_rel_drift, rec.dissipation, rec.v_max,
            rec.v_min, rec.residual, rec.r_min, rec.dt)
    return ",".join(repr(float(c)) for c in cols)


# -- run outcomes -------------------------------------------------------------

@dataclass(frozen=True)
class Converged:
    v_final: Field
    residual: float
    state: FlowState


@dataclass(frozen=True)
class Diverged:
    J_final: float
    state: FlowState


@dataclass(frozen=True)
class BlowUpSuspected:
    reason: str              # "overflow" or "stiffness-failure"
    state: FlowState


@dataclass(frozen=True)
class TimeExhausted:
    state: FlowState
    residual: float


RunOutcome = Converged | Diverged | BlowUpSuspected | TimeExhausted


# -- right-hand side and curvature --------------------------------------------

def _exp_checked(values: np.ndarray) -> np.ndarray:
    vmax = values.max()
    if vmax > OVERFLOW_VMAX:
        raise BlowUpOverflow(vmax)
    return np.exp(values)


def _lap(values: np.ndarray, grid) -> np.ndarray:
    return np.fft.irfft2(-grid.k2 * np.fft.rfft2(values), s=(grid.n, grid.n))


def _rhs_values(p: ProblemData, v: np.ndarray, grid) -> np.ndarray:
    """v_dot = e^(-v) (lap v - Q) + rho / int(e^v), as raw samples."""
    ev = _exp_checked(v)
    vol = grid.cell_area * ev.sum()
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return (_lap(v, grid) - p.Q.values) / ev + p.rho / vol


def rhs(p: ProblemData, s: FlowState) -> Field:
    """Flow velocity field at the current state."""
    return Field(s.v.grid, _rhs_values(p, s.v.values, s.v.grid))


def curvature_field(p: ProblemData, v: Field) -> Field:
    """R = e^(-v) (-lap v + Q); constant rho/volume at stationary states."""
    g = v.grid
    return Field(g, np.exp(-v.values) * (-_lap(v.values, g) + p.Q.values))


def stationarity_residual_field(p: ProblemData, v: Field) -> Field:
    """-lap v + Q - rho e^v / int(e^v); zero exactly at solutions."""
    g = v.grid
    ev = _exp_checked(v.values)
    vol = g.cell_area * ev.sum()
    return Field(g, -_lap(v.values, g) + p.Q.values - p.rho * ev / vol)


# -- single-step schemes -------------------------------------------------------

def rk4_stability_cap(p: ProblemData, v: Field, a: float) -> float:
    """dt cap for the explicit scheme: 1 / (max e^(-v) * ((pi n / L)^2 + rho/a))."""
    g = v.grid
    stiff = np.exp(-v.values.min()) * ((np.pi * g.n / g.side_length) ** 2
                                       + abs(p.rho) / a)
    return 1.0 / stiff


def _advance_rk4(p: ProblemData, v: np.ndarray, dt: float, grid) -> np.ndarray:
    k1 = _rhs_values(p, v, grid)
    k2 = _rhs_values(p, v + 0.5 * dt * k1, grid)
    k3 = _rhs_values(p, v + 0.5 * dt * k2, grid)
    k4 = _rhs_values(p, v + dt * k3, grid)
    return v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance_imex(p: ProblemData, v: np.ndarray, dt: float, grid, tol: float) -> np.ndarray:
    """One step of (Id - dt D lap) v+ = v + dt (-D Q + rho/vol), D = e^(-v).

    Multiplying through by e^v gives the symmetric positive definite update
    system (diag(e^v) - dt lap) delta = dt (lap v - Q + rho e^v / vol) with
    v+ = v + delta, solved by CG with the spectral
    (mean(e^v) - dt lap)^(-1) preconditioner.
    """
    ev = _exp_checked(v)
    vol = grid.cell_area * ev.sum()
    b = dt * (_lap(v, grid) - p.Q.values + p.rho * ev / vol)

    pre_denom = ev.mean() + dt * grid.k2

    def apply_A(x):
        return ev * x + dt * np.fft.irfft2(grid.k2 * np.fft.rfft2(x), s=(grid.n, grid.n))

    def apply_M(r):
        return np.fft.irfft2(np.fft.rfft2(r) / pre_denom, s=(grid.n, grid.n))

    b_norm = np.sqrt((b * b).sum())
    if b_norm == 0.0:
        return v.copy()
    x = np.zeros_like(v)
    r = b.copy()
    z = apply_M(r)
    d = z.copy()
    rz = (r * z).sum()
    target = max(tol * b_norm, 1e-300)
    for _ in range(_CG_MAXITER):
        Ad = apply_A(d)
        alpha = rz / (d * Ad).sum()
        x += alpha * d
        r -= alpha * Ad
        if np.sqrt((r * r).sum()) <= target:
            return v + x
        z = apply_M(r)
        rz_new = (r * z).sum()
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverFailure(
        f"inner CG stalled after {_CG_MAXITER} iterations (dt = {dt:.3g})")


# -- adaptive step -------------------------------------------------------------

def step(p: ProblemData, s: FlowState, cfg: FlowConfig) -> FlowState:
    """Advance one accepted step, adapting dt by the energy-monotonicity check.

    J(v+) may exceed J(v) by at most 10 dt^2 (1 + |J(v)|); violations (and
    inner-solver failures) halve dt. dt underflow raises StiffnessFailure
    (or BlowUpOverflow when the failing trials were overflowing), reported
    upstream as likely blow-up.
    """
    grid = s.v.grid
    dt = s.last_dt if s.last_dt > 0 else cfg.dt_init
    grew = False
    if s.clean_steps >= _GROW_AFTER:
        dt *= _GROW_FACTOR
        grew = True
    dt = min(max(dt, cfg.dt_min), cfg.dt_max)
    remaining = cfg.t_end - s.t
    final_clip = 0 < remaining < dt
    if final_clip:
        dt = remaining            # the closing partial step may undercut dt_min

    J0 = s.J_cache if s.J_cache is not None else energy_J(p, s.v)
    halved = False
    overflow_seen: BlowUpOverflow | None = None
    while True:
        if cfg.step_scheme == EXPLICIT_RK4:
            dt_eff = min(dt, rk4_stability_cap(p, s.v, s.a))
            if dt_eff < cfg.dt_min and not final_clip:
                raise StiffnessFailure(s.t, dt_eff, cause="stability-cap")
        else:
            dt_eff = dt
        try:
            if cfg.step_scheme == EXPLICIT_RK4:
                v_new = _advance_rk4(p, s.v.values, dt_eff, grid)
            else:
                v_new = _advance_imex(p, s.v.values, dt_eff, grid, cfg.imex_tolerance)
            ok = bool(np.all(np.isfinite(v_new)))
            if ok:
                J1 = energy_J(p, Field(grid, v_new))
                ok = np.isfinite(J1) and J1 <= J0 + 10.0 * dt_eff**2 * (1.0 + abs(J0))
        except BlowUpOverflow as exc:
            overflow_seen = exc
            ok = False
        except SolverFailure:
            ok = False
        if ok:
            break
        dt = 0.5 * dt_eff
        halved = True
        if dt < cfg.dt_min:
            if overflow_seen is not None:
                raise overflow_seen
            raise StiffnessFailure(s.t, dt, cause="energy-control/solver")

    clean = 0 if (halved or grew) else s.clean_steps + 1
    return FlowState(
        t=s.t + dt_eff,
        v=Field(grid, v_new),
        a=s.a,
        steps_taken=s.steps_taken + 1,
        last_dt=dt_eff,
        clean_steps=clean,
        J_cache=J1,
    )


# -- diagnostics ---------------------------------------------------------------

def max_principle_margin(
    p: ProblemData,
    rec_0: DiagnosticsRecord,
    rec_t: DiagnosticsRecord,
    volume0: float,
) -> float:
    """Slack in the maximum-principle growth bound between two records.

    The bound: e^(v_max(t)) + k <= (e^(v_max(0)) + k) exp(rho (t - t0)/a)
    with k = |Q|_inf * a / rho and a = volume0 the conserved volume.
    Returns RHS - LHS; nonnegative (up to discretization) for valid runs.
    Only meaningful for rho > 0 (NaN otherwise).
    """
    if p.rho <= 0:
        return float("nan")
    k = np.abs(p.Q.values).max() * volume0 / p.rho
    rate = p.rho / volume0
    rhs_bound = (np.exp(rec_0.v_max) + k) * np.exp(rate * (rec_t.t - rec_0.t))
    lhs = np.exp(rec_t.v_max) + k
    return float(rhs_bound - lhs)


def _make_record(p: ProblemData, s: FlowState,
                 rec0: DiagnosticsRecord | None) -> DiagnosticsRecord:
    g = s.v.grid
    ev = _exp_checked(s.v.values)
    vol = g.cell_area * ev.sum()
    res_field = -_lap(s.v.values, g) + p.Q.values - p.rho * ev / vol
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        diss = float(g.cell_area * (res_field * res_field / ev).sum())
        r_min = float(((-_lap(s.v.values, g) + p.Q.values) / ev).min())
    rec = DiagnosticsRecord(
        t=s.t,
        J=s.J_cache if s.J_cache is not None else energy_J(p, s.v),
        volume_rel_drift=float(vol / s.a - 1.0),
        dissipation=diss,
        v_max=s.v.max(),
        v_min=s.v.min(),
        residual=float(np.sqrt(g.cell_area * (res_field * res_field).sum())),
        r_min=r_min,
        maxbound_margin=0.0,
        dt=s.last_dt,
    )
    if rec0 is not None:
        rec = replace(rec, maxbound_margin=max_principle_margin(p, rec0, rec, s.a))
    return rec


def run(
    p: ProblemData,
    v0: Field,
    cfg: FlowConfig,
    sink: Callable[[DiagnosticsRecord], None] | None = None,
    state_sink: Callable[[FlowState], None] | None = None,
) -> RunOutcome:
    """Integrate from v0, emitting a DiagnosticsRecord every record_interval.

    Termination: Converged (residual <= stop_residual, checked at records),
    Diverged (J <= stop_energy), BlowUpSuspected (overflow or dt underflow,
    carrying the last state), or TimeExhausted at t_end. Volume drift beyond
    volume_drift_max aborts with VolumeDriftError. `state_sink`, when given,
    receives the FlowState at every record time (snapshot plumbing).
    """
    state = FlowState(t=0.0, v=v0, a=volume(v0), last_dt=cfg.dt_init)
    rec0 = _make_record(p, state, rec0=None)
    if sink is not None:
        sink(rec0)
    if state_sink is not None:
        state_sink(state)
    if rec0.residual <= cfg.stop_residual:
        return Converged(v_final=state.v, residual=rec0.residual, state=state)
    if rec0.J <= cfg.stop_energy:
        return Diverged(J_final=rec0.J, state=state)

    next_record = cfg.record_interval
    last_rec = rec0
    while state.t < cfg.t_end - 1e-14:
        try:
            state = step(p, state, cfg)
        except BlowUpOverflow:
            _try_emit(p, state, rec0, sink)
            if state_sink is not None:
                state_sink(state)
            return BlowUpSuspected(reason="overflow", state=state)
        except StiffnessFailure:
            _try_emit(p, state, rec0, sink)
            if state_sink is not None:
                state_sink(state)
            return BlowUpSuspected(reason="stiffness-failure", state=state)

        drift = abs(volume(state.v) / state.a - 1.0)
        if drift > cfg.volume_drift_max:
            raise VolumeDriftError(
                f"|volume/a - 1| = {drift:.3e} exceeds {cfg.volume_drift_max:.3e} "
                f"at t = {state.t:.6g}")

        at_end = state.t >= cfg.t_end - 1e-14
        if state.t + 1e-14 >= next_record or at_end:
            rec = _make_record(p, state, rec0)
            last_rec = rec
            if sink is not None:
                sink(rec)
            if state_sink is not None:
                state_sink(state)
            while next_record <= state.t + 1e-14:
                next_record += cfg.record_interval
            if rec.residual <= cfg.stop_residual:
                return Converged(v_final=state.v, residual=rec.residual, state=state)
            if rec.J <= cfg.stop_energy:
                return Diverged(J_final=rec.J, state=state)

    if last_rec.t < state.t:
        last_rec = _make_record(p, state, rec0)
        if sink is not None:
            sink(last_rec)
        if state_sink is not None:
            state_sink(state)
    return TimeExhausted(state=state, residual=last_rec.residual)


def _try_emit(p: ProblemData, state: FlowState, rec0, sink) -> None:
    """Best-effort terminal record for runs that end in a blow-up signal."""
    if sink is None:
        return
    try:
        sink(_make_record(p, state, rec0))
    except BlowUpOverflow:
        sink(DiagnosticsRecord(
            t=state.t, J=float("nan"), volume_rel_drift=float("nan"),
            dissipation=float("nan"), v_max=state.v.max(), v_min=state.v.min(),
            residual=float("nan"), r_min=float("nan"),
            maxbound_margin=float("nan"), dt=state.last_dt))
