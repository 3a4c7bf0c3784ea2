"""Variational quantities and analytic inequality monitors.

The flow and the elliptic problem share the energy

    J_rho(v) = 1/2 int |grad v|^2 + int Q v - rho * log(int e^v),

with int Q = rho enforced at problem construction. All functionals are
invariant under v -> v + const.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BlowUpOverflow
from .grid import Field, grad_sq, integrate, laplacian

# exp(v) overflows f64 just above 709; stop with margin.
OVERFLOW_VMAX = 700.0


@dataclass
class ProblemData:
    """Problem coefficients: rho, the inhomogeneity Q, optional weight f.

    Q is renormalized at construction by subtracting the constant
    (int Q - rho)/|M| so that int Q = rho holds exactly at quadrature level.
    `f_weight` is the positive weight of the equivalent equation obtained
    through v = u + log f; it defaults to 1.
    """

    rho: float
    Q: Field
    f_weight: Field | None = None
    _log_f: Field | None = dc_field(default=None, repr=False, init=False)

    def __post_init__(self) -> None:
        g = self.Q.grid
        defect = (integrate(self.Q) - self.rho) / g.area
        if defect != 0.0:
            self.Q = Field(g, self.Q.values - defect)
        if self.f_weight is not None:
            if self.f_weight.grid != g:
                raise ValueError("f_weight must live on the same grid as Q")
            if not np.all(self.f_weight.values > 0.0):
                raise ValueError("f_weight must be strictly positive")
            self._log_f = Field(g, np.log(self.f_weight.values))

    @property
    def grid(self):
        return self.Q.grid


def exp_field(v: Field) -> Field:
    """e^v with overflow detection (v_max > 700 raises BlowUpOverflow)."""
    vmax = v.values.max()
    if vmax > OVERFLOW_VMAX:
        raise BlowUpOverflow(vmax)
    return Field(v.grid, np.exp(v.values))


def volume(v: Field) -> float:
    """Conformal volume int e^v dV; the conserved quantity of the flow."""
    return integrate(exp_field(v))


def energy_J(p: ProblemData, v: Field) -> float:
    """J_rho(v) = 1/2 int |grad v|^2 + int Q v - rho log(int e^v)."""
    dirichlet = 0.5 * integrate(grad_sq(v))
    qv = integrate(p.Q * v)
    return dirichlet + qv - p.rho * np.log(volume(v))


def energy_I(p: ProblemData, u: Field) -> float:
    """I_rho(u) = 1/2 int |grad u|^2 + (rho/|M|) int u - rho log(int f e^u).

    With f = 1 and Q = rho/|M| this equals energy_J(u) exactly.
    """
    g = u.grid
    dirichlet = 0.5 * integrate(grad_sq(u))
    mean_term = (p.rho / g.area) * integrate(u)
    eu = exp_field(u)
    weighted = eu if p.f_weight is None else p.f_weight * eu
    return dirichlet + mean_term - p.rho * np.log(integrate(weighted))


def change_of_variables(p: ProblemData, u: Field) -> tuple[Field, Field]:
    """Map a weighted-equation solution u to (v, Q_induced).

    v = u + log f and Q_induced = rho/|M| + lap(log f); the induced Q
    integrates to rho because the Laplacian term has zero mean.
    """
    g = u.grid
    if p.f_weight is None:
        log_f = g.constant_field(0.0)
    else:
        log_f = p._log_f
    v = u + log_f
    q_induced = Field(g, p.rho / g.area + laplacian(log_f).values)
    return v, q_induced


def dissipation(v: Field, v_dot: Field) -> float:
    """int v_dot^2 e^v dV, the instantaneous energy dissipation rate (>= 0)."""
    if v.grid != v_dot.grid:
        raise ValueError("fields live on different grids")
    ev = exp_field(v)
    return integrate(Field(v.grid, v_dot.values**2 * ev.values))


def moser_trudinger_gap(v: Field, c_mt: float = 0.0) -> float:
    """(1/16pi) int |grad v|^2 + c_mt - log int e^(v - vbar) dV.

    The sharp constant is metric-dependent and not asserted; the monitor
    reports the gap trend with a configured c_mt (default 0).
    """
    vbar = v.mean()
    centered = Field(v.grid, v.values - vbar)
    dirichlet = integrate(grad_sq(v))
    return dirichlet / (16.0 * np.pi) + c_mt - np.log(volume(centered))


def jensen_gap(v: Field) -> float:
    """log int e^(v - vbar) dV - log |M|; nonnegative by Jensen's inequality."""
    vbar = v.mean()
    centered = Field(v.grid, v.values - vbar)
    return float(np.log(volume(centered)) - np.log(v.grid.area))
