"""Simulator and diagnostics for a mean-field-type gradient flow on the flat torus.

The package integrates d/dt e^v = lap(v) - Q + rho e^v / int(e^v) on [0, L)^2
with spectral space discretization, monitors the flow's structural identities
(volume conservation, energy dissipation, maximum-principle bounds), solves
the stationary equation directly as a cross-check, and detects blow-up
bubbles with 8*pi/rho mass quantization.
"""

from .concentration import (
    Bubble,
    BubbleReport,
    ChenLiFit,
    ExtractConfig,
    annulus_profile,
    chen_li_fit,
    chen_li_profile,
    concentration_scan,
    extract_bubbles,
    report_to_json,
    select_core,
)
from .errors import (
    BlowUpOverflow,
    DataValidityError,
    DegenerateLinearization,
    FitFailure,
    MeanFlowError,
    NewtonFailure,
    NotConcentratedError,
    SolverFailure,
    StepSizeError,
    StiffnessFailure,
    UnreachableTargetError,
    VolumeDriftError,
)
from .flow import (
    BlowUpSuspected,
    Converged,
    DiagnosticsRecord,
    Diverged,
    FlowConfig,
    FlowState,
    RunOutcome,
    TimeExhausted,
    curvature_field,
    max_principle_margin,
    rhs,
    run,
    step,
)
from .functionals import (
    ProblemData,
    change_of_variables,
    dissipation,
    energy_I,
    energy_J,
    jensen_gap,
    moser_trudinger_gap,
    volume,
)
from .grid import (
    Field,
    Point,
    TorusGrid,
    ball_mass,
    grad_sq,
    gradient,
    integrate,
    l2_norm,
    laplacian,
    periodic_distance,
    rescale_sample,
)
from .harness import (
    ContinuityReport,
    ExperimentConfig,
    InitSpec,
    QSpec,
    calibrate_negative_energy,
    continuity_probe,
    load_config,
    make_bubble_data,
    run_experiment,
    synthetic_bubble_field,
)
from .snapshots import read_snapshot, write_snapshot
from .stationary import NewtonConfig, minimize_direct, newton_solve, residual

__version__ = "0.1.0"
