"""Tracking-controller synthesis by a contraction-mapping fixed point.

Typical use::

    from cmtrack import ErrorDynamics, check_assumptions, synthesize, integrate_closed_loop
    from cmtrack.examples import load_example

    spec = load_example("pendulum2")
    dyn = ErrorDynamics(spec.model)
    report = check_assumptions(dyn, T_check=spec.T)
    law = synthesize(dyn, report, eigenvalues=spec.eigenvalues)
    run = integrate_closed_loop(dyn, spec.x0, law, spec.T, spec.dt)
"""

from .assumptions import AssumptionReport, check_assumptions, fit_exponential_bound
from .augment import AugmentedErrorDynamics, ComplementColumns, FixedColumns, augment
from .expr import differentiate, evaluate, parse, render
from .model import ErrorDynamics, SystemModel
from .report import StabilityVerdict, classify, classify_with_probes
from .simulate import (
    SimulationResult,
    integrate_closed_loop,
    integrate_E_dynamics,
    reference_error_path,
    sinusoid_reference_controller,
)
from .synthesis import (
    ContractionFailure,
    FeedbackLaw,
    HurwitzSpec,
    SingularB,
    associate_feedback,
    bound_vstar,
    estimate_contraction,
    matrix_exp_diag,
    select_delta,
    solve_feedback,
    synthesize,
)
from .sysfile import SystemSpec, load, loads

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport", "AugmentedErrorDynamics", "ComplementColumns", "ContractionFailure",
    "ErrorDynamics", "FeedbackLaw", "FixedColumns", "HurwitzSpec", "SimulationResult",
    "SingularB", "StabilityVerdict", "SystemModel", "SystemSpec", "associate_feedback",
    "augment", "bound_vstar", "check_assumptions", "classify", "classify_with_probes",
    "differentiate", "estimate_contraction", "evaluate", "fit_exponential_bound",
    "integrate_E_dynamics", "integrate_closed_loop", "load", "loads", "matrix_exp_diag",
    "parse", "reference_error_path", "render", "select_delta", "sinusoid_reference_controller",
    "solve_feedback", "synthesize",
]
