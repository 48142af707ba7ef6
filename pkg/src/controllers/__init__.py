# File: src/controllers/__init__.py

"""Control synthesis engines for interconnected time-delay systems"""

from typing import Union

from ..models import ControllerKind
from .base import BaseController, ControlProblem, Snapshot, ZeroController
from .qp_filter import QPSafetyController, solve_safety_qp
from .sliding import SlidingModeController, SlidingTerms, sliding_control, sliding_terms, surface_value
from .stabilizer import StabilizerController, sontag_control
from .surface_audit import continuity_audit, verify_surface_conditions

# Controller registry: each entry builds a controller from an assembled scenario
CONTROLLERS = {
    ControllerKind.STABILIZER: lambda scenario: StabilizerController(scenario.problem),
    ControllerKind.QP: lambda scenario: QPSafetyController(
        scenario.problem,
        delta_margin=scenario.config.qp.delta_margin,
        tol=scenario.config.qp.tol,
    ),
    ControllerKind.SLIDING: lambda scenario: SlidingModeController(scenario.problem, scenario.sliding_specs),
    ControllerKind.OFF: lambda scenario: ZeroController(scenario.problem),
}


def get_controller(kind: Union[ControllerKind, str], scenario) -> BaseController:
    """Get the controller stack for a controller kind"""
    try:
        kind = ControllerKind(kind)
    except ValueError:
        raise ValueError(f"unknown controller '{kind}'; choose from "
                         f"{', '.join(k.value for k in ControllerKind)}") from None
    return CONTROLLERS[kind](scenario)


__all__ = [
    'BaseController',
    'ControlProblem',
    'Snapshot',
    'ZeroController',
    'StabilizerController',
    'QPSafetyController',
    'SlidingModeController',
    'SlidingTerms',
    'sontag_control',
    'solve_safety_qp',
    'sliding_terms',
    'sliding_control',
    'surface_value',
    'verify_surface_conditions',
    'continuity_audit',
    'get_controller',
    'CONTROLLERS',
]
