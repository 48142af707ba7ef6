# File: src/__init__.py

"""Delayguard

Safe distributed stabilization of delay-coupled systems: multiple control
Lyapunov and barrier functionals, a QP safety filter, a sliding-mode engine
and a method-of-steps simulator for a multi-robot reach-avoid scenario.
"""

__version__ = "1.0.0"
__author__ = "Delayguard Project"

from .delay import HistoryBuffer, SubsystemLayout
from .models import ControllerKind, RunReport, RunStatus
from .scenario import ScenarioConfig, build_scenario

__all__ = [
    'HistoryBuffer',
    'SubsystemLayout',
    'ControllerKind',
    'RunReport',
    'RunStatus',
    'ScenarioConfig',
    'build_scenario',
    'ScenarioPipeline'
]


def __getattr__(name):
    # Imported lazily: pipeline imports config.settings, which imports this package.
    if name == 'ScenarioPipeline':
        from .pipeline import ScenarioPipeline
        return ScenarioPipeline
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
