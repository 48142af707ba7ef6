# File: src/utils/__init__.py

"""Utility modules for delayguard"""

from .artifacts import plot_trajectories, write_json, write_telemetry_csv

__all__ = [
    'plot_trajectories',
    'write_json',
    'write_telemetry_csv'
]
