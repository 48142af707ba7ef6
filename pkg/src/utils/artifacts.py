# File: src/utils/artifacts.py

"""Artifact emission: telemetry CSV, trajectory SVG and JSON reports"""

import json
import math
from pathlib import Path
from typing import Any, Sequence, Union

import matplotlib

matplotlib.use('Agg')
from matplotlib import pyplot as plt  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

import pandas as pd  # noqa: E402

# SVG units are points, so a 800x600 viewport is 800/72 x 600/72 inches
SVG_SIZE_PT = (800, 600)
_POINTS_PER_INCH = 72.0


def write_telemetry_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """telemetry.csv: shortest round-trip floats, NaN as empty fields"""
    path = Path(path)
    frame.to_csv(path, index=False, na_rep='')
    return path


def _json_safe(value: Any) -> Any:
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(data: Any, path: Union[str, Path]) -> Path:
    """JSON with non-finite floats written as null"""
    path = Path(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_json_safe(data), f, indent=2, ensure_ascii=False)
    return path


def plot_trajectories(frame: pd.DataFrame, starts: Sequence[Sequence[float]],
                      targets: Sequence[Sequence[float]], obstacles, path: Union[str, Path]) -> Path:
    """Planar trajectories: obstacles filled, starts as dots, targets as crosses"""
    path = Path(path)
    width, height = SVG_SIZE_PT
    fig, ax = plt.subplots(figsize=(width / _POINTS_PER_INCH, height / _POINTS_PER_INCH))
    try:
        for obstacle in obstacles:
            ax.add_patch(Circle(obstacle.center, obstacle.radius, facecolor='dimgray',
                                edgecolor='none', alpha=0.8))
        colors = plt.rcParams['axes.prop_cycle'].by_key()['color']
        for robot, (start, target) in enumerate(zip(starts, targets), start=1):
            color = colors[(robot - 1) % len(colors)]
            rows = frame[frame['robot'] == robot].sort_values('t', kind='stable')
            ax.plot(rows['x1'], rows['x2'], color=color, linewidth=1.5, label=f"robot {robot}")
            ax.plot(*start, marker='o', color=color, linestyle='none')
            ax.plot(*target, marker='x', color=color, markersize=9, markeredgewidth=2, linestyle='none')
        ax.set_aspect('equal', adjustable='datalim')
        ax.set_xlabel('x [m]')
        ax.set_ylabel('y [m]')
        ax.legend(loc='upper right', fontsize='small')
        fig.savefig(path, format='svg')
    finally:
        plt.close(fig)
    return path
