# File: src/reporting.py

"""Run reports assembled from telemetry, and their re-derivation from telemetry.csv"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .models import RunReport, SmallGainCertificate
from .simulator import Telemetry

RESIDUAL_COLUMNS = ('dissipation', 'barrier', 'surface', 'clf_infimum', 'cross_terms')


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def safety_metrics(frame: pd.DataFrame) -> Dict[str, Any]:
    """Minimum safe-set margin over every telemetry row and the violation flag"""
    minh = pd.to_numeric(frame['minh'], errors='coerce').to_numpy(dtype=float)
    finite = minh[np.isfinite(minh)]
    if finite.size == 0:
        return {'min_h': None, 'violation': False}
    lowest = float(finite.min())
    return {'min_h': lowest, 'violation': bool(lowest <= 0.0)}


def time_to_ball(times: np.ndarray, distances: np.ndarray, radius: float) -> Optional[float]:
    """First sample time after which every later distance stays within ``radius``"""
    inside = distances <= radius
    if inside.size == 0 or not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    first = 0 if outside.size == 0 else int(outside[-1]) + 1
    return float(times[first])


def stabilization_metrics(frame: pd.DataFrame, targets: Sequence[Sequence[float]],
                          ball_radius: float) -> Dict[str, Any]:
    """Final distance to target and time-to-ball per robot"""
    final_distance: List[Optional[float]] = []
    arrival: List[Optional[float]] = []
    for robot, target in enumerate(np.asarray(targets, dtype=float), start=1):
        rows = frame[frame['robot'] == robot].sort_values('t', kind='stable')
        if rows.empty:
            final_distance.append(None)
            arrival.append(None)
            continue
        positions = rows[['x1', 'x2']].to_numpy(dtype=float)
        distances = np.linalg.norm(positions - target, axis=1)
        final_distance.append(float(distances[-1]))
        arrival.append(time_to_ball(rows['t'].to_numpy(dtype=float), distances, ball_radius))
    return {'final_distance': final_distance, 'time_to_ball': arrival}


def residual_maxima(diagnostics: pd.DataFrame) -> Dict[str, Optional[float]]:
    maxima = {}
    for column in RESIDUAL_COLUMNS:
        values = pd.to_numeric(diagnostics[column], errors='coerce').to_numpy(dtype=float)
        finite = values[np.isfinite(values)]
        maxima[column] = float(finite.max()) if finite.size else None
    return maxima


def build_report(telemetry: Telemetry, controller: str, targets: Sequence[Sequence[float]],
                 ball_radius: float, certificate: SmallGainCertificate,
                 surface_audit: Optional[Dict[str, Any]] = None,
                 conflicts: Optional[List[str]] = None) -> RunReport:
    """RunReport of one simulation; ``conflicts`` are reach-avoid conflicts found by the caller"""
    safety = safety_metrics(telemetry.frame)
    stabilization = stabilization_metrics(telemetry.frame, targets, ball_radius)
    report = RunReport(
        controller=controller,
        status=telemetry.status,
        min_h=safety['min_h'],
        violation=safety['violation'],
        final_distance=stabilization['final_distance'],
        time_to_ball=stabilization['time_to_ball'],
        targets=[[float(v) for v in q] for q in targets],
        ball_radius=float(ball_radius),
        spectral_radius=_finite_or_none(certificate.spectral_radius),
        small_gain_passed=certificate.passed,
        residual_maxima=residual_maxima(telemetry.diagnostics),
        surface_audit=surface_audit,
        qp_infeasible_steps=telemetry.qp_infeasible_steps,
        horizon_reached=telemetry.t_final,
        conflicts=list(conflicts or []),
    )
    for event in telemetry.events:
        if not event.startswith('qp infeasible'):
            report.add_error(event)
    return report


def derive_from_csv(path: Union[str, Path], targets: Sequence[Sequence[float]],
                    ball_radius: float) -> Dict[str, Any]:
    """Safety and stabilization figures recomputed from a telemetry.csv file"""
    frame = pd.read_csv(path, float_precision='round_trip', keep_default_na=True)
    return {
        'safety': safety_metrics(frame),
        'stabilization': stabilization_metrics(frame, targets, ball_radius),
    }


def compare_with_report(derived: Dict[str, Any], report: Dict[str, Any], tol: float = 1e-9) -> List[str]:
    """Mismatches between re-derived figures and a report.json dictionary"""
    mismatches = []

    def close(a, b) -> bool:
        if a is None or b is None:
            return a is None and b is None
        return abs(float(a) - float(b)) <= tol

    safety = report['safety']
    if not close(derived['safety']['min_h'], safety['min_h']):
        mismatches.append(f"min_h: csv {derived['safety']['min_h']} vs report {safety['min_h']}")
    if derived['safety']['violation'] != safety['violation']:
        mismatches.append("violation flag differs")
    for key in ('final_distance', 'time_to_ball'):
        for robot, (a, b) in enumerate(zip(derived['stabilization'][key], report['stabilization'][key]), 1):
            if not close(a, b):
                mismatches.append(f"{key} robot {robot}: csv {a} vs report {b}")
    return mismatches
