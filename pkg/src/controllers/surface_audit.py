# File: src/controllers/surface_audit.py

"""Numerical audits: sliding-surface hypotheses and controller continuity at the origin"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from ..delay import HistoryBuffer
from ..models import AuditStatus, BarrierDomainError, SlidingSurfaceSpec
from .base import BaseController
from .sliding import surface_value


@dataclass
class ConditionResult:
    """Outcome of one audited condition for one subsystem"""
    status: AuditStatus
    value: Optional[float] = None
    reference: Optional[float] = None
    samples: int = 0
    inconclusive: int = 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['status'] = self.status.value
        return data


@dataclass
class RobotAudit:
    robot: int
    boundary: ConditionResult
    zero_set: ConditionResult

    @property
    def passed(self) -> bool:
        return self.boundary.status is AuditStatus.PASS and self.zero_set.status is AuditStatus.PASS


@dataclass
class SurfaceAuditReport:
    """Per-subsystem results of the boundary and zero-set checks"""
    robots: List[RobotAudit] = field(default_factory=list)

    @property
    def status(self) -> AuditStatus:
        statuses = [s for r in self.robots for s in (r.boundary.status, r.zero_set.status)]
        if AuditStatus.FAIL in statuses:
            return AuditStatus.FAIL
        if AuditStatus.INCONCLUSIVE in statuses:
            return AuditStatus.INCONCLUSIVE
        return AuditStatus.PASS

    def to_dict(self) -> Dict[str, Any]:
        return {
            'status': self.status.value,
            'robots': [{'robot': r.robot,
                        'boundary': r.boundary.to_dict(),
                        'zero_set': r.zero_set.to_dict()} for r in self.robots],
        }


class _SurfaceSampler:
    """U_i and the safety margin of subsystem i as functions of its planar position"""

    def __init__(self, scenario, spec: SlidingSurfaceSpec, xi: HistoryBuffer, i: int):
        self.scenario = scenario
        self.spec = spec
        self.xi = xi
        self.i = i
        start = scenario.layout.offsets[i]
        self.position = slice(start, start + 2)

    def history(self, point) -> HistoryBuffer:
        head = np.array(self.xi.head)
        head[self.position] = point
        return self.scenario.history_at(head)

    def U_of(self, phi: HistoryBuffer) -> float:
        problem = self.scenario.problem
        try:
            return surface_value(phi, problem.layout, problem.mclfs[self.i], problem.barriers[self.i],
                                 self.spec, self.i)
        except BarrierDomainError:
            return float('nan')

    def U(self, point) -> float:
        return self.U_of(self.history(point))

    def margin(self, point) -> float:
        phi = self.history(point)
        return min((h.eval_h(phi) for h in self.scenario.problem.safe_sets[self.i]), default=np.inf)


def _audit_boundary(sampler: _SurfaceSampler, n_boundary: int, eps: float) -> ConditionResult:
    reference = sampler.U_of(sampler.xi) ** 2
    angles = np.linspace(0.0, 2.0 * np.pi, n_boundary, endpoint=False)
    values, inconclusive = [], 0
    for h in sampler.scenario.problem.safe_sets[sampler.i]:
        if 'center' not in h.params:
            continue
        center, radius = np.asarray(h.params['center']), h.params['radius']
        inflated = np.sqrt(radius ** 2 + eps)
        for angle in angles:
            point = center + inflated * np.array([np.cos(angle), np.sin(angle)])
            value = sampler.U(point)
            if np.isfinite(value):
                values.append(value ** 2)
            else:
                inconclusive += 1
    if not values:
        return ConditionResult(AuditStatus.INCONCLUSIVE, None, reference, 0, inconclusive)
    lowest = float(min(values))
    status = AuditStatus.PASS if lowest >= reference else AuditStatus.FAIL
    return ConditionResult(status, lowest, reference, len(values), inconclusive)


def _audit_zero_set(sampler: _SurfaceSampler, target, n_rays: int, t_max: float, n_grid: int,
                    rng: np.random.Generator) -> ConditionResult:
    target = np.asarray(target, dtype=float)
    margins, inconclusive = [], 0

    if abs(sampler.U(target)) <= 1e-12:
        margins.append(sampler.margin(target))

    grid = np.linspace(0.0, t_max, n_grid)[1:]
    phase = rng.uniform(0.0, 2.0 * np.pi)
    for angle in phase + np.linspace(0.0, 2.0 * np.pi, n_rays, endpoint=False):
        direction = np.array([np.cos(angle), np.sin(angle)])

        def along(t: float) -> float:
            return sampler.U(target + t * direction)

        values = np.array([along(t) for t in grid])
        crossing = np.flatnonzero(np.isfinite(values[:-1]) & np.isfinite(values[1:])
                                  & (np.sign(values[:-1]) != np.sign(values[1:])))
        if crossing.size == 0:
            inconclusive += 1
            continue
        k = int(crossing[0])
        try:
            t_root = brentq(along, grid[k], grid[k + 1], xtol=1e-10)
        except (ValueError, RuntimeError):
            inconclusive += 1
            continue
        margins.append(sampler.margin(target + t_root * direction))

    if not margins:
        return ConditionResult(AuditStatus.INCONCLUSIVE, None, 0.0, 0, inconclusive)
    lowest = float(min(margins))
    status = AuditStatus.PASS if lowest > 0.0 else AuditStatus.FAIL
    return ConditionResult(status, lowest, 0.0, len(margins), inconclusive)


def verify_surface_conditions(specs: Optional[Sequence[SlidingSurfaceSpec]], scenario,
                              xi: Optional[HistoryBuffer] = None, n_boundary: int = 64,
                              n_rays: int = 32, n_grid: int = 200, t_max: Optional[float] = None,
                              eps: float = 1e-6, seed: int = 0) -> SurfaceAuditReport:
    """Sample the sliding-surface hypotheses for every robot of a scenario

    Boundary check: U_i^2 on every obstacle circle is at least U_i^2 at the
    initial history. Zero-set check: points with U_i = 0, the target itself
    and roots found along rays from it, lie strictly inside the safe set.
    Both use constant histories at the sampled point with the other robots
    held at the initial state. A numerical audit, not a proof.
    """
    specs = list(specs) if specs is not None else scenario.sliding_specs
    xi = xi if xi is not None else scenario.xi
    targets = scenario.targets
    if t_max is None:
        t_max = 2.0 * float(np.max(np.abs(np.vstack([targets, np.asarray(scenario.config.starts)])))) + 1.0
    rng = np.random.default_rng(seed)
    report = SurfaceAuditReport()
    for i, spec in enumerate(specs):
        sampler = _SurfaceSampler(scenario, spec, xi, i)
        report.robots.append(RobotAudit(
            robot=i + 1,
            boundary=_audit_boundary(sampler, n_boundary, eps),
            zero_set=_audit_zero_set(sampler, targets[i], n_rays, t_max, n_grid, rng),
        ))
    return report


def continuity_audit(controller: BaseController, phi: HistoryBuffer, equilibrium,
                     scales: Sequence[float] = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> List[float]:
    """Largest control norm over subsystems after scaling phi toward ``equilibrium`` by each s"""
    equilibrium = np.asarray(equilibrium, dtype=float)
    norms = []
    for s in scales:
        scaled = phi.map_states(lambda states: equilibrium + s * (states - equilibrium))
        decisions = controller.decide_all(scaled)
        norms.append(max(float(np.linalg.norm(d.u)) for d in decisions))
    return norms
