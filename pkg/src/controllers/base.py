# File: src/controllers/base.py

"""Base controller class for distributed control synthesis"""

from abc import ABC, abstractmethod
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..delay import HistoryBuffer
from ..functionals import FunctionalBundle, SafeSetFunctional, reciprocal_barrier
from ..models import Branch, ControlDecision, GainGraph
from ..simulator import SystemModel


@dataclass
class ControlProblem:
    """Everything a synthesis engine evaluates on

    ``safe_sets[i]`` lists the safe-set functionals that subsystem i is
    responsible for; ``barriers[i]`` holds their reciprocal barriers.
    """
    model: SystemModel
    mclfs: List[FunctionalBundle]
    gains: GainGraph
    barrier_gains: Optional[GainGraph] = None
    safe_sets: List[List[SafeSetFunctional]] = field(default_factory=list)
    barriers: List[List[FunctionalBundle]] = field(default_factory=list)

    def __post_init__(self):
        p = self.model.layout.p
        if len(self.mclfs) != p:
            raise ValueError(f"expected {p} Lyapunov functionals, got {len(self.mclfs)}")
        if self.gains.size != p:
            raise ValueError(f"gain graph covers {self.gains.size} subsystems, layout has {p}")
        if not self.safe_sets:
            self.safe_sets = [[] for _ in range(p)]
        if len(self.safe_sets) != p:
            raise ValueError("one safe-set list per subsystem is required")
        if not self.barriers:
            self.barriers = [[reciprocal_barrier(h) for h in hs] for hs in self.safe_sets]
        if self.barrier_gains is None:
            self.barrier_gains = GainGraph.uniform(p, 1.0, 0.0)

    def holders(self, h: SafeSetFunctional) -> Tuple[int, ...]:
        """Subsystems whose safe-set lists hold ``h`` itself"""
        return tuple(j for j, hs in enumerate(self.safe_sets) if any(h is other for other in hs))

    @property
    def layout(self):
        return self.model.layout

    def lyapunov_values(self, phi: HistoryBuffer) -> np.ndarray:
        return np.array([bundle.value(phi.sub_view(self.layout, i))
                         for i, bundle in enumerate(self.mclfs)])

    def margins(self, phi: HistoryBuffer) -> np.ndarray:
        """Smallest safe-set value per subsystem; +inf where none is assigned"""
        return np.array([min((h.eval_h(phi) for h in hs), default=np.inf)
                         for hs in self.safe_sets])

    def snapshot(self, phi: HistoryBuffer) -> 'Snapshot':
        p = self.layout.p
        return Snapshot(phi=phi, f_val=self.model.f(phi), V=self.lyapunov_values(phi),
                        margins=self.margins(phi),
                        g_vals=tuple(self.model.g(phi, i) for i in range(p)))


@dataclass(frozen=True)
class Snapshot:
    """Per-step quantities shared by all subsystem decisions"""
    phi: HistoryBuffer
    f_val: np.ndarray
    V: np.ndarray
    margins: np.ndarray
    g_vals: Tuple[np.ndarray, ...]

    @property
    def at_equilibrium(self) -> bool:
        return bool(np.all(self.V == 0.0))


class BaseController(ABC):
    """Base class for all controllers"""

    def __init__(self, problem: ControlProblem):
        self.name = self.__class__.__name__
        self.problem = problem

    @abstractmethod
    def decide(self, snap: Snapshot, i: int) -> ControlDecision:
        """Control for subsystem ``i`` at the snapshot"""
        pass

    def decide_one(self, phi: HistoryBuffer, i: int) -> ControlDecision:
        self.problem.layout.check_index(i)
        return self.decide(self.problem.snapshot(phi), i)

    def decide_all(self, phi: HistoryBuffer, executor: Optional[Executor] = None) -> List[ControlDecision]:
        """Decisions for every subsystem against one immutable snapshot"""
        snap = self.problem.snapshot(phi)
        indices = range(self.problem.layout.p)
        if executor is None:
            return [self.decide(snap, i) for i in indices]
        return list(executor.map(lambda i: self.decide(snap, i), indices))

    def passive_decisions(self, phi: HistoryBuffer) -> List[ControlDecision]:
        """Zero controls carrying only the Lyapunov values, for halt rows"""
        values = self.problem.lyapunov_values(phi)
        return [ControlDecision(u=np.zeros(m), branch=Branch.ZERO, diagnostics={'V': float(v)})
                for m, v in zip(self.problem.model.input_dims, values)]

    def neighbor_sum(self, graph: GainGraph, i: int, values: Sequence[float]) -> float:
        """sum over graph neighbours j of gamma_ij * values[j], skipping non-finite values"""
        total = 0.0
        for j in self.problem.layout.neighbors(i):
            if np.isfinite(values[j]):
                total += graph.gamma_bar[i, j] * values[j]
        return float(total)


class ZeroController(BaseController):
    """Open loop: every subsystem receives u = 0"""

    def decide(self, snap: Snapshot, i: int) -> ControlDecision:
        return ControlDecision(u=np.zeros(self.problem.model.input_dims[i]), branch=Branch.ZERO,
                               diagnostics={'V': float(snap.V[i])})
