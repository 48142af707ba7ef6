# File: src/simulator.py

"""Fixed-step RK4 method-of-steps integrator for delay-coupled systems"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .delay import HistoryBuffer, SubsystemLayout
from .models import BarrierDomainError, ControlDecision, DomainError, Interpolation, RunStatus

if TYPE_CHECKING:
    from .controllers.base import BaseController

TELEMETRY_COLUMNS = ['t', 'robot', 'x1', 'x2', 'x3', 'u1', 'u2', 'u3', 'V', 'U', 'W', 'minh', 'qp_active']
DIAGNOSTIC_COLUMNS = ['t', 'robot', 'dissipation', 'barrier', 'surface', 'clf_infimum',
                      'cross_terms', 'infeasible', 'capped']


@dataclass(frozen=True)
class SystemModel:
    """x_i' = f_i(x_t) + g_i(x_t) u_i over a subsystem layout"""
    layout: SubsystemLayout
    drift: Callable[[HistoryBuffer], np.ndarray]
    input_map: Callable[[HistoryBuffer, int], np.ndarray]
    input_dims: Tuple[int, ...]

    def __post_init__(self):
        if len(self.input_dims) != self.layout.p:
            raise ValueError("one input dimension per subsystem is required")

    def f(self, phi: HistoryBuffer) -> np.ndarray:
        value = np.asarray(self.drift(phi), dtype=float)
        if value.shape != (self.layout.n,):
            raise DomainError(f"drift returned shape {value.shape}, expected ({self.layout.n},)")
        return value

    def g(self, phi: HistoryBuffer, i: int) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.input_map(phi, i), dtype=float))

    def rhs(self, phi: HistoryBuffer, controls: Sequence[np.ndarray]) -> np.ndarray:
        """Stacked x' for controls held at ``controls``"""
        xdot = self.f(phi)
        for i, u in enumerate(controls):
            xdot[self.layout.block(i)] += self.g(phi, i) @ np.asarray(u, dtype=float)
        return xdot


@dataclass(frozen=True)
class SimConfig:
    """Integration settings of one run"""
    dt: float = 1e-3
    horizon: float = 40.0
    delta: float = 0.5
    stride: int = 10
    threads: int = 1
    interpolation: Interpolation = Interpolation.CUBIC_HERMITE

    def __post_init__(self):
        if not 0.0 < self.dt <= self.delta:
            raise ValueError(f"dt must lie in (0, delta], got dt={self.dt}, delta={self.delta}")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Telemetry:
    """Time-stamped rows of a run plus its halt status"""
    frame: pd.DataFrame
    diagnostics: pd.DataFrame
    status: RunStatus = RunStatus.COMPLETED
    final_state: Optional[HistoryBuffer] = None
    steps_taken: int = 0
    t_final: float = 0.0
    qp_infeasible_steps: int = 0
    events: List[str] = field(default_factory=list)

    def add_event(self, message: str):
        self.events.append(message)

    @property
    def halted(self) -> bool:
        return self.status is not RunStatus.COMPLETED

    def robot_frame(self, robot: int) -> pd.DataFrame:
        """Rows of one robot, numbered from 1"""
        return self.frame[self.frame['robot'] == robot]


def integrate(state: HistoryBuffer, model: SystemModel, controls: Sequence[np.ndarray],
              dt: float) -> HistoryBuffer:
    """One RK4 step with zero-order-hold controls

    Stage buffers are the current window advanced to the stage time, so every
    delayed argument is read from the stored history by interpolation.
    """
    x0 = state.head
    k1 = model.rhs(state, controls)
    k2 = model.rhs(state.advance(0.5 * dt, x0 + 0.5 * dt * k1), controls)
    k3 = model.rhs(state.advance(0.5 * dt, x0 + 0.5 * dt * k2), controls)
    k4 = model.rhs(state.advance(dt, x0 + dt * k3), controls)
    x1 = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x1)):
        return state.advance(dt, x1)
    slope = model.rhs(state.advance(dt, x1), controls)
    return state.advance(dt, x1, derivative=slope)


def step(state: HistoryBuffer, model: SystemModel, controllers: 'BaseController',
         dt: float) -> HistoryBuffer:
    """Decide every subsystem's control on ``state`` and advance by ``dt``"""
    if dt > state.delta:
        raise ValueError("dt must not exceed the delay bound")
    decisions = controllers.decide_all(state)
    return integrate(state, model, [d.u for d in decisions], dt)


def _padded(values: np.ndarray, width: int) -> List[float]:
    out = [float('nan')] * width
    for k, value in enumerate(np.asarray(values, dtype=float)[:width]):
        out[k] = float(value)
    return out


class _Recorder:
    """Accumulates telemetry and diagnostic rows"""

    def __init__(self, layout: SubsystemLayout, barriers: Sequence[Sequence] = ()):
        self.layout = layout
        self.barriers = [list(bs) for bs in barriers] or [[] for _ in range(layout.p)]
        width = max((len(bs) for bs in self.barriers), default=0)
        self.diag_columns = DIAGNOSTIC_COLUMNS + [f'B{k + 1}' for k in range(width)]
        self.rows: List[list] = []
        self.diag_rows: List[list] = []

    def _barrier_values(self, state: HistoryBuffer, i: int) -> List[float]:
        """B_k of subsystem i in safe-set order, NaN outside a barrier's domain"""
        values = [float('nan')] * (len(self.diag_columns) - len(DIAGNOSTIC_COLUMNS))
        for k, barrier in enumerate(self.barriers[i]):
            try:
                values[k] = float(barrier.value(state))
            except BarrierDomainError:
                pass
        return values

    def record(self, t: float, state: HistoryBuffer, decisions: Sequence[ControlDecision],
               margins: np.ndarray):
        for i, decision in enumerate(decisions):
            d = decision.diagnostics
            x = state.head[self.layout.block(i)]
            minh = float(margins[i]) if np.isfinite(margins[i]) else float('nan')
            self.rows.append([t, i + 1, *_padded(x, 3), *_padded(decision.u, 3),
                              d.get('V', float('nan')), d.get('U', float('nan')),
                              d.get('W', float('nan')), minh, decision.active_label])
            self.diag_rows.append([t, i + 1, d.get('dissipation', float('nan')),
                                   d.get('barrier', float('nan')), d.get('surface', float('nan')),
                                   d.get('clf_infimum', float('nan')),
                                   d.get('cross_terms', float('nan')), bool(decision.infeasible),
                                   bool(d.get('capped', 0.0)),
                                   *self._barrier_values(state, i)])

    def frames(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        frame = pd.DataFrame(self.rows, columns=TELEMETRY_COLUMNS)
        diagnostics = pd.DataFrame(self.diag_rows, columns=self.diag_columns)
        return frame, diagnostics


def run(model: SystemModel, controllers: 'BaseController', xi: HistoryBuffer,
        cfg: SimConfig) -> Telemetry:
    """Integrate from the initial history ``xi`` up to ``cfg.horizon``

    Halts early with SAFETY_VIOLATION when a safe-set margin reaches zero or a
    barrier is evaluated outside its domain, and with NUMERICAL_ABORT on a
    non-finite state. The last good state is always recorded.
    """
    if xi.dim != model.layout.n:
        raise DomainError(f"initial history has {xi.dim} states, model expects {model.layout.n}")
    recorder = _Recorder(model.layout, controllers.problem.barriers)
    telemetry = Telemetry(frame=pd.DataFrame(columns=TELEMETRY_COLUMNS),
                          diagnostics=pd.DataFrame(columns=DIAGNOSTIC_COLUMNS))
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    state = xi
    k = 0
    try:
        while True:
            t = k * cfg.dt
            margins = controllers.problem.margins(state)
            if np.any(margins <= 0.0):
                robot = int(np.argmin(margins)) + 1
                telemetry.status = RunStatus.SAFETY_VIOLATION
                telemetry.add_event(f"safety violation at t={t:.6g}: robot {robot} margin "
                                    f"{float(np.min(margins)):.6g}")
                recorder.record(t, state, controllers.passive_decisions(state), margins)
                break
            try:
                decisions = controllers.decide_all(state, executor)
            except BarrierDomainError as e:
                telemetry.status = RunStatus.SAFETY_VIOLATION
                telemetry.add_event(f"barrier left its domain at t={t:.6g}: {e} (h={e.h_value:.6g}); "
                                    f"state={np.array2string(state.head, precision=6)}")
                recorder.record(t, state, controllers.passive_decisions(state), margins)
                break

            infeasible = [i + 1 for i, d in enumerate(decisions) if d.infeasible]
            if infeasible:
                if telemetry.qp_infeasible_steps == 0:
                    print(f"   ⚠️ Safety QP infeasible at t={t:.6g} for robot(s) {infeasible}")
                telemetry.qp_infeasible_steps += 1
                telemetry.add_event(f"qp infeasible at t={t:.6g} for robot(s) {infeasible}")

            if k % cfg.stride == 0 or k == cfg.n_steps:
                recorder.record(t, state, decisions, margins)
            if k == cfg.n_steps:
                break

            new_state = integrate(state, model, [d.u for d in decisions], cfg.dt)
            if not np.all(np.isfinite(new_state.head)):
                telemetry.status = RunStatus.NUMERICAL_ABORT
                telemetry.add_event(f"non-finite state after t={t:.6g}; last good state "
                                    f"{np.array2string(state.head, precision=6)}")
                if k % cfg.stride != 0:
                    recorder.record(t, state, decisions, margins)
                break
            state = new_state
            k += 1
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    if telemetry.halted:
        print(f"   ❌ Simulation halted: {telemetry.events[-1]}")
    telemetry.frame, telemetry.diagnostics = recorder.frames()
    telemetry.final_state = state
    telemetry.steps_taken = k
    telemetry.t_final = k * cfg.dt
    return telemetry
