# File: src/selftest.py

"""Oracle suites: numerical checks of every engine against closed forms and brute force"""

import json
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .controllers import (
    QPSafetyController,
    SlidingModeController,
    StabilizerController,
    ZeroController,
    continuity_audit,
    sliding_terms,
    solve_safety_qp,
    sontag_control,
)
from .controllers.base import ControlProblem
from .delay import HistoryBuffer, SubsystemLayout
from .functionals import check_small_gain, quadratic_mclf
from .models import ControllerKind, DegenerateSurfaceError, GainGraph, Interpolation, RunStatus
from .reporting import build_report, compare_with_report, derive_from_csv, safety_metrics, stabilization_metrics
from .scenario import RobotParams, ScenarioConfig, build_scenario, random_layout
from .simulator import SimConfig, SystemModel, integrate, run
from .utils.artifacts import write_json, write_telemetry_csv


@dataclass
class SuiteResult:
    """Outcome of one oracle suite"""
    name: str
    passed: bool = True
    checks: int = 0
    worst: Optional[float] = None
    details: List[str] = field(default_factory=list)
    elapsed: float = 0.0

    def fail(self, message: str):
        self.passed = False
        self.details.append(message)

    def track(self, value: float):
        """Record the largest observed residual"""
        self.checks += 1
        if self.worst is None or value > self.worst:
            self.worst = float(value)


def _scenario_states(scenario, n: int, rng: np.random.Generator, clearance: float = 0.05) -> List[HistoryBuffer]:
    """Random two-sample histories with every robot outside the obstacles"""
    cfg = scenario.config
    states = []
    while len(states) < n:
        head = []
        for _ in range(cfg.p):
            while True:
                point = rng.uniform(-2.5, 2.5, 2)
                if all(ob.clearance(point) > clearance for ob in cfg.obstacles):
                    break
            head.extend([point[0], point[1], rng.uniform(-np.pi, np.pi)])
        head = np.array(head)
        past = head + rng.normal(0.0, 0.1, head.shape)
        states.append(HistoryBuffer(cfg.delta, np.array([-cfg.delta, 0.0]), np.vstack((past, head)),
                                    Interpolation.LINEAR))
    return states


def sontag_identity(n_samples: int = 100000, seed: int = 0) -> SuiteResult:
    """a + b.u = -sqrt(a^2 + |b|^4) for the universal formula"""
    result = SuiteResult("sontag identity")
    rng = np.random.default_rng(seed)
    for _ in range(n_samples):
        a = rng.uniform(-10.0, 10.0)
        b = rng.uniform(-3.0, 3.0, rng.integers(1, 4))
        if not np.any(b):
            continue
        u = sontag_control(a, b)
        error = abs(a + b @ u + np.sqrt(a ** 2 + (b @ b) ** 2))
        result.track(error)
        if error > 1e-10:
            result.fail(f"a={a!r}, b={b.tolist()}: error {error:.3g}")
    return result


def clf_residual(n_samples: int = 1000, seed: int = 0) -> SuiteResult:
    """Dissipation residual of the stabilizer at sampled scenario states"""
    result = SuiteResult("dissipation residual")
    scenario = build_scenario(ScenarioConfig())
    controller = StabilizerController(scenario.problem)
    for phi in _scenario_states(scenario, n_samples, np.random.default_rng(seed)):
        for i, decision in enumerate(controller.decide_all(phi)):
            residual = decision.diagnostics['dissipation']
            result.track(residual)
            if residual > 1e-6:
                result.fail(f"robot {i + 1} at {np.array2string(phi.head, precision=4)}: {residual:.3g}")
    return result


def _grid(center: np.ndarray, half_width: float, n: int) -> np.ndarray:
    axes = [np.linspace(c - half_width, c + half_width, n) for c in center]
    return np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, center.shape[0])


def _grid_floor(u_nom, A, b, center, half_width, n) -> float:
    """Smallest objective over feasible points of a grid around ``center``"""
    points = _grid(center, half_width, n)
    feasible = np.all(points @ A.T <= b, axis=1)
    if not feasible.any():
        return np.inf
    return float(np.min(np.sum((points[feasible] - u_nom) ** 2, axis=1)))


def qp_oracle(n_samples: int = 1000, seed: int = 0, resolution: float = 1e-3) -> SuiteResult:
    """Active-set solutions against projections, a local grid and a coarse global grid

    A convex objective has no better feasible point near its minimizer, so a
    local grid at ``resolution`` checks optimality.
    """
    result = SuiteResult("qp oracle")
    rng = np.random.default_rng(seed)
    for _ in range(n_samples):
        m = int(rng.integers(2, 4))
        r = int(rng.integers(1, 6))
        A = rng.normal(size=(r, m))
        anchor = rng.uniform(-1.0, 1.0, m)
        b = A @ anchor + rng.uniform(0.0, 0.5, r)
        u_nom = rng.uniform(-2.0, 2.0, m)
        decision = solve_safety_qp(u_nom, list(zip(A, b)))
        u = decision.u

        if np.all(A @ u_nom <= b):
            result.track(float(np.max(np.abs(u - u_nom))))
            if not np.array_equal(u, u_nom):
                result.fail(f"feasible u_nom {u_nom.tolist()} was changed to {u.tolist()}")
            continue
        if r == 1:
            a_row = A[0]
            projected = u_nom - max(0.0, a_row @ u_nom - b[0]) / (a_row @ a_row) * a_row
            error = float(np.max(np.abs(u - projected)))
            result.track(error)
            if error > 1e-10:
                result.fail(f"single row: {u.tolist()} vs projection {projected.tolist()}")
            continue

        violation = float(np.max(A @ u - b))
        if violation > 1e-8 or decision.infeasible:
            result.fail(f"solution violates a row by {violation:.3g}")
            continue
        objective = float(np.sum((u - u_nom) ** 2))
        n_local = 41 if m == 2 else 21
        local = _grid_floor(u_nom, A, b, u, 0.5 * (n_local - 1) * resolution, n_local)
        reach = float(np.linalg.norm(u_nom - anchor)) + 0.1
        coarse = _grid_floor(u_nom, A, b, u_nom, reach, 41 if m == 2 else 25)
        gap = objective - min(local, coarse)
        result.track(max(gap, 0.0))
        if gap > 1e-7:
            result.fail(f"grid point beats the solver by {gap:.3g} (m={m}, rows={r})")
    return result


def sliding_identities(n_samples: int = 1000, horizon: float = 2.0, seed: int = 0) -> SuiteResult:
    """H J1 H' = 0 and H (J1 + J2) H' = F at sampled states; W non-increasing along a run"""
    result = SuiteResult("sliding identities")
    scenario = build_scenario(ScenarioConfig())
    problem = scenario.problem
    for phi in _scenario_states(scenario, n_samples, np.random.default_rng(seed)):
        for i, spec in enumerate(scenario.sliding_specs):
            try:
                terms = sliding_terms(phi, problem.model, problem.mclfs[i], problem.barriers[i], spec, i)
            except DegenerateSurfaceError:
                continue
            scale = max(1.0, abs(terms.F))
            antisymmetric = abs(float(terms.H @ terms.J1 @ terms.H))
            consistency = abs(float(terms.H @ (terms.J1 + terms.J2) @ terms.H) - terms.F) / scale
            result.track(max(antisymmetric / scale, consistency))
            if antisymmetric > 1e-9 * scale or consistency > 1e-9:
                result.fail(f"robot {i + 1}: H J1 H' = {antisymmetric:.3g}, consistency {consistency:.3g}")

    cfg = SimConfig(dt=1e-3, horizon=horizon, delta=scenario.config.delta, stride=10)
    telemetry = run(problem.model, SlidingModeController(problem, scenario.sliding_specs), scenario.xi, cfg)
    if telemetry.halted:
        result.fail(f"sliding run halted: {telemetry.events[-1]}")
    _check_W_non_increasing(telemetry, scenario.config.sliding.smoothing, result)
    return result


def _check_W_non_increasing(telemetry, smoothing: float, result: SuiteResult):
    """W = U^2 / 2 may not rise between recorded rows outside the smoothing layer"""
    for robot in sorted(telemetry.frame['robot'].unique()):
        rows = telemetry.robot_frame(robot)
        W = rows['W'].to_numpy(dtype=float)
        U = rows['U'].to_numpy(dtype=float)
        tol = 1e-6 * max(1.0, W[0])
        for k in range(1, len(W)):
            if abs(U[k - 1]) <= smoothing:
                continue
            increase = W[k] - W[k - 1]
            result.track(max(increase, 0.0))
            if increase > tol:
                result.fail(f"robot {robot}: W rose by {increase:.3g} at row {k}")
                break


def acceptance(horizon: Optional[float] = None, dt: float = 1e-3,
               controllers: Sequence[str] = ('qp', 'sliding'), require_arrival: bool = True) -> SuiteResult:
    """Default scenario under each barrier controller over the full horizon

    Every run must finish without a safety event, keep min h > 0 and end with
    each robot inside its target ball; sliding runs also keep W non-increasing.
    """
    result = SuiteResult("acceptance")
    cfg = ScenarioConfig()
    scenario = build_scenario(cfg)
    sim = SimConfig(dt=dt, horizon=horizon or SimConfig.horizon, delta=cfg.delta, stride=10,
                    interpolation=cfg.interpolation)
    for name in controllers:
        kind = ControllerKind(name)
        telemetry = run(scenario.model, scenario.controller(kind), scenario.xi, sim)
        result.checks += 1
        if telemetry.halted:
            result.fail(f"{kind.value}: run halted: {telemetry.events[-1]}")
            continue
        safety = safety_metrics(telemetry.frame)
        if safety['violation'] or safety['min_h'] is None or not safety['min_h'] > 0.0:
            result.fail(f"{kind.value}: min h {safety['min_h']}")
        if require_arrival:
            distances = stabilization_metrics(telemetry.frame, cfg.targets, cfg.ball_radius)['final_distance']
            for robot, distance in enumerate(distances, 1):
                result.track(distance if distance is not None else np.inf)
                if distance is None or distance > cfg.ball_radius:
                    result.fail(f"{kind.value}: robot {robot} ends {distance} m from its target")
        if kind is ControllerKind.SLIDING:
            _check_W_non_increasing(telemetry, cfg.sliding.smoothing, result)
    return result


def small_gain() -> SuiteResult:
    """Uniform four-robot gains: 0.6 passes, 1.5 fails"""
    result = SuiteResult("small gain")
    for gamma, expected, verdict in ((0.2, 0.6, True), (0.5, 1.5, False)):
        certificate = check_small_gain(GainGraph.uniform(4, 1.0, gamma))
        error = abs(certificate.spectral_radius - expected)
        result.track(error)
        if error > 1e-9 or certificate.passed is not verdict:
            result.fail(f"gamma {gamma}: {certificate}, expected {expected}")
    return result


def _scalar_model(drift: Callable[[HistoryBuffer], np.ndarray]) -> SystemModel:
    layout = SubsystemLayout.complete([1])
    return SystemModel(layout=layout, drift=drift, input_map=lambda phi, i: np.zeros((1, 1)),
                       input_dims=(1,))


def _integrate_scalar(model: SystemModel, xi: HistoryBuffer, dt: float, t_end: float) -> Dict[float, float]:
    state = xi
    trace = {0.0: float(state.head[0])}
    for k in range(1, int(round(t_end / dt)) + 1):
        state = integrate(state, model, [np.zeros(1)], dt)
        trace[round(k * dt, 12)] = float(state.head[0])
    return trace


def integrator(dt: float = 1e-2, richardson_horizon: float = 0.4) -> SuiteResult:
    """Delay-free decay, the delayed decay x' = -x(t-1), and step halving on the scenario"""
    result = SuiteResult("integrator")

    plain = _scalar_model(lambda phi: -phi.head)
    trace = _integrate_scalar(plain, HistoryBuffer.constant(0.5, [1.0]), dt, 1.0)
    error = abs(trace[1.0] - np.exp(-1.0))
    result.track(error)
    if error > 1e-6:
        result.fail(f"x' = -x: error {error:.3g} at t = 1")

    def exact(t: float) -> float:
        if t <= 1.0:
            return 1.0 - t
        return -2.0 * t + 2.0 + 0.5 * (t ** 2 - 1.0)

    delayed = _scalar_model(lambda phi: -phi.query(-1.0))
    trace = _integrate_scalar(delayed, HistoryBuffer.constant(1.0, [1.0]), dt, 2.0)
    error = max(abs(x - exact(t)) for t, x in trace.items())
    result.track(error)
    if error > 1e-4:
        result.fail(f"x' = -x(t-1): max error {error:.3g} on [0, 2]")

    # Strong coupling keeps the truncation error well above rounding
    scenario = build_scenario(replace(ScenarioConfig(), robot=RobotParams(coupling_gain=2.0)))
    controller = ZeroController(scenario.problem)
    finals = []
    for step in (dt, dt / 2.0, dt / 4.0):
        cfg = SimConfig(dt=step, horizon=richardson_horizon, delta=scenario.config.delta, stride=1000)
        finals.append(run(scenario.model, controller, scenario.xi, cfg).final_state.head)
    coarse = np.linalg.norm(finals[0] - finals[1])
    fine = np.linalg.norm(finals[1] - finals[2])
    ratio = coarse / fine if fine > 0.0 else np.inf
    if ratio < 2.0:
        result.fail(f"step-halving ratio {ratio:.3g} below 2")
    result.checks += 1
    return result


def continuity(scales=(1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> SuiteResult:
    """Stabilizer output shrinks with the state on a linear two-subsystem network"""
    result = SuiteResult("continuity at the origin")
    layout = SubsystemLayout.complete([1, 1])
    delta = 0.5

    def drift(phi: HistoryBuffer) -> np.ndarray:
        past = phi.query(-delta)
        return -phi.head + 0.1 * past[::-1]

    model = SystemModel(layout=layout, drift=drift, input_map=lambda phi, i: np.ones((1, 1)),
                        input_dims=(1, 1))
    mclfs = [quadratic_mclf([[1.0]], [[1.0]], 0.1, [0.0], label=f"V{i + 1}") for i in range(2)]
    problem = ControlProblem(model=model, mclfs=mclfs, gains=GainGraph.uniform(2, 1.0, 0.2))
    phi = HistoryBuffer.from_function(delta, lambda t: np.array([1.0 + t, -0.5 + np.sin(3.0 * t)]))
    norms = continuity_audit(StabilizerController(problem), phi, np.zeros(2), scales)
    for k in range(1, len(norms)):
        bound = 3.0 * norms[k - 1] * scales[k] / scales[k - 1]
        result.track(norms[k] / norms[k - 1] if norms[k - 1] > 0.0 else 0.0)
        if norms[k] > norms[k - 1] or norms[k] > bound:
            result.fail(f"scale {scales[k]:g}: |u| = {norms[k]:.3g} after {norms[k - 1]:.3g}")
    return result


def telemetry_rederivation(horizon: float = 1.0, dt: float = 1e-2) -> SuiteResult:
    """report.json figures recomputed from telemetry.csv alone"""
    result = SuiteResult("telemetry re-derivation")
    scenario = build_scenario(ScenarioConfig())
    controller = QPSafetyController(scenario.problem)
    telemetry = run(scenario.model, controller, scenario.xi,
                    SimConfig(dt=dt, horizon=horizon, delta=scenario.config.delta, stride=5))
    report = build_report(telemetry, 'qp', scenario.config.targets, scenario.config.ball_radius,
                          check_small_gain(scenario.problem.gains))
    with tempfile.TemporaryDirectory() as tmp:
        csv_path = write_telemetry_csv(telemetry.frame, Path(tmp) / 'telemetry.csv')
        json_path = write_json(report.to_dict(), Path(tmp) / 'report.json')
        with open(json_path, encoding='utf-8') as f:
            stored = json.load(f)
        derived = derive_from_csv(csv_path, scenario.config.targets, scenario.config.ball_radius)
    result.checks += 1
    for mismatch in compare_with_report(derived, stored):
        result.fail(mismatch)
    return result


def stress(n_layouts: int = 50, horizon: float = 3.0, dt: float = 1e-2) -> SuiteResult:
    """Seeded random layouts under the QP controller stay violation-free"""
    result = SuiteResult("forward invariance stress")
    for seed in range(n_layouts):
        cfg = random_layout(seed)
        scenario = build_scenario(cfg)
        sim = SimConfig(dt=dt, horizon=horizon, delta=cfg.delta, stride=10)
        telemetry = run(scenario.model, QPSafetyController(scenario.problem), scenario.xi, sim)
        safety = safety_metrics(telemetry.frame)
        result.checks += 1
        if telemetry.status is RunStatus.SAFETY_VIOLATION or safety['violation']:
            result.fail(f"seed {seed}: {'; '.join(telemetry.events)}; state "
                        f"{np.array2string(telemetry.final_state.head, precision=6)}")
        elif safety['min_h'] is not None:
            result.track(-safety['min_h'])
    return result


# Full-size arguments per suite; quick runs use the reduced set
SUITES: Dict[str, Callable[..., SuiteResult]] = {
    'sontag': sontag_identity,
    'dissipation': clf_residual,
    'qp': qp_oracle,
    'sliding': sliding_identities,
    'small-gain': small_gain,
    'integrator': integrator,
    'continuity': continuity,
    'telemetry': telemetry_rederivation,
    'stress': stress,
    'acceptance': acceptance,
}

QUICK_ARGS: Dict[str, Dict] = {
    'sontag': {'n_samples': 2000},
    'dissipation': {'n_samples': 50},
    'qp': {'n_samples': 60},
    'sliding': {'n_samples': 50, 'horizon': 0.3},
    'integrator': {},
    'telemetry': {'horizon': 0.5},
    'stress': {'n_layouts': 3, 'horizon': 1.0},
    'acceptance': {'horizon': 1.0, 'dt': 1e-2, 'require_arrival': False},
}


def run_selftest(names: Optional[List[str]] = None, quick: bool = False) -> List[SuiteResult]:
    """Run the named suites (all by default) and print one line per suite"""
    names = list(SUITES) if names is None else names
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s): {', '.join(unknown)}")

    print(f"🚀 Running {len(names)} oracle suite(s){' (quick)' if quick else ''}")
    results = []
    for name in names:
        kwargs = QUICK_ARGS.get(name, {}) if quick else {}
        start_time = time.time()
        try:
            result = SUITES[name](**kwargs)
        except Exception as e:
            result = SuiteResult(name)
            result.fail(f"{type(e).__name__}: {e}")
        result.elapsed = time.time() - start_time
        results.append(result)

        status = "✅" if result.passed else "❌"
        worst = "" if result.worst is None else f", worst {result.worst:.3g}"
        print(f"  {status} {result.name}: {result.checks} checks{worst} ({result.elapsed:.1f}s)")
        for detail in result.details[:5]:
            print(f"      Error: {detail}")
        if len(result.details) > 5:
            print(f"      ... {len(result.details) - 5} more")

    passed = sum(1 for r in results if r.passed)
    print(f"📊 {passed}/{len(results)} suites passed")
    return results
