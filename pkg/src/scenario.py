# File: src/scenario.py

"""Reach-avoid scenario: delay-coupled omnidirectional robots among circular obstacles"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .controllers import get_controller
from .controllers.base import BaseController, ControlProblem
from .delay import HistoryBuffer, SubsystemLayout
from .functionals import aggregate_h, obstacle_h, pairwise_h, quadratic_mclf, reciprocal_barrier
from .models import (
    ConfigError,
    ControllerKind,
    DelayPlacement,
    GainGraph,
    Interpolation,
    SlidingSurfaceSpec,
)
from .simulator import SystemModel

ROBOT_DIM = 3
Position = Tuple[float, float]


@dataclass(frozen=True)
class RobotParams:
    """Wheel and body geometry of one robot plus its coupling constants"""
    wheel_radius: float = 0.02
    body_radius: float = 0.2
    coupling_gain: float = 0.1
    softening: float = 1e-2

    def __post_init__(self):
        for name in ('wheel_radius', 'body_radius', 'coupling_gain', 'softening'):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if abs(np.linalg.det(self.J)) < 1e-12:
            raise ValueError("wheel geometry matrix is singular")

    @cached_property
    def J(self) -> np.ndarray:
        c, s, L = np.cos(np.pi / 6), np.sin(np.pi / 6), self.body_radius
        return np.array([[0.0, c, -c],
                         [-1.0, s, s],
                         [L, L, L]])

    @cached_property
    def wheel_map(self) -> np.ndarray:
        """J^{-T} scaled by the wheel radius"""
        return np.linalg.inv(self.J).T * self.wheel_radius


@dataclass(frozen=True)
class Obstacle:
    center: Position
    radius: float

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("obstacle radius must be positive")

    def clearance(self, point) -> float:
        return float(np.linalg.norm(np.asarray(point, dtype=float) - np.asarray(self.center)) - self.radius)


@dataclass(frozen=True)
class QPSettings:
    delta_margin: float = 1e-6
    tol: float = 1e-9
    aggregate_barriers: bool = False


@dataclass(frozen=True)
class SlidingSettings:
    barrier_weight: float = 0.5
    gain: float = 5.0
    smoothing: float = 1e-2
    g_tol: float = 1e-9
    g_floor: float = 1e-3


DEFAULT_STARTS = ((-2.0, -2.0), (2.0, -2.0), (2.0, 2.0), (-2.0, 2.0))
DEFAULT_TARGETS = ((2.0, 2.0), (-2.0, 2.0), (-2.0, -2.0), (2.0, -2.0))
DEFAULT_OBSTACLES = (
    Obstacle((0.15, 0.0), 0.3),
    Obstacle((-1.1, -0.9), 0.3),
    Obstacle((1.1, 0.9), 0.3),
    Obstacle((0.9, -1.1), 0.3),
    Obstacle((-0.9, 1.1), 0.3),
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, functionals and gains of a reach-avoid run"""
    starts: Tuple[Position, ...] = DEFAULT_STARTS
    targets: Tuple[Position, ...] = DEFAULT_TARGETS
    headings: Optional[Tuple[float, ...]] = None
    obstacles: Tuple[Obstacle, ...] = DEFAULT_OBSTACLES
    sigma: Tuple[float, ...] = (0.1, 0.1, 0.15, 0.05)
    P: Tuple[Tuple[float, ...], ...] = ((1.0, 0.0), (0.0, 1.0))
    Q: Tuple[Tuple[float, ...], ...] = ((1.0, 0.0), (0.0, 1.0))
    rho_bar: float = 1.0
    gamma_bar: float = 0.2
    eta_bar: float = 1.0
    chi_bar: float = 0.2
    delta: float = 0.5
    robot: RobotParams = field(default_factory=RobotParams)
    delay_placement: DelayPlacement = DelayPlacement.MIXED
    pairwise_clearance: Optional[float] = None
    ball_radius: float = 0.05
    history_samples: int = 2
    interpolation: Interpolation = Interpolation.CUBIC_HERMITE
    qp: QPSettings = field(default_factory=QPSettings)
    sliding: SlidingSettings = field(default_factory=SlidingSettings)

    @property
    def p(self) -> int:
        return len(self.starts)

    def covered_targets(self) -> List[int]:
        """Robots, numbered from 1, whose target lies inside an obstacle"""
        return [i + 1 for i, q in enumerate(self.targets)
                if any(ob.clearance(q) <= 0.0 for ob in self.obstacles)]

    def validate(self, strict: bool = True):
        """Raise ConfigError when the scenario violates its preconditions

        ``strict=False`` allows targets inside obstacles, for forced-conflict runs.
        """
        p = self.p
        if p == 0:
            raise ConfigError("at least one robot is required")
        if len(self.targets) != p or len(self.sigma) != p:
            raise ConfigError(f"starts, targets and sigma must all have {p} entries")
        if self.headings is not None and len(self.headings) != p:
            raise ConfigError(f"headings must have {p} entries")
        if not self.delta > 0.0:
            raise ConfigError("delta must be positive")
        if any(s <= 0.0 for s in self.sigma):
            raise ConfigError("sigma entries must be positive")
        for name in ('P', 'Q'):
            matrix = np.asarray(getattr(self, name), dtype=float)
            if (matrix.shape != (2, 2) or not np.allclose(matrix, matrix.T)
                    or np.min(np.linalg.eigvalsh(matrix)) <= 0.0):
                raise ConfigError(f"{name} must be a symmetric positive definite 2x2 matrix")
        if self.rho_bar <= 0.0 or self.eta_bar <= 0.0 or self.gamma_bar < 0.0 or self.chi_bar < 0.0:
            raise ConfigError("gains must satisfy rho, eta > 0 and gamma, chi >= 0")
        if self.pairwise_clearance is not None and not self.pairwise_clearance > 0.0:
            raise ConfigError("pairwise_clearance must be positive")
        for i, start in enumerate(self.starts):
            for k, obstacle in enumerate(self.obstacles):
                if obstacle.clearance(start) <= 0.0:
                    raise ConfigError(f"robot {i + 1} starts inside obstacle {k + 1}")
                if strict and obstacle.clearance(self.targets[i]) <= 0.0:
                    raise ConfigError(f"robot {i + 1} target lies inside obstacle {k + 1}")
        if self.pairwise_clearance is not None:
            for i in range(p):
                for j in range(i + 1, p):
                    gap = np.linalg.norm(np.subtract(self.starts[i], self.starts[j]))
                    if gap <= self.pairwise_clearance:
                        raise ConfigError(f"robots {i + 1} and {j + 1} start closer than the clearance")


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def robot_input_map(x_i3: float, params: RobotParams) -> np.ndarray:
    """Matrix multiplying the wheel speeds: rotation(x_i3) J^{-T} R"""
    return rotation(x_i3) @ params.wheel_map


ParamsArg = Union[RobotParams, Sequence[RobotParams]]


def _per_robot(params: ParamsArg, p: int) -> List[RobotParams]:
    if isinstance(params, RobotParams):
        return [params] * p
    params = list(params)
    if len(params) != p:
        raise ValueError(f"expected parameters for {p} robots, got {len(params)}")
    return params


def robot_drift(phi: HistoryBuffer, params: ParamsArg,
                placement: DelayPlacement = DelayPlacement.MIXED) -> np.ndarray:
    """f_il = sum_j k_i (x_il - x_jl) / (|p_i - p_j| + eps_i) on the planar components

    MIXED reads the robot's own state at offset 0 and its neighbours at -delta.
    """
    if phi.dim % ROBOT_DIM:
        raise ValueError(f"state dimension {phi.dim} is not a multiple of {ROBOT_DIM}")
    p = phi.dim // ROBOT_DIM
    robots = _per_robot(params, p)
    now = phi.head.reshape(p, ROBOT_DIM)[:, :2]
    past = now if placement is DelayPlacement.CURRENT else phi.query(-phi.delta).reshape(p, ROBOT_DIM)[:, :2]
    own = past if placement is DelayPlacement.DELAYED else now

    f = np.zeros((p, ROBOT_DIM))
    for i in range(p):
        diff = own[i] - np.delete(past, i, axis=0)
        dist = np.linalg.norm(diff, axis=1)
        f[i, :2] = robots[i].coupling_gain * np.sum(diff / (dist + robots[i].softening)[:, None], axis=0)
    return f.ravel()


@dataclass
class Scenario:
    """Assembled model, functionals and controller factory of one configuration"""
    config: ScenarioConfig
    layout: SubsystemLayout
    model: SystemModel
    problem: ControlProblem
    sliding_specs: List[SlidingSurfaceSpec]
    xi: HistoryBuffer
    _controllers: Dict[ControllerKind, BaseController] = field(default_factory=dict, repr=False)

    @property
    def targets(self) -> np.ndarray:
        return np.asarray(self.config.targets, dtype=float)

    def controller(self, kind: Union[ControllerKind, str]) -> BaseController:
        """Controller stack for ``kind``, built once per scenario"""
        kind = ControllerKind(kind)
        if kind not in self._controllers:
            self._controllers[kind] = get_controller(kind, self)
        return self._controllers[kind]

    def history_at(self, head) -> HistoryBuffer:
        """Constant history at the stacked state ``head``"""
        return constant_history(self.config, head)


def constant_history(cfg: ScenarioConfig, head) -> HistoryBuffer:
    return HistoryBuffer.constant(cfg.delta, head, cfg.history_samples, cfg.interpolation)


def initial_head(cfg: ScenarioConfig) -> np.ndarray:
    return _stacked(cfg, cfg.starts)


def target_head(cfg: ScenarioConfig) -> np.ndarray:
    """Every robot at its target with its initial heading"""
    return _stacked(cfg, cfg.targets)


def _stacked(cfg: ScenarioConfig, positions) -> np.ndarray:
    headings = cfg.headings or (0.0,) * cfg.p
    return np.array([[x, y, th] for (x, y), th in zip(positions, headings)], dtype=float).ravel()


def surface_anchor(weight: float, safe_sets, barriers, phi: HistoryBuffer) -> Tuple[float, np.ndarray]:
    """Weighted barrier sum and its head-state gradient at ``phi``

    Only safe sets that contain the point contribute.
    """
    offset = 0.0
    gradient = np.zeros(phi.dim)
    if weight == 0.0:
        return offset, gradient
    for h, barrier in zip(safe_sets, barriers):
        if h.eval_h(phi) > 0.0:
            offset += weight * barrier.value(phi)
            gradient += weight * np.asarray(barrier.grad_V1(phi.head), dtype=float)
    return offset, gradient
    for h, barrier in zip(safe_sets, barriers):
        if h.eval_h(phi) > 0.0:
            offset += weight * barrier.value(phi)
    return offset


def build_safe_sets(cfg: ScenarioConfig, layout: SubsystemLayout):
    safe_sets = []
    for i in range(cfg.p):
        position = slice(layout.offsets[i], layout.offsets[i] + 2)
        hs = [obstacle_h(ob.center, ob.radius, position, label=f"r{i + 1}-o{k + 1}")
              for k, ob in enumerate(cfg.obstacles)]
        if cfg.qp.aggregate_barriers and hs:
            hs = [aggregate_h(hs, label=f"r{i + 1}-obstacles")]
        safe_sets.append(hs)
    if cfg.pairwise_clearance is not None:
        for i, j in sorted(layout.edges):
            h = pairwise_h(i, j, cfg.pairwise_clearance, layout)
            safe_sets[i].append(h)
            safe_sets[j].append(h)
    return safe_sets


def build_scenario(cfg: ScenarioConfig, strict: bool = True) -> Scenario:
    """Model, Lyapunov and barrier functionals, gains and the initial history"""
    cfg.validate(strict=strict)
    p = cfg.p
    layout = SubsystemLayout.complete([ROBOT_DIM] * p)
    robots = [cfg.robot] * p

    def drift(phi: HistoryBuffer) -> np.ndarray:
        return robot_drift(phi, robots, cfg.delay_placement)

    def input_map(phi: HistoryBuffer, i: int) -> np.ndarray:
        return robot_input_map(phi.head[layout.offsets[i] + 2], robots[i])

    model = SystemModel(layout=layout, drift=drift, input_map=input_map, input_dims=(ROBOT_DIM,) * p)
    mclfs = [quadratic_mclf(cfg.P, cfg.Q, cfg.sigma[i], cfg.targets[i], label=f"V{i + 1}")
             for i in range(p)]
    safe_sets = build_safe_sets(cfg, layout)
    problem = ControlProblem(
        model=model,
        mclfs=mclfs,
        gains=GainGraph.uniform(p, cfg.rho_bar, cfg.gamma_bar),
        barrier_gains=GainGraph.uniform(p, cfg.eta_bar, cfg.chi_bar),
        safe_sets=safe_sets,
        barriers=[[reciprocal_barrier(h) for h in hs] for hs in safe_sets],
    )
    sliding = cfg.sliding
    at_targets = constant_history(cfg, target_head(cfg))
    specs = []
    for hs, bs in zip(safe_sets, problem.barriers):
        offset, gradient = surface_anchor(sliding.barrier_weight, hs, bs, at_targets)
        specs.append(SlidingSurfaceSpec(
            weights=(sliding.barrier_weight,) * len(hs), gain=sliding.gain,
            smoothing=sliding.smoothing, g_tol=sliding.g_tol, g_floor=sliding.g_floor,
            offset=offset, anchor=tuple(at_targets.head), anchor_gradient=tuple(gradient)))
    xi = constant_history(cfg, initial_head(cfg))
    return Scenario(config=cfg, layout=layout, model=model, problem=problem,
                    sliding_specs=specs, xi=xi)


def random_layout(seed: int, base: Optional[ScenarioConfig] = None, n_obstacles: int = 5,
                  extent: float = 2.5, margin: float = 0.3, max_tries: int = 10000) -> ScenarioConfig:
    """Seeded start/target/obstacle layout that satisfies the scenario preconditions

    Obstacles keep ``margin`` of free space to each other and to every start
    and target; starts are at least 1 m apart.
    """
    base = base or ScenarioConfig()
    rng = np.random.default_rng(seed)
    p = base.p

    obstacles: List[Obstacle] = []
    tries = 0
    while len(obstacles) < n_obstacles:
        tries += 1
        if tries > max_tries:
            raise ConfigError(f"could not place {n_obstacles} obstacles for seed {seed}")
        candidate = Obstacle(tuple(rng.uniform(-0.6 * extent, 0.6 * extent, 2)), float(rng.uniform(0.2, 0.35)))
        if all(np.linalg.norm(np.subtract(candidate.center, ob.center)) > candidate.radius + ob.radius + margin
               for ob in obstacles):
            obstacles.append(candidate)

    def free(point, taken) -> bool:
        return (all(ob.clearance(point) > margin for ob in obstacles)
                and all(np.linalg.norm(np.subtract(point, q)) > 1.0 for q in taken))

    def draw(taken) -> Position:
        for _ in range(max_tries):
            point = tuple(float(v) for v in rng.uniform(-extent, extent, 2))
            if free(point, taken):
                return point
        raise ConfigError(f"could not place a free point for seed {seed}")

    starts: List[Position] = []
    targets: List[Position] = []
    for _ in range(p):
        starts.append(draw(starts))
        targets.append(draw(targets))
    cfg = replace(base, starts=tuple(starts), targets=tuple(targets), obstacles=tuple(obstacles))
    cfg.validate()
    return cfg


def lipschitz_probe(params: ParamsArg, p: int = 4, delta: float = 0.5, n_pairs: int = 1000,
                    radius: float = 3.0, perturbation: float = 1e-3, n_samples: int = 11,
                    placement: DelayPlacement = DelayPlacement.MIXED, seed: int = 0) -> float:
    """Largest observed |f(phi) - f(phi')| / |phi - phi'|_sup over random nearby pairs in a ball"""
    rng = np.random.default_rng(seed)
    offsets = np.linspace(-delta, 0.0, n_samples)
    n = p * ROBOT_DIM
    worst = 0.0
    for _ in range(n_pairs):
        states = rng.uniform(-radius, radius, (n_samples, n)) / np.sqrt(n)
        shifted = states + rng.uniform(-perturbation, perturbation, states.shape)
        phi = HistoryBuffer(delta, offsets, states, Interpolation.LINEAR)
        phi_b = HistoryBuffer(delta, offsets, shifted, Interpolation.LINEAR)
        gap = float(np.max(np.linalg.norm(states - shifted, axis=1)))
        change = float(np.linalg.norm(robot_drift(phi, params, placement) - robot_drift(phi_b, params, placement)))
        worst = max(worst, change / gap)
    return worst
