# File: config/settings.py

"""Configuration management for the delayguard control stack"""

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.models import ConfigError, ControllerKind, DelayPlacement, Interpolation
from src.scenario import Obstacle, QPSettings, RobotParams, ScenarioConfig, SlidingSettings
from src.simulator import SimConfig

DEFAULT_CONFIG_PATH = Path(__file__).with_name("default.toml")
THREADS_ENV = "DELAYGUARD_THREADS"

_SECTIONS = {'scenario', 'gains', 'qp', 'sliding', 'simulation'}
_SCENARIO_KEYS = {'delta', 'sigma', 'P', 'Q', 'starts', 'targets', 'headings', 'delay_placement',
                  'pairwise_clearance', 'ball_radius', 'history_samples', 'interpolation',
                  'robot', 'obstacles'}
_ROBOT_KEYS = {'wheel_radius', 'body_radius', 'coupling_gain', 'softening'}
_OBSTACLE_KEYS = {'center', 'radius'}
_GAIN_KEYS = {'rho_bar', 'gamma_bar', 'eta_bar', 'chi_bar'}
_QP_KEYS = {'delta_margin', 'tol', 'aggregate_barriers'}
_SLIDING_KEYS = {'barrier_weight', 'gain', 'smoothing', 'g_tol', 'g_floor'}
_SIMULATION_KEYS = {'dt', 'horizon', 'stride', 'threads', 'controller'}


@dataclass
class Config:
    """Application configuration"""
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    simulation: SimConfig = field(default_factory=SimConfig)
    controller: ControllerKind = ControllerKind.QP
    source: Optional[str] = None


def _check_keys(table: Dict[str, Any], allowed: set, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _pairs(values, where: str):
    try:
        pairs = tuple((float(x), float(y)) for x, y in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a list of [x, y] pairs") from None
    return pairs


def _matrix(values, where: str):
    try:
        return tuple(tuple(float(v) for v in row) for row in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a list of numeric rows") from None


def _enum(enum_cls, value, where: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ', '.join(e.value for e in enum_cls)
        raise ConfigError(f"{where} must be one of: {choices}") from None


def parse_config(data: Dict[str, Any], source: Optional[str] = None) -> Config:
    """Build a Config from parsed TOML; every key is optional, unknown keys are errors"""
    _check_keys(data, _SECTIONS, 'root')
    scenario_table = dict(data.get('scenario', {}))
    _check_keys(scenario_table, _SCENARIO_KEYS, 'scenario')
    gains = data.get('gains', {})
    _check_keys(gains, _GAIN_KEYS, 'gains')
    qp = data.get('qp', {})
    _check_keys(qp, _QP_KEYS, 'qp')
    sliding = data.get('sliding', {})
    _check_keys(sliding, _SLIDING_KEYS, 'sliding')
    simulation = data.get('simulation', {})
    _check_keys(simulation, _SIMULATION_KEYS, 'simulation')

    try:
        overrides: Dict[str, Any] = {}
        robot = scenario_table.pop('robot', None)
        if robot is not None:
            _check_keys(robot, _ROBOT_KEYS, 'scenario.robot')
            overrides['robot'] = RobotParams(**{k: float(v) for k, v in robot.items()})
        obstacles = scenario_table.pop('obstacles', None)
        if obstacles is not None:
            parsed = []
            for k, entry in enumerate(obstacles):
                _check_keys(entry, _OBSTACLE_KEYS, f'scenario.obstacles[{k}]')
                if set(entry) != _OBSTACLE_KEYS:
                    raise ConfigError(f"scenario.obstacles[{k}] needs both center and radius")
                (cx, cy), = _pairs([entry['center']], f'scenario.obstacles[{k}].center')
                parsed.append(Obstacle((cx, cy), float(entry['radius'])))
            overrides['obstacles'] = tuple(parsed)
        for key in ('starts', 'targets'):
            if key in scenario_table:
                overrides[key] = _pairs(scenario_table.pop(key), f'scenario.{key}')
        for key in ('P', 'Q'):
            if key in scenario_table:
                overrides[key] = _matrix(scenario_table.pop(key), f'scenario.{key}')
        if 'sigma' in scenario_table:
            overrides['sigma'] = tuple(float(s) for s in scenario_table.pop('sigma'))
        if 'headings' in scenario_table:
            overrides['headings'] = tuple(float(h) for h in scenario_table.pop('headings'))
        if 'delay_placement' in scenario_table:
            overrides['delay_placement'] = _enum(DelayPlacement, scenario_table.pop('delay_placement'),
                                                 'scenario.delay_placement')
        if 'interpolation' in scenario_table:
            overrides['interpolation'] = _enum(Interpolation, scenario_table.pop('interpolation'),
                                               'scenario.interpolation')
        if 'history_samples' in scenario_table:
            overrides['history_samples'] = int(scenario_table.pop('history_samples'))
        for key, value in scenario_table.items():
            overrides[key] = float(value)
        overrides.update({k: float(v) for k, v in gains.items()})
        overrides['qp'] = QPSettings(**{k: (bool(v) if k == 'aggregate_barriers' else float(v))
                                        for k, v in qp.items()})
        overrides['sliding'] = SlidingSettings(**{k: float(v) for k, v in sliding.items()})
        scenario = replace(ScenarioConfig(), **overrides)

        sim_values = {k: v for k, v in simulation.items() if k != 'controller'}
        sim = SimConfig(
            dt=float(sim_values.get('dt', SimConfig.dt)),
            horizon=float(sim_values.get('horizon', SimConfig.horizon)),
            stride=int(sim_values.get('stride', SimConfig.stride)),
            threads=int(sim_values.get('threads', SimConfig.threads)),
            delta=scenario.delta,
            interpolation=scenario.interpolation,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None

    controller = _enum(ControllerKind, simulation.get('controller', ControllerKind.QP.value),
                       'simulation.controller')
    scenario.validate(strict=False)
    return Config(scenario=scenario, simulation=sim, controller=controller, source=source)


def load_config(path: Union[str, Path, None] = None) -> Config:
    """Read a TOML configuration file; the bundled default when ``path`` is None"""
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        with open(path, 'rb') as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(data, source=str(path))


def setup_environment(config_path: Union[str, Path, None] = None, threads: Optional[int] = None) -> Config:
    """Load and validate the configuration and apply environment overrides"""
    config = load_config(config_path)

    raw = os.environ.get(THREADS_ENV) if threads is None else str(threads)
    if raw:
        try:
            count = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'") from None
        if count < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
        config.simulation = replace(config.simulation, threads=count)
        print(f"✅ Worker threads capped at {count}")

    scenario = config.scenario
    print(f"✅ Configuration loaded from {config.source}")
    print(f"   {scenario.p} robots, {len(scenario.obstacles)} obstacles, delay {scenario.delta:g} s, "
          f"dt {config.simulation.dt:g} s, horizon {config.simulation.horizon:g} s")
    if scenario.pairwise_clearance is None:
        print("⚠️ Pairwise collision barriers disabled")
    for robot in scenario.covered_targets():
        print(f"⚠️ Target of robot {robot} lies inside an obstacle")
    return config


# Global config instance
_config: Optional[Config] = None


def get_config() -> Config:
    """Get the global configuration instance"""
    global _config
    if _config is None:
        raise RuntimeError("Configuration not initialized. Run setup_environment() first.")
    return _config


def set_config(config: Config):
    """Set the global configuration instance"""
    global _config
    _config = config
