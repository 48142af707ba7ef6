# File: tests/test_scenario.py

"""Tests for the multi-robot reach-avoid scenario"""

from dataclasses import replace

import numpy as np
import pytest
from src.delay import HistoryBuffer
from src.models import ConfigError, ControllerKind, DelayPlacement, Interpolation
from src.scenario import (
    Obstacle,
    QPSettings,
    RobotParams,
    ScenarioConfig,
    build_scenario,
    initial_head,
    lipschitz_probe,
    random_layout,
    robot_drift,
    robot_input_map,
    rotation,
    surface_anchor,
    target_head,
)

class TestRobotKinematics:
    """Test the omnidirectional robot model"""

    def test_wheel_geometry(self):
        """Test that J J' is diagonal for three wheels at 120 degrees"""
        params = RobotParams()
        np.testing.assert_allclose(params.J @ params.J.T, np.diag([1.5, 1.5, 0.12]), atol=1e-12)
        np.testing.assert_allclose(params.wheel_map, np.linalg.inv(params.J).T * 0.02)

    def test_input_map(self):
        """Test the rotation of the wheel map by the heading"""
        params = RobotParams()
        np.testing.assert_allclose(robot_input_map(0.0, params), params.wheel_map)
        np.testing.assert_allclose(robot_input_map(np.pi / 2, params), rotation(np.pi / 2) @ params.wheel_map)
        np.testing.assert_allclose(rotation(np.pi / 2)[:2, :2], [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)

    def test_invalid_params(self):
        """Test rejection of non-positive geometry"""
        with pytest.raises(ValueError):
            RobotParams(wheel_radius=0.0)
        with pytest.raises(ValueError):
            RobotParams(softening=-1.0)

    def test_coupling_drift(self):
        """Test the softened repulsion between two robots"""
        phi = HistoryBuffer.constant(0.5, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        f = robot_drift(phi, RobotParams())

        np.testing.assert_allclose(f, [-0.1 / 1.01, 0.0, 0.0, 0.1 / 1.01, 0.0, 0.0])

    def test_delay_placement(self):
        """Test which samples the coupling reads"""
        # Robot 2 was at x = 2 half a second ago and is at x = 1 now
        phi = HistoryBuffer(0.5, np.array([-0.5, 0.0]),
                            np.array([[0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
                                      [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]]), Interpolation.LINEAR)
        params = RobotParams()

        mixed = robot_drift(phi, params, DelayPlacement.MIXED)
        current = robot_drift(phi, params, DelayPlacement.CURRENT)
        delayed = robot_drift(phi, params, DelayPlacement.DELAYED)

        assert mixed[0] == pytest.approx(-0.1 * 2.0 / 2.01)
        assert current[0] == pytest.approx(-0.1 / 1.01)
        assert delayed[0] == pytest.approx(-0.1 * 2.0 / 2.01)
        # Robot 2's own position differs between mixed and delayed readings
        assert mixed[3] == pytest.approx(0.1 / 1.01)
        assert delayed[3] == pytest.approx(0.1 * 2.0 / 2.01)

    def test_lipschitz_probe(self):
        """Test that the drift has a finite local Lipschitz estimate"""
        estimate = lipschitz_probe(RobotParams(), n_pairs=50, seed=1)
        assert np.isfinite(estimate)
        assert estimate > 0.0

class TestScenarioConfig:
    """Test scenario preconditions"""

    def test_default_is_valid(self):
        """Test the default geometry"""
        cfg = ScenarioConfig()
        cfg.validate()
        assert cfg.p == 4
        assert cfg.covered_targets() == []

    def test_start_inside_obstacle(self):
        """Test that a start inside an obstacle is rejected"""
        cfg = replace(ScenarioConfig(), obstacles=(Obstacle((-2.0, -2.0), 0.3),))
        with pytest.raises(ConfigError):
            cfg.validate(strict=False)

    def test_covered_target(self):
        """Test strict and lenient handling of a target inside an obstacle"""
        targets = ((1.5, 1.5),) + ScenarioConfig().targets[1:]
        cfg = replace(ScenarioConfig(), targets=targets, obstacles=(Obstacle((1.5, 1.5), 0.2),))
        assert cfg.covered_targets() == [1]
        with pytest.raises(ConfigError):
            cfg.validate()
        cfg.validate(strict=False)

    def test_length_mismatch(self):
        """Test that per-robot lists must agree"""
        with pytest.raises(ConfigError):
            replace(ScenarioConfig(), sigma=(0.1, 0.1)).validate()
        with pytest.raises(ConfigError):
            replace(ScenarioConfig(), headings=(0.0,)).validate()

    def test_invalid_values(self):
        """Test matrix, gain and clearance checks"""
        with pytest.raises(ConfigError):
            replace(ScenarioConfig(), P=((1.0, 0.0), (0.0, -1.0))).validate()
        with pytest.raises(ConfigError):
            replace(ScenarioConfig(), rho_bar=0.0).validate()
        with pytest.raises(ConfigError):
            replace(ScenarioConfig(), delta=0.0).validate()
        with pytest.raises(ConfigError):
            replace(ScenarioConfig(), pairwise_clearance=10.0).validate()

class TestBuildScenario:
    """Test scenario assembly"""

    def test_default_scenario(self):
        """Test layout, safe sets and initial history"""
        scenario = build_scenario(ScenarioConfig())

        assert scenario.layout.p == 4
        assert scenario.layout.n == 12
        assert [h.label for h in scenario.problem.safe_sets[0]] == [f"r1-o{k}" for k in range(1, 6)]
        assert len(scenario.sliding_specs[2].weights) == 5
        np.testing.assert_allclose(scenario.xi.head[:3], [-2.0, -2.0, 0.0])
        np.testing.assert_allclose(scenario.targets[3], [2.0, -2.0])

        margins = scenario.problem.margins(scenario.xi)
        assert np.all(margins > 0.0)
        assert scenario.problem.lyapunov_values(scenario.xi)[0] == pytest.approx(32.0 * 1.05)

    def test_pairwise_and_aggregate(self):
        """Test robot-robot barriers and the single aggregated obstacle row"""
        pairwise = build_scenario(replace(ScenarioConfig(), pairwise_clearance=0.3))
        assert len(pairwise.problem.safe_sets[0]) == 8
        assert "pair(0,1)" in [h.label for h in pairwise.problem.safe_sets[1]]

        aggregated = build_scenario(replace(ScenarioConfig(), qp=QPSettings(aggregate_barriers=True)))
        assert [h.label for h in aggregated.problem.safe_sets[0]] == ["r1-obstacles"]

    def test_controller_cache(self):
        """Test that each controller is built once per scenario"""
        scenario = build_scenario(ScenarioConfig())
        assert scenario.controller('qp') is scenario.controller(ControllerKind.QP)

    def test_history_at(self):
        """Test constant histories at a given stacked state"""
        scenario = build_scenario(ScenarioConfig())
        phi = scenario.history_at(np.arange(12.0))
        assert phi.delta == 0.5
        np.testing.assert_allclose(phi.query(-0.5), np.arange(12.0))

    def test_target_head(self):
        """Test the stacked target state keeps the initial headings"""
        cfg = ScenarioConfig()
        head = target_head(cfg)
        assert head.shape == (12,)
        np.testing.assert_allclose(head[0::3], [q[0] for q in cfg.targets])
        np.testing.assert_allclose(head[1::3], [q[1] for q in cfg.targets])
        np.testing.assert_allclose(initial_head(cfg)[2::3], head[2::3])

    def test_sliding_specs_anchored_at_targets(self):
        """Test that every surface carries the stacked target state"""
        scenario = build_scenario(ScenarioConfig())
        for spec in scenario.sliding_specs:
            np.testing.assert_allclose(spec.anchor, target_head(scenario.config))
            assert spec.offset > 0.0

    def test_surface_anchor_skips_covering_obstacle(self):
        """Test that an obstacle over the target adds neither offset nor gradient"""
        cfg = ScenarioConfig(starts=((-1.0, 0.0),), targets=((0.15, 0.0),), sigma=(0.1,),
                             obstacles=(Obstacle((0.0, 0.0), 0.3), Obstacle((1.0, 1.0), 0.2)))
        scenario = build_scenario(cfg, strict=False)
        phi = scenario.history_at(target_head(cfg))
        hs, bs = scenario.problem.safe_sets[0], scenario.problem.barriers[0]

        offset, gradient = surface_anchor(0.5, hs, bs, phi)

        assert offset == pytest.approx(0.5 * bs[1].value(phi))
        np.testing.assert_allclose(gradient, 0.5 * np.asarray(bs[1].grad_V1(phi.head)))
        assert surface_anchor(0.0, hs, bs, phi)[0] == 0.0

class TestRandomLayout:
    """Test seeded random layouts"""

    def test_layout_is_valid_and_seeded(self):
        """Test preconditions and reproducibility"""
        first = random_layout(3)
        first.validate()
        assert first == random_layout(3)
        assert first != random_layout(4)
        assert len(first.obstacles) == 5
        assert first.p == 4
