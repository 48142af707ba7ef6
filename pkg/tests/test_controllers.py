# File: tests/test_controllers.py

"""Tests for the control synthesis engines"""

from dataclasses import replace

import numpy as np
import pytest
from src.controllers import (
    QPSafetyController,
    SlidingModeController,
    SlidingTerms,
    StabilizerController,
    ZeroController,
    get_controller,
    sliding_control,
    sliding_terms,
    solve_safety_qp,
    sontag_control,
    surface_value,
    verify_surface_conditions,
)
from src.controllers.base import ControlProblem
from src.delay import HistoryBuffer, SubsystemLayout
from src.functionals import quadratic_mclf
from src.models import (
    AuditStatus,
    Branch,
    ControllerKind,
    DegenerateSurfaceError,
    GainGraph,
    SlidingSurfaceSpec,
)
from src.scenario import ScenarioConfig, SlidingSettings, build_scenario, target_head
from src.selftest import continuity, qp_oracle, sliding_identities, sontag_identity
from src.simulator import SystemModel


def scalar_problem(drift=1.0, input_gain=1.0):
    """x' = drift + input_gain * u with V = x^2 plus a history term"""
    layout = SubsystemLayout.complete([1])
    model = SystemModel(layout=layout,
                        drift=lambda phi: np.array([drift]),
                        input_map=lambda phi, i: np.array([[input_gain]]),
                        input_dims=(1,))
    mclf = quadratic_mclf([[1.0]], [[1.0]], 0.1, [0.0], label="V1")
    return ControlProblem(model=model, mclfs=[mclf], gains=GainGraph.uniform(1, 1.0, 0.0))

@pytest.fixture(scope="module")
def scenario():
    return build_scenario(ScenarioConfig())

class TestSontag:
    """Test the universal formula"""

    def test_closed_form(self):
        """Test a = -1, b = 1"""
        u = sontag_control(-1.0, [1.0])
        assert u[0] == pytest.approx(-(np.sqrt(2.0) - 1.0), abs=1e-12)
        assert -1.0 + u[0] == pytest.approx(-np.sqrt(2.0), abs=1e-12)

    def test_zero_b(self):
        """Test that b = 0 gives zero control"""
        np.testing.assert_array_equal(sontag_control(3.0, [0.0, 0.0]), [0.0, 0.0])

    def test_dissipation_identity(self):
        """Test a + b.u = -sqrt(a^2 + |b|^4) on random samples"""
        result = sontag_identity(n_samples=2000, seed=3)
        assert result.passed, result.details

    def test_stabilizer_branches(self):
        """Test the zero branch at the equilibrium and the Sontag branch elsewhere"""
        controller = StabilizerController(scalar_problem(drift=0.0))

        at_origin = controller.decide_one(HistoryBuffer.constant(0.5, [0.0]), 0)
        assert at_origin.branch is Branch.ZERO
        assert at_origin.u[0] == 0.0

        away = controller.decide_one(HistoryBuffer.constant(0.5, [1.0]), 0)
        assert away.branch is Branch.SONTAG
        assert away.u[0] < 0.0
        assert away.diagnostics['dissipation'] < 0.0

    def test_continuity_at_origin(self):
        """Test that the control shrinks with the state"""
        result = continuity()
        assert result.passed, result.details

class TestSafetyQP:
    """Test the minimum-deviation QP"""

    def test_feasible_nominal_unchanged(self):
        """Test that a feasible nominal control passes through"""
        decision = solve_safety_qp([0.5, -1.0], [(np.array([1.0, 0.0]), 1.0)])
        np.testing.assert_array_equal(decision.u, [0.5, -1.0])
        assert decision.branch is Branch.QP_INACTIVE
        assert decision.active_set == ()
        assert decision.margins[0][1] == pytest.approx(0.5)

    def test_two_active_rows(self):
        """Test u_nom = (1, 1) against x <= 0 and y <= 0"""
        rows = [(np.array([1.0, 0.0]), 0.0), (np.array([0.0, 1.0]), 0.0)]
        decision = solve_safety_qp([1.0, 1.0], rows, labels=["x", "y"])

        np.testing.assert_allclose(decision.u, [0.0, 0.0], atol=1e-12)
        assert decision.branch is Branch.QP_ACTIVE
        assert decision.active_set == (0, 1)
        assert decision.active_label == "0;1"
        assert [label for label, _ in decision.margins] == ["x", "y"]

    def test_single_row_projection(self):
        """Test the closed-form projection onto one half-plane"""
        decision = solve_safety_qp([1.0, 1.0], [(np.array([1.0, 2.0]), 1.0)])
        np.testing.assert_allclose(decision.u, [0.6, 0.2], atol=1e-12)

    def test_infeasible_rows_are_relaxed(self):
        """Test x <= -1 together with x >= 1"""
        rows = [(np.array([1.0]), -1.0), (np.array([-1.0]), -1.0)]
        decision = solve_safety_qp([0.0], rows)

        assert decision.infeasible
        assert decision.diagnostics['relaxation'] == pytest.approx(1.0, abs=1e-7)
        assert decision.u[0] == pytest.approx(0.0, abs=1e-7)

    def test_wrong_row_width(self):
        """Test that rows must match the control dimension"""
        with pytest.raises(ValueError):
            solve_safety_qp([0.0, 0.0], [(np.array([1.0, 0.0, 0.0]), 1.0)])

    def test_grid_oracle(self):
        """Test random instances against projections and grid minimizers"""
        result = qp_oracle(n_samples=40, seed=7)
        assert result.passed, result.details

    def test_controller_rows(self, scenario):
        """Test that the filtered scenario control satisfies every barrier row"""
        controller = QPSafetyController(scenario.problem)
        decisions = controller.decide_all(scenario.xi)

        assert len(decisions) == 4
        for i, decision in enumerate(decisions):
            labels = [label for label, _ in decision.margins]
            assert labels == [f"r{i + 1}-o{k}" for k in range(1, 6)]
            assert decision.diagnostics['barrier'] <= 1e-8
            assert decision.diagnostics['cross_terms'] == 0.0
            assert decision.diagnostics['dissipation'] < 0.0

    def test_input_maps_evaluated_once_per_snapshot(self, scenario, mocker):
        """Test that a filter decision reuses the snapshot's input maps"""
        problem = scenario.problem
        snap = problem.snapshot(scenario.xi)
        for i in range(problem.layout.p):
            np.testing.assert_array_equal(snap.g_vals[i], problem.model.g(scenario.xi, i))

        spy = mocker.spy(SystemModel, 'g')
        QPSafetyController(problem).decide(snap, 0)
        spy.assert_not_called()

    def test_obstacle_rows_not_coupled(self):
        """Test that chi leaves rows of unshared safe sets untouched"""
        coupled = build_scenario(ScenarioConfig())
        uncoupled = build_scenario(replace(ScenarioConfig(), chi_bar=0.0))
        snap = coupled.problem.snapshot(coupled.xi)
        for i in range(4):
            rows, _, _ = QPSafetyController(coupled.problem).barrier_rows(snap, i)
            reference, _, _ = QPSafetyController(uncoupled.problem).barrier_rows(snap, i)
            assert [rhs for _, rhs in rows] == [rhs for _, rhs in reference]

    def test_shared_rows_coupled(self):
        """Test that a pairwise safe set carries chi_ij times its own margin"""
        cfg = replace(ScenarioConfig(), pairwise_clearance=0.5)
        coupled = build_scenario(cfg)
        uncoupled = build_scenario(replace(cfg, chi_bar=0.0))
        snap = coupled.problem.snapshot(coupled.xi)
        rows, labels, _ = QPSafetyController(coupled.problem).barrier_rows(snap, 0)
        reference, _, _ = QPSafetyController(uncoupled.problem).barrier_rows(snap, 0)

        for h, label, (_, rhs), (_, ref) in zip(coupled.problem.safe_sets[0], labels, rows, reference):
            expected = 0.2 * h.eval_h(snap.phi) if label.startswith("pair") else 0.0
            assert ref - rhs == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert sum(label.startswith("pair") for label in labels) == 3

    def test_gap_between_obstacles_feasible(self, scenario):
        """Test the midpoint between two obstacles, where margins are small, stays feasible"""
        head = np.array(scenario.xi.head)
        head[0:2] = [0.625, 0.45]
        decision = QPSafetyController(scenario.problem).decide_one(scenario.history_at(head), 0)

        assert not decision.infeasible
        assert decision.diagnostics['barrier'] <= 1e-8

class TestSlidingMode:
    """Test the sliding-surface engine"""

    def test_scalar_terms(self):
        """Test f = g = 1 with V1 = x^2 at x = 1"""
        problem = scalar_problem()
        spec = SlidingSurfaceSpec(weights=())
        phi = HistoryBuffer.constant(0.5, [1.0])
        terms = sliding_terms(phi, problem.model, problem.mclfs[0], [], spec, 0)

        assert terms.U == pytest.approx(1.05)
        np.testing.assert_allclose(terms.H, [2.0])
        np.testing.assert_allclose(terms.G, [2.0])
        assert terms.F == pytest.approx(2.0)
        assert terms.L == pytest.approx(0.0)
        np.testing.assert_allclose(terms.J1, [[0.0]], atol=1e-15)
        np.testing.assert_allclose(terms.J2, [[0.5]])
        assert float(terms.H @ (terms.J1 + terms.J2) @ terms.H) == pytest.approx(terms.F)

    def test_surface_decay(self):
        """Test that the control makes U' = -K exactly"""
        problem = scalar_problem()
        spec = SlidingSurfaceSpec(weights=(), gain=5.0, smoothing=1e-2)
        phi = HistoryBuffer.constant(0.5, [1.0])
        terms = sliding_terms(phi, problem.model, problem.mclfs[0], [], spec, 0)
        decision = sliding_control(terms, spec)

        K = 5.0 * terms.U / (abs(terms.U) + 1e-2)
        assert decision.branch is Branch.SLIDING
        assert decision.diagnostics['K'] == pytest.approx(K)
        assert decision.diagnostics['W_dot'] == pytest.approx(-terms.U * K)
        assert decision.diagnostics['surface'] == pytest.approx(0.0, abs=1e-9)
        assert decision.diagnostics['capped'] == 0.0

    def test_degenerate_surface(self):
        """Test |G| = 0 at the minimum of V"""
        problem = scalar_problem()
        spec = SlidingSurfaceSpec(weights=())
        phi = HistoryBuffer.constant(0.5, [0.0])

        with pytest.raises(DegenerateSurfaceError):
            sliding_terms(phi, problem.model, problem.mclfs[0], [], spec, 0)

        decision = SlidingModeController(problem, [spec]).decide_one(phi, 0)
        assert decision.branch is Branch.ZERO
        assert decision.diagnostics['degenerate'] == 1.0

    def test_weight_count(self):
        """Test that one weight per barrier is required"""
        problem = scalar_problem()
        with pytest.raises(ValueError):
            SlidingModeController(problem, [SlidingSurfaceSpec(weights=(1.0,))])
        with pytest.raises(ValueError):
            SlidingSurfaceSpec(weights=(-1.0,))

    def test_surface_value_matches_terms(self, scenario):
        """Test U from the cheap evaluator against the full term assembly"""
        problem = scenario.problem
        spec = scenario.sliding_specs[0]
        terms = sliding_terms(scenario.xi, problem.model, problem.mclfs[0], problem.barriers[0], spec, 0)
        U = surface_value(scenario.xi, problem.layout, problem.mclfs[0], problem.barriers[0], spec, 0)
        assert U == pytest.approx(terms.U)

    def test_surface_vanishes_at_target(self, scenario):
        """Test U_i = 0 with robot i held at its target"""
        problem = scenario.problem
        head = target_head(scenario.config)
        phi = scenario.history_at(head)
        for i, spec in enumerate(scenario.sliding_specs):
            assert spec.offset > 0.0
            U = surface_value(phi, problem.layout, problem.mclfs[i], problem.barriers[i], spec, i)
            assert U == pytest.approx(0.0, abs=1e-12)

    def test_target_correction_terms(self, scenario):
        """Test that the target correction shifts U by its affine value and H by its gradient"""
        problem = scenario.problem
        spec = scenario.sliding_specs[1]
        plain = replace(spec, offset=0.0, anchor=None, anchor_gradient=None)
        corrected = sliding_terms(scenario.xi, problem.model, problem.mclfs[1], problem.barriers[1], spec, 1)
        reference = sliding_terms(scenario.xi, problem.model, problem.mclfs[1], problem.barriers[1], plain, 1)

        gradient = np.asarray(spec.anchor_gradient)
        shift = spec.offset + gradient @ (scenario.xi.head - np.asarray(spec.anchor))
        block = problem.layout.block(1)
        assert reference.U - corrected.U == pytest.approx(shift)
        np.testing.assert_allclose(corrected.H, reference.H - gradient[block])
        # obstacle barriers only see robot 1's own block
        assert corrected.L == pytest.approx(reference.L)

    def test_gradient_vanishes_at_target(self, scenario):
        """Test that the target is a degenerate point of every surface"""
        problem = scenario.problem
        phi = scenario.history_at(target_head(scenario.config))
        for i, spec in enumerate(scenario.sliding_specs):
            with pytest.raises(DegenerateSurfaceError):
                sliding_terms(phi, problem.model, problem.mclfs[i], problem.barriers[i], spec, i)

    def test_surface_positive_around_target(self, scenario):
        """Test U > 0 on a 5 cm circle around each target"""
        problem = scenario.problem
        target = target_head(scenario.config)
        for i, spec in enumerate(scenario.sliding_specs):
            start = problem.layout.offsets[i]
            for angle in np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False):
                head = target.copy()
                head[start:start + 2] += 0.05 * np.array([np.cos(angle), np.sin(angle)])
                phi = scenario.history_at(head)
                U = surface_value(phi, problem.layout, problem.mclfs[i], problem.barriers[i], spec, i)
                assert U > 0.0

    def test_anchor_pair_required(self):
        """Test that anchor and anchor_gradient come together"""
        with pytest.raises(ValueError):
            SlidingSurfaceSpec(weights=(), anchor=(0.0,))
        with pytest.raises(ValueError):
            SlidingSurfaceSpec(weights=(), anchor=(0.0,), anchor_gradient=(1.0, 2.0))

    def test_control_capped_near_degenerate_surface(self):
        """Test that |u| stays below (|H J2 H' + L| + gain) / g_floor as |G| shrinks"""
        spec = SlidingSurfaceSpec(weights=(), gain=5.0, smoothing=1e-2, g_floor=1e-3)
        terms = SlidingTerms(U=1.0, H=np.array([1e-5]), L=0.0, F=0.0, G=np.array([1e-5]),
                             J1=np.zeros((1, 1)), J2=np.zeros((1, 1)))
        decision = sliding_control(terms, spec)

        assert decision.diagnostics['capped'] == 1.0
        assert abs(decision.u[0]) <= spec.gain / spec.g_floor
        K = 5.0 / 1.01
        assert decision.u[0] == pytest.approx(-1e-5 * K / 1e-6)

    def test_g_floor_below_tolerance_rejected(self):
        """Test that the floor may not sit below the degeneracy tolerance"""
        with pytest.raises(ValueError):
            SlidingSurfaceSpec(weights=(), g_tol=1e-2, g_floor=1e-3)

    def test_identities_and_monotone_W(self):
        """Test H J1 H' = 0, H (J1 + J2) H' = F and W along a short run"""
        result = sliding_identities(n_samples=30, horizon=0.2, seed=2)
        assert result.passed, result.details

class TestSurfaceAudit:
    """Test the sampled sliding-surface audit"""

    def test_default_scenario(self, scenario):
        """Test boundary growth and a zero set around each target inside the safe set"""
        audit = verify_surface_conditions(None, scenario, n_boundary=8, n_rays=4, n_grid=20)

        assert len(audit.robots) == 4
        for robot in audit.robots:
            assert robot.boundary.status is AuditStatus.PASS
            assert robot.boundary.value >= robot.boundary.reference
            assert robot.zero_set.status is AuditStatus.PASS
            assert robot.zero_set.samples >= 1
            assert robot.zero_set.value > 0.0
        assert audit.status is AuditStatus.PASS
        assert audit.to_dict()['status'] == 'pass'

    def test_unweighted_surface_on_covered_target(self):
        """Test that U = V puts a zero of the surface inside the obstacle covering the target"""
        targets = ((0.15, 0.0),) + ScenarioConfig().targets[1:]
        cfg = replace(ScenarioConfig(), targets=targets, sliding=SlidingSettings(barrier_weight=0.0))
        scenario = build_scenario(cfg, strict=False)
        audit = verify_surface_conditions(None, scenario, n_boundary=8, n_rays=4, n_grid=20)

        assert audit.robots[0].zero_set.status is AuditStatus.FAIL
        assert audit.robots[0].zero_set.value == pytest.approx(-0.09)
        assert audit.status is AuditStatus.FAIL

class TestControllerRegistry:
    """Test the controller factory"""

    def test_get_controller(self, scenario):
        """Test every registered kind"""
        assert isinstance(get_controller('stabilizer', scenario), StabilizerController)
        assert isinstance(get_controller(ControllerKind.QP, scenario), QPSafetyController)
        assert isinstance(get_controller('sliding', scenario), SlidingModeController)
        assert isinstance(get_controller('off', scenario), ZeroController)

    def test_unknown_controller(self, scenario):
        """Test that unknown names raise"""
        with pytest.raises(ValueError):
            get_controller('pid', scenario)
