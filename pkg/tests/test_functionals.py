# File: tests/test_functionals.py

"""Tests for Lyapunov and barrier functionals and the small-gain check"""

import numpy as np
import pytest
from src.delay import HistoryBuffer, SubsystemLayout
from src.functionals import (
    aggregate_h,
    check_small_gain,
    gain_matrix,
    lie_data,
    obstacle_h,
    pairwise_h,
    quadratic_mclf,
    reciprocal_barrier,
)
from src.models import BarrierDomainError, DomainError, FunctionalKind, GainGraph

IDENTITY = [[1.0, 0.0], [0.0, 1.0]]


def finite_difference(fn, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.shape[0]):
        e = np.zeros_like(x)
        e[k] = step
        grad[k] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return grad

class TestQuadraticMCLF:
    """Test the separable quadratic Lyapunov functional"""

    def test_constant_history_value(self):
        """Test V1 + V2 on a constant history"""
        mclf = quadratic_mclf(IDENTITY, IDENTITY, 0.1, [1.0, 1.0])
        phi = HistoryBuffer.constant(0.5, [2.0, 1.0, 0.7])

        # V1 = 1, V2 = 0.1 * 0.5 * 1
        assert mclf.value(phi) == pytest.approx(1.05)
        assert mclf.dini_V2(phi) == pytest.approx(0.0)
        np.testing.assert_allclose(mclf.grad_V1(phi.head), [2.0, 0.0, 0.0])
        assert mclf.kind is FunctionalKind.LYAPUNOV

    def test_moving_history(self):
        """Test the integral part and its Dini derivative on a linear path"""
        mclf = quadratic_mclf(IDENTITY, IDENTITY, 0.1, [1.0, 1.0])
        phi = HistoryBuffer.from_function(0.5, lambda t: [1.0 + t, 1.0, 0.0], n_samples=101)

        # sigma * integral of theta^2 over [-0.5, 0]
        assert mclf.eval_V2(phi) == pytest.approx(0.1 * 0.125 / 3.0, rel=1e-3)
        assert mclf.dini_V2(phi) == pytest.approx(-0.025)

    def test_invalid_parameters(self):
        """Test rejection of indefinite matrices and non-positive sigma"""
        with pytest.raises(ValueError):
            quadratic_mclf([[1.0, 0.0], [0.0, -1.0]], IDENTITY, 0.1, [0.0, 0.0])
        with pytest.raises(ValueError):
            quadratic_mclf(IDENTITY, [[1.0, 2.0], [0.0, 1.0]], 0.1, [0.0, 0.0])
        with pytest.raises(ValueError):
            quadratic_mclf(IDENTITY, IDENTITY, 0.0, [0.0, 0.0])

class TestSafeSets:
    """Test obstacle, pairwise and aggregate safe sets"""

    def test_obstacle_h(self):
        """Test value and gradient of a circular obstacle"""
        h = obstacle_h((0.0, 0.0), 1.0)
        phi = HistoryBuffer.constant(0.5, [2.0, 0.0, 0.3])

        assert h.eval_h(phi) == pytest.approx(3.0)
        np.testing.assert_allclose(h.grad_h(phi), [4.0, 0.0, 0.0])
        assert h.params == {'center': [0.0, 0.0], 'radius': 1.0}

        with pytest.raises(ValueError):
            obstacle_h((0.0, 0.0), 0.0)

    def test_pairwise_h(self):
        """Test robot-robot clearance between two blocks"""
        layout = SubsystemLayout.complete([3, 3])
        h = pairwise_h(0, 1, 0.5, layout)
        x = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])

        assert h.h_of_state(x) == pytest.approx(0.75)
        np.testing.assert_allclose(h.grad_of_state(x), [-2.0, 0.0, 0.0, 2.0, 0.0, 0.0])

        with pytest.raises(DomainError):
            pairwise_h(1, 1, 0.5, layout)

    def test_aggregate_h(self):
        """Test the reciprocal-sum combination of safe sets"""
        near = obstacle_h((0.0, 0.0), 1.0)
        far = obstacle_h((4.0, 0.0), 1.0)
        h = aggregate_h([near, far])
        x = np.array([2.0, 0.0, 0.0])

        # Members are 3 and 3
        assert h.h_of_state(x) == pytest.approx(1.5)
        np.testing.assert_allclose(h.grad_of_state(x), finite_difference(h.h_of_state, x), rtol=1e-5, atol=1e-8)

        # Inside one member the smallest value is returned
        assert h.h_of_state(np.array([0.5, 0.0, 0.0])) == pytest.approx(-0.75)

        with pytest.raises(ValueError):
            aggregate_h([])

class TestReciprocalBarrier:
    """Test B = 1/h"""

    def test_value_and_domain(self):
        """Test evaluation inside the safe set and the domain error outside"""
        barrier = reciprocal_barrier(obstacle_h((0.0, 0.0), 1.0))

        assert barrier.value(HistoryBuffer.constant(0.5, [2.0, 0.0, 0.0])) == pytest.approx(1.0 / 3.0)
        assert barrier.kind is FunctionalKind.BARRIER

        with pytest.raises(BarrierDomainError) as excinfo:
            barrier.value(HistoryBuffer.constant(0.5, [0.5, 0.0, 0.0]))
        assert excinfo.value.h_value == pytest.approx(-0.75)

    def test_gradient_matches_finite_difference(self):
        """Test the analytic gradient at random safe points"""
        barrier = reciprocal_barrier(obstacle_h((0.0, 0.0), 1.0))
        rng = np.random.default_rng(1)
        for _ in range(50):
            angle = rng.uniform(0.0, 2.0 * np.pi)
            x = np.array([np.cos(angle), np.sin(angle), 0.0]) * rng.uniform(1.1, 3.0)
            analytic = barrier.grad_V1(x)
            numeric = finite_difference(barrier.eval_V1, x)
            assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(analytic)

    def test_history_hook(self):
        """Test the optional delay-dependent term"""
        barrier = reciprocal_barrier(obstacle_h((0.0, 0.0), 1.0),
                                     v2=lambda phi: 0.5, dini_v2=lambda phi: -0.1)
        phi = HistoryBuffer.constant(0.5, [2.0, 0.0, 0.0])
        assert barrier.value(phi) == pytest.approx(1.0 / 3.0 + 0.5)
        assert barrier.dini_V2(phi) == pytest.approx(-0.1)

class TestLieData:
    """Test derivative data along the dynamics"""

    def test_lyapunov_block(self):
        """Test that Lyapunov data uses the own block only"""
        layout = SubsystemLayout.complete([3, 3])
        mclf = quadratic_mclf(IDENTITY, IDENTITY, 0.1, [0.0, 0.0])
        phi = HistoryBuffer.constant(0.5, [0.0, 0.0, 0.0, 1.0, 2.0, 0.0])

        lie = lie_data(mclf, phi, np.arange(6.0), np.eye(3), 1, layout)
        assert lie.lf_v1 == pytest.approx(22.0)
        np.testing.assert_allclose(lie.lg_v1, [2.0, 4.0, 0.0])
        assert lie.dini_v2 == pytest.approx(0.0)
        assert lie.input_dim == 3

    def test_barrier_full_gradient(self):
        """Test that barrier data sees the full drift but only the own input"""
        layout = SubsystemLayout.complete([3, 3])
        barrier = reciprocal_barrier(pairwise_h(0, 1, 0.5, layout))
        phi = HistoryBuffer.constant(0.5, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0])

        f_val = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        lie = lie_data(barrier, phi, f_val, np.eye(3), 0, layout)

        # grad B = -grad h / h^2 with h = 0.75
        assert lie.lf_v1 == pytest.approx(-2.0 / 0.5625)
        np.testing.assert_allclose(lie.lg_v1, [2.0 / 0.5625, 0.0, 0.0])

    def test_dimension_mismatch(self):
        """Test rejection of drift and input maps of the wrong size"""
        layout = SubsystemLayout.complete([3, 3])
        mclf = quadratic_mclf(IDENTITY, IDENTITY, 0.1, [0.0, 0.0])
        phi = HistoryBuffer.constant(0.5, np.zeros(6))

        with pytest.raises(DomainError):
            lie_data(mclf, phi, np.zeros(5), np.eye(3), 0, layout)
        with pytest.raises(DomainError):
            lie_data(mclf, phi, np.zeros(6), np.eye(2), 0, layout)

class TestSmallGain:
    """Test the linear small-gain certificate"""

    def test_default_gains_pass(self):
        """Test rho = 1, gamma = 0.2 on four subsystems"""
        certificate = check_small_gain(GainGraph.uniform(4, 1.0, 0.2))
        assert certificate.passed
        assert certificate.spectral_radius == pytest.approx(0.6, abs=1e-9)
        assert str(certificate) == "spectral radius 0.600000 PASS"

    def test_large_coupling_fails(self):
        """Test gamma = 0.5 on four subsystems"""
        certificate = check_small_gain(GainGraph.uniform(4, 1.0, 0.5))
        assert not certificate.passed
        assert certificate.spectral_radius == pytest.approx(1.5, abs=1e-9)

    def test_unequal_decay(self):
        """Test a two-subsystem graph with different decay rates"""
        graph = GainGraph(rho_bar=[1.0, 2.0], gamma_bar=[[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(gain_matrix(graph), [[0.0, 0.5], [1.0, 0.0]])
        assert check_small_gain(graph).spectral_radius == pytest.approx(np.sqrt(0.5), abs=1e-9)

    def test_single_subsystem(self):
        """Test that an isolated subsystem has zero loop gain"""
        certificate = check_small_gain(GainGraph.uniform(1, 1.0, 0.3))
        assert certificate.passed
        assert certificate.spectral_radius == pytest.approx(0.0)

    def test_invalid_graph(self):
        """Test gain graph validation"""
        with pytest.raises(ValueError):
            GainGraph(rho_bar=[1.0, -1.0], gamma_bar=np.zeros((2, 2)))
        with pytest.raises(ValueError):
            GainGraph(rho_bar=[1.0, 1.0], gamma_bar=np.zeros((3, 3)))
        with pytest.raises(ValueError):
            GainGraph(rho_bar=[1.0, 1.0], gamma_bar=[[0.0, -0.1], [0.0, 0.0]])
