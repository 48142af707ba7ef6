# File: src/controllers/sliding.py

"""Sliding-mode safe stabilizer on U_i = V_i + sum_k w_ik B_k - c_i - a_i . (x - x*)

c_i and a_i are the weighted barrier sum and its gradient at the target
state x*, so U_i and its gradient vanish there.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..delay import HistoryBuffer
from ..functionals import FunctionalBundle
from ..models import Branch, ControlDecision, DegenerateSurfaceError, SlidingSurfaceSpec
from ..simulator import SystemModel
from .base import BaseController, ControlProblem, Snapshot


@dataclass(frozen=True)
class SlidingTerms:
    """Surface value and the matrices its derivative is assembled from"""
    U: float
    H: np.ndarray
    L: float
    F: float
    G: np.ndarray
    J1: np.ndarray
    J2: np.ndarray

    @property
    def W(self) -> float:
        return 0.5 * self.U ** 2

    @property
    def g_norm_sq(self) -> float:
        return float(self.G @ self.G)


def _check_weights(spec: SlidingSurfaceSpec, barriers: Sequence[FunctionalBundle]):
    if len(spec.weights) != len(barriers):
        raise ValueError(f"{len(spec.weights)} surface weights for {len(barriers)} barriers")


def _anchor_terms(spec: SlidingSurfaceSpec, head: np.ndarray):
    """Value and gradient of the target correction at the current head state"""
    if spec.anchor is None:
        return spec.offset, None
    gradient = np.asarray(spec.anchor_gradient, dtype=float)
    shift = float(gradient @ (np.asarray(head, dtype=float) - np.asarray(spec.anchor, dtype=float)))
    return spec.offset + shift, gradient


def surface_value(phi: HistoryBuffer, layout, mclf_i: FunctionalBundle,
                  barriers: Sequence[FunctionalBundle], spec: SlidingSurfaceSpec, i: int) -> float:
    """U_i alone; barriers with zero weight are not evaluated"""
    _check_weights(spec, barriers)
    value = mclf_i.value(phi.sub_view(layout, i))
    for w, barrier in zip(spec.weights, barriers):
        if w != 0.0:
            value += w * barrier.value(phi)
    correction, _ = _anchor_terms(spec, phi.head)
    return float(value - correction)


def sliding_terms(phi: HistoryBuffer, system: SystemModel, mclf_i: FunctionalBundle,
                  barriers: Sequence[FunctionalBundle], spec: SlidingSurfaceSpec, i: int,
                  f_val: Optional[np.ndarray] = None, g_i: Optional[np.ndarray] = None) -> SlidingTerms:
    """U, H, L, F, G and the auxiliary pair J1, J2 for subsystem i

    U' = F + L + G u, where H collects the block-i gradients and L the history
    terms plus the barrier gradients along the other subsystems' drift.
    """
    _check_weights(spec, barriers)
    layout = system.layout
    block = layout.block(i)
    f_val = system.f(phi) if f_val is None else np.asarray(f_val, dtype=float)
    phi_i = phi.sub_view(layout, i)

    correction, anchor_gradient = _anchor_terms(spec, phi.head)
    U = mclf_i.value(phi_i) - correction
    H = np.asarray(mclf_i.grad_V1(phi_i.head), dtype=float).copy()
    L = float(mclf_i.dini_V2(phi_i))
    if anchor_gradient is not None:
        outside = anchor_gradient.copy()
        outside[block] = 0.0
        H -= anchor_gradient[block]
        L -= float(outside @ f_val)
    for w, barrier in zip(spec.weights, barriers):
        if w == 0.0:
            continue
        grad = np.asarray(barrier.grad_V1(phi.head), dtype=float)
        outside = grad.copy()
        outside[block] = 0.0
        U += w * barrier.value(phi)
        H += w * grad[block]
        L += w * (float(barrier.dini_V2(phi)) + float(outside @ f_val))

    f_i = f_val[block]
    g_i = system.g(phi, i) if g_i is None else g_i
    F = float(H @ f_i)
    G = H @ g_i
    g_norm_sq = float(G @ G)
    if np.sqrt(g_norm_sq) < spec.g_tol:
        raise DegenerateSurfaceError(f"subsystem {i}: |G| = {np.sqrt(g_norm_sq):.3g} below {spec.g_tol:g}")

    gG = g_i @ G
    J1 = (np.outer(gG, f_i) - np.outer(f_i, gG)) / (2.0 * g_norm_sq)
    J2 = (np.outer(gG, f_i) + np.outer(f_i, gG)) / (2.0 * g_norm_sq)
    return SlidingTerms(U=float(U), H=H, L=L, F=F, G=G, J1=J1, J2=J2)


def sliding_control(terms: SlidingTerms, spec: SlidingSurfaceSpec) -> ControlDecision:
    """u = ideal part minus G' K / |G|^2 with K = gain * U / (|U| + smoothing)

    Below ``spec.g_floor`` the denominator is held at g_floor^2, which bounds
    |u| by (|H J2 H' + L| + gain) / g_floor; U' = -K holds only above it.
    """
    g_norm_sq = terms.g_norm_sq
    if np.sqrt(g_norm_sq) < spec.g_tol:
        raise DegenerateSurfaceError(f"|G| = {np.sqrt(g_norm_sq):.3g} below {spec.g_tol:g}")
    capped = g_norm_sq < spec.g_floor ** 2
    denominator = spec.g_floor ** 2 if capped else g_norm_sq
    ideal = -terms.G * (terms.H @ terms.J2 @ terms.H + terms.L) / denominator
    K = spec.gain * terms.U / (abs(terms.U) + spec.smoothing)
    u = ideal - terms.G * K / denominator

    U_dot = terms.F + terms.L + float(terms.G @ u)
    bound = -spec.gain * terms.U ** 2 / (abs(terms.U) + spec.smoothing)
    return ControlDecision(
        u=u,
        branch=Branch.SLIDING,
        diagnostics={
            'U': terms.U,
            'W': terms.W,
            'K': float(K),
            'W_dot': float(terms.U * U_dot),
            'surface': float(terms.U * U_dot - bound),
            'capped': float(capped),
        },
    )


class SlidingModeController(BaseController):
    """One sliding surface per subsystem combining its MCLF with weighted barriers"""

    def __init__(self, problem: ControlProblem, specs: Sequence[SlidingSurfaceSpec]):
        super().__init__(problem)
        if len(specs) != problem.layout.p:
            raise ValueError("one sliding surface per subsystem is required")
        for spec, barriers in zip(specs, problem.barriers):
            _check_weights(spec, barriers)
        self.specs: List[SlidingSurfaceSpec] = list(specs)

    def decide(self, snap: Snapshot, i: int) -> ControlDecision:
        problem = self.problem
        spec = self.specs[i]
        try:
            terms = sliding_terms(snap.phi, problem.model, problem.mclfs[i], problem.barriers[i],
                                  spec, i, snap.f_val, snap.g_vals[i])
        except DegenerateSurfaceError:
            U = surface_value(snap.phi, problem.layout, problem.mclfs[i], problem.barriers[i], spec, i)
            return ControlDecision(u=np.zeros(problem.model.input_dims[i]), branch=Branch.ZERO,
                                   diagnostics={'V': float(snap.V[i]), 'U': U, 'W': 0.5 * U ** 2,
                                                'degenerate': 1.0})
        decision = sliding_control(terms, spec)
        decision.diagnostics['V'] = float(snap.V[i])
        return decision
