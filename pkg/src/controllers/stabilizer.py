# File: src/controllers/stabilizer.py

"""Universal-formula stabilizer built from multiple control Lyapunov functionals"""

from typing import Tuple

import numpy as np

from ..functionals import check_small_gain, lie_data
from ..models import Branch, ControlDecision
from .base import BaseController, ControlProblem, Snapshot


def sontag_control(a: float, b) -> np.ndarray:
    """u = -[(a + sqrt(a^2 + |b|^4)) / |b|^2] b'

    Returns zero when b = 0. For a <= 0 the gain is evaluated in the
    equivalent form |b|^2 / (sqrt(a^2 + |b|^4) - a), which stays accurate
    when |b| is small.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    bb = float(b @ b)
    if bb == 0.0:
        return np.zeros_like(b)
    root = np.hypot(a, bb)
    if a > 0.0:
        gain = (a + root) / bb
    else:
        gain = bb / (root - a)
    return -gain * b


class StabilizerController(BaseController):
    """Distributed stabilizer: one universal-formula control per subsystem"""

    def __init__(self, problem: ControlProblem):
        super().__init__(problem)
        self.certificate = check_small_gain(problem.gains)
        if not self.certificate.passed:
            print(f"⚠️ Small-gain check failed ({self.certificate}); stabilization is not certified")

    def clf_terms(self, snap: Snapshot, i: int) -> Tuple[float, np.ndarray]:
        """a_i = L_f V1 + D+V2 + rho_i(V_i) - sum_j gamma_ij(V_j) and b_i = L_g V1"""
        problem = self.problem
        g_i = snap.g_vals[i]
        lie = lie_data(problem.mclfs[i], snap.phi, snap.f_val, g_i, i, problem.layout)
        a = (lie.lf_v1 + lie.dini_v2 + problem.gains.decay(i, snap.V[i])
             - self.neighbor_sum(problem.gains, i, snap.V))
        return float(a), lie.lg_v1

    def decide(self, snap: Snapshot, i: int) -> ControlDecision:
        a, b = self.clf_terms(snap, i)
        return self.decision_from_terms(snap, i, a, b)

    def decision_from_terms(self, snap: Snapshot, i: int, a: float, b: np.ndarray) -> ControlDecision:
        problem = self.problem
        b_norm = float(np.linalg.norm(b))

        if snap.at_equilibrium or b_norm == 0.0:
            u = np.zeros(problem.model.input_dims[i])
            branch = Branch.ZERO
        else:
            u = sontag_control(a, b)
            branch = Branch.SONTAG

        return ControlDecision(
            u=u,
            branch=branch,
            diagnostics={
                'a': float(a),
                'b_norm': b_norm,
                'V': float(snap.V[i]),
                'dissipation': float(a + b @ u),
                'clf_infimum': float(a) if b_norm == 0.0 else float('nan'),
            },
        )
