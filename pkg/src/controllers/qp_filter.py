# File: src/controllers/qp_filter.py

"""Safety filter: minimum-deviation QP over barrier constraints"""

from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from ..functionals import lie_data
from ..models import Branch, ControlDecision
from .base import BaseController, ControlProblem, Snapshot
from .stabilizer import StabilizerController

Row = Tuple[np.ndarray, float]


def _stack(rows: Sequence[Row], m: int) -> Tuple[np.ndarray, np.ndarray]:
    if not rows:
        return np.zeros((0, m)), np.zeros(0)
    A = np.array([np.atleast_1d(np.asarray(a, dtype=float)) for a, _ in rows])
    b = np.array([float(rhs) for _, rhs in rows])
    if A.shape[1] != m:
        raise ValueError(f"constraint rows have {A.shape[1]} columns, control has {m}")
    return A, b


def _feasible(A: np.ndarray, b: np.ndarray, u: np.ndarray, tol: float) -> bool:
    return bool(np.all(A @ u <= b + tol * (1.0 + np.abs(b))))


def _enumerate(u_nom: np.ndarray, A: np.ndarray, b: np.ndarray,
               tol: float) -> Optional[Tuple[np.ndarray, Tuple[int, ...]]]:
    """First KKT point over active sets, smallest sets first then lexicographic"""
    m = u_nom.shape[0]
    for size in range(1, min(m, A.shape[0]) + 1):
        for active in combinations(range(A.shape[0]), size):
            A_s = A[list(active)]
            residual = A_s @ u_nom - b[list(active)]
            lam = np.linalg.lstsq(A_s @ A_s.T, residual, rcond=None)[0]
            if np.any(lam < -tol):
                continue
            u = u_nom - A_s.T @ lam
            if _feasible(A, b, u, tol):
                return u, active
    return None


def _least_violation(A: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, float]:
    """Solve min t subject to A u - b <= t, t >= 0"""
    r, m = A.shape
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    A_ub = np.hstack((A, -np.ones((r, 1))))
    bounds = [(None, None)] * m + [(0.0, None)]
    result = linprog(cost, A_ub=A_ub, b_ub=b, bounds=bounds, method='highs')
    if not result.success:
        return np.zeros(m), float(np.max(-b, initial=0.0))
    return result.x[:m], float(result.x[-1])


def solve_safety_qp(u_nom, rows: Sequence[Row], tol: float = 1e-9,
                    labels: Optional[Sequence[str]] = None) -> ControlDecision:
    """argmin |u - u_nom|^2 subject to A_k u <= b_k for every row

    Solved by enumerating active sets of size at most dim(u); any KKT point is
    the global minimizer. An infeasible row set is relaxed by the smallest
    uniform violation and flagged.
    """
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    A, b = _stack(rows, u_nom.shape[0])
    labels = list(labels) if labels is not None else [str(k) for k in range(A.shape[0])]

    def decision(u, active, infeasible=False, relaxation=0.0):
        slack = b - A @ u
        return ControlDecision(
            u=u,
            branch=Branch.QP_ACTIVE if active else Branch.QP_INACTIVE,
            active_set=tuple(active),
            margins=[(labels[k], float(slack[k])) for k in range(A.shape[0])],
            diagnostics={'deviation': float(np.linalg.norm(u - u_nom)), 'relaxation': relaxation},
            infeasible=infeasible,
        )

    if _feasible(A, b, u_nom, tol):
        return decision(u_nom.copy(), ())

    found = _enumerate(u_nom, A, b, tol)
    if found is not None:
        return decision(*found)

    u_lp, violation = _least_violation(A, b)
    relaxed = b + violation + tol * (1.0 + np.abs(b))
    if _feasible(A, relaxed, u_nom, tol):
        return decision(u_nom.copy(), (), infeasible=True, relaxation=violation)
    found = _enumerate(u_nom, A, relaxed, tol)
    if found is not None:
        return decision(found[0], found[1], infeasible=True, relaxation=violation)
    return decision(u_lp, (), infeasible=True, relaxation=violation)


class QPSafetyController(BaseController):
    """Universal-formula stabilizer filtered through per-barrier QP rows"""

    def __init__(self, problem: ControlProblem, delta_margin: float = 1e-6, tol: float = 1e-9):
        super().__init__(problem)
        self.nominal = StabilizerController(problem)
        self.delta_margin = delta_margin
        self.tol = tol
        self._holders = {id(h): problem.holders(h) for hs in problem.safe_sets for h in hs}

    def _shared_values(self, h, value: float) -> np.ndarray:
        """``value`` at the subsystems holding ``h``, +inf elsewhere"""
        values = np.full(self.problem.layout.p, np.inf)
        values[list(self._holders[id(h)])] = value
        return values

    def barrier_rows(self, snap: Snapshot, i: int) -> Tuple[List[Row], List[str], List[float]]:
        """Rows L_g B u <= eta h_k - sum_j chi h_j - L_f B - D+B_2 - delta for subsystem i

        Only a constraint held by several subsystems is coupled: its row
        carries chi_ij h_k for every neighbour j holding the same h_k. Also
        returns, per row, the size of the neighbour-input terms the
        distributed row leaves out.
        """
        problem = self.problem
        gains = problem.barrier_gains
        layout = problem.layout
        g_i = snap.g_vals[i]
        rows, labels, cross = [], [], []
        for h, barrier in zip(problem.safe_sets[i], problem.barriers[i]):
            lie = lie_data(barrier, snap.phi, snap.f_val, g_i, i, layout)
            value = h.eval_h(snap.phi)
            coupling = self.neighbor_sum(gains, i, self._shared_values(h, value))
            rhs = gains.decay(i, value) - coupling - lie.lf_v1 - lie.dini_v2 - self.delta_margin
            rows.append((lie.lg_v1, rhs))
            labels.append(h.label)
            grad = barrier.grad_V1(snap.phi.head)
            cross.append(sum(float(np.linalg.norm(grad[layout.block(j)] @ snap.g_vals[j]))
                             for j in range(layout.p) if j != i and np.any(grad[layout.block(j)])))
        return rows, labels, cross

    def decide(self, snap: Snapshot, i: int) -> ControlDecision:
        a, b = self.nominal.clf_terms(snap, i)
        nominal = self.nominal.decision_from_terms(snap, i, a, b)
        rows, labels, cross = self.barrier_rows(snap, i)
        result = solve_safety_qp(nominal.u, rows, self.tol, labels)

        diagnostics = dict(nominal.diagnostics)
        diagnostics.update(result.diagnostics)
        diagnostics['dissipation'] = float(a + b @ result.u)
        if rows:
            A, b = _stack(rows, result.u.shape[0])
            diagnostics['barrier'] = float(np.max(A @ result.u - b - self.delta_margin))
            diagnostics['cross_terms'] = float(max(cross))
        result.diagnostics = diagnostics
        return result
