# File: src/functionals.py

"""Separable Lyapunov and barrier functionals on delay states"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .delay import HistoryBuffer, SubsystemLayout
from .models import (
    BarrierDomainError,
    DomainError,
    FunctionalKind,
    GainGraph,
    LieData,
    SmallGainCertificate,
)

StateMap = Callable[[np.ndarray], float]
GradMap = Callable[[np.ndarray], np.ndarray]
HistoryMap = Callable[[HistoryBuffer], float]


def _zero_history(phi: HistoryBuffer) -> float:
    return 0.0


@dataclass(frozen=True)
class FunctionalBundle:
    """V(phi) = V1(phi(0)) + V2(phi) as four evaluation maps

    Lyapunov bundles act on one subsystem's history; barrier bundles act on
    the full stacked history.
    """
    eval_V1: StateMap
    grad_V1: GradMap
    eval_V2: HistoryMap
    dini_V2: HistoryMap
    kind: FunctionalKind = FunctionalKind.LYAPUNOV
    label: str = ""

    def value(self, phi: HistoryBuffer) -> float:
        return float(self.eval_V1(phi.head)) + float(self.eval_V2(phi))


@dataclass(frozen=True)
class SafeSetFunctional:
    """h on the current full state; the safe region is {h > 0}"""
    label: str
    h_of_state: StateMap
    grad_of_state: GradMap
    params: Dict[str, Any] = field(default_factory=dict)

    def eval_h(self, phi: HistoryBuffer) -> float:
        return float(self.h_of_state(phi.head))

    def grad_h(self, phi: HistoryBuffer) -> np.ndarray:
        return np.asarray(self.grad_of_state(phi.head), dtype=float)


def lie_data(bundle: FunctionalBundle, phi: HistoryBuffer, f_val: np.ndarray, g_val: np.ndarray,
             i: int, layout: SubsystemLayout) -> LieData:
    """Derivative data of ``bundle`` along the drift ``f_val`` and input map ``g_val``

    ``f_val`` is the stacked drift; ``g_val`` is subsystem i's n_i x m_i input map.
    """
    f_val = np.asarray(f_val, dtype=float)
    g_val = np.atleast_2d(np.asarray(g_val, dtype=float))
    block = layout.block(i)
    if phi.dim != layout.n or f_val.shape != (layout.n,):
        raise DomainError(f"drift of shape {f_val.shape} does not match {layout.n} stacked states")
    if g_val.shape[0] != layout.dims[i]:
        raise DomainError(f"input map has {g_val.shape[0]} rows, subsystem {i} has {layout.dims[i]} states")

    if bundle.kind is FunctionalKind.LYAPUNOV:
        phi_i = phi.sub_view(layout, i)
        grad = np.asarray(bundle.grad_V1(phi_i.head), dtype=float)
        if grad.shape != (layout.dims[i],):
            raise DomainError(f"gradient of shape {grad.shape} for a block of {layout.dims[i]} states")
        return LieData(lf_v1=float(grad @ f_val[block]),
                       lg_v1=grad @ g_val,
                       dini_v2=float(bundle.dini_V2(phi_i)))

    grad = np.asarray(bundle.grad_V1(phi.head), dtype=float)
    if grad.shape != (layout.n,):
        raise DomainError(f"barrier gradient of shape {grad.shape} for {layout.n} stacked states")
    return LieData(lf_v1=float(grad @ f_val),
                   lg_v1=grad[block] @ g_val,
                   dini_v2=float(bundle.dini_V2(phi)))


def _check_spd(name: str, matrix: np.ndarray) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != matrix.shape[1] or not np.allclose(matrix, matrix.T):
        raise ValueError(f"{name} must be a symmetric square matrix")
    if np.min(np.linalg.eigvalsh(matrix)) <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return matrix


def quadratic_mclf(P, Q, sigma: float, q_target, position: Optional[slice] = None,
                   label: str = "") -> FunctionalBundle:
    """Quadratic Lyapunov functional on the position part of a subsystem state

    V1 = (p - q)' P (p - q) and V2 = sigma * integral over the window of
    (p(theta) - q)' Q (p(theta) - q). ``position`` selects p inside the
    subsystem state and defaults to the leading ``len(q_target)`` components.
    """
    P = _check_spd("P", P)
    Q = _check_spd("Q", Q)
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    q = np.atleast_1d(np.asarray(q_target, dtype=float))
    if P.shape[0] != q.shape[0] or Q.shape[0] != q.shape[0]:
        raise ValueError("P, Q and the target must share one dimension")
    position = position if position is not None else slice(0, q.shape[0])

    def quad_form(matrix, d):
        return np.einsum('...i,ij,...j->...', d, matrix, d)

    def eval_V1(x):
        return float(quad_form(P, np.asarray(x)[position] - q))

    def grad_V1(x):
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        grad[position] = 2.0 * P @ (x[position] - q)
        return grad

    def eval_V2(phi: HistoryBuffer):
        offsets, states = phi.window()
        integrand = quad_form(Q, states[:, position] - q)
        return float(sigma * trapezoid(integrand, offsets))

    def dini_V2(phi: HistoryBuffer):
        now = quad_form(Q, phi.head[position] - q)
        oldest = quad_form(Q, phi.query(-phi.delta)[position] - q)
        return float(sigma * (now - oldest))

    return FunctionalBundle(eval_V1, grad_V1, eval_V2, dini_V2, FunctionalKind.LYAPUNOV, label)


def obstacle_h(center, radius: float, position: slice = slice(0, 2), label: str = "") -> SafeSetFunctional:
    """h = |p - r|^2 - R^2, positive outside the disc"""
    if not radius > 0.0:
        raise ValueError("obstacle radius must be positive")
    r = np.asarray(center, dtype=float)

    def h_of_state(x):
        d = np.asarray(x)[position] - r
        return float(d @ d - radius ** 2)

    def grad_of_state(x):
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        grad[position] = 2.0 * (x[position] - r)
        return grad

    return SafeSetFunctional(label or f"obstacle@({r[0]:g},{r[1]:g})", h_of_state, grad_of_state,
                             {'center': r.tolist(), 'radius': float(radius)})


def pairwise_h(i: int, j: int, d_min: float, layout: SubsystemLayout,
               position: Tuple[int, int] = (0, 2)) -> SafeSetFunctional:
    """h = |p_i - p_j|^2 - d_min^2 between two subsystems"""
    if not d_min > 0.0:
        raise ValueError("d_min must be positive")
    if i == j:
        raise DomainError("pairwise clearance needs two distinct subsystems")
    start, stop = position
    pos_i = slice(layout.offsets[i] + start, layout.offsets[i] + stop)
    pos_j = slice(layout.offsets[j] + start, layout.offsets[j] + stop)

    def h_of_state(x):
        d = np.asarray(x)[pos_i] - np.asarray(x)[pos_j]
        return float(d @ d - d_min ** 2)

    def grad_of_state(x):
        x = np.asarray(x, dtype=float)
        d = x[pos_i] - x[pos_j]
        grad = np.zeros_like(x)
        grad[pos_i] = 2.0 * d
        grad[pos_j] = -2.0 * d
        return grad

    return SafeSetFunctional(f"pair({i},{j})", h_of_state, grad_of_state,
                             {'pair': [i, j], 'd_min': float(d_min)})


def aggregate_h(hs: Sequence[SafeSetFunctional], label: str = "aggregate") -> SafeSetFunctional:
    """Combine several safe sets into h = 1 / sum(1 / h_k)

    Positive exactly when every h_k is positive; returns the smallest h_k otherwise.
    """
    if not hs:
        raise ValueError("aggregate_h needs at least one safe-set functional")

    def h_of_state(x):
        values = np.array([h.h_of_state(x) for h in hs])
        if np.any(values <= 0.0):
            return float(values.min())
        return float(1.0 / np.sum(1.0 / values))

    def grad_of_state(x):
        values = np.array([h.h_of_state(x) for h in hs])
        grads = np.array([h.grad_of_state(x) for h in hs])
        if np.any(values <= 0.0):
            return grads[int(np.argmin(values))]
        total = 1.0 / np.sum(1.0 / values)
        return total ** 2 * np.sum(grads / values[:, None] ** 2, axis=0)

    return SafeSetFunctional(label, h_of_state, grad_of_state,
                             {'members': [h.label for h in hs]})


def reciprocal_barrier(h: SafeSetFunctional, v2: Optional[HistoryMap] = None,
                       dini_v2: Optional[HistoryMap] = None) -> FunctionalBundle:
    """B = 1/h on the current state plus an optional history term"""

    def checked(x):
        value = float(h.h_of_state(x))
        if not value > 0.0:
            raise BarrierDomainError(f"{h.label}: h = {value:.6g} left the safe set", value)
        return value

    def eval_V1(x):
        return 1.0 / checked(x)

    def grad_V1(x):
        value = checked(x)
        return -np.asarray(h.grad_of_state(x), dtype=float) / value ** 2

    return FunctionalBundle(eval_V1, grad_V1, v2 or _zero_history, dini_v2 or _zero_history,
                            FunctionalKind.BARRIER, h.label)


def gain_matrix(g: GainGraph) -> np.ndarray:
    """M_ij = gamma_ij / rho_j with a zero diagonal"""
    m = g.gamma_bar / g.rho_bar[None, :]
    np.fill_diagonal(m, 0.0)
    return m


def check_small_gain(g: GainGraph, tol: float = 1e-13, max_iter: int = 10000) -> SmallGainCertificate:
    """Spectral radius of the linear gain matrix by power iteration

    Iterates on M + I, which keeps the iterate positive, and stops when the
    Collatz-Wielandt bounds meet.
    """
    shifted = gain_matrix(g) + np.eye(g.size)
    x = np.ones(g.size)
    lower, upper = 0.0, np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        y = shifted @ x
        ratios = y / x
        lower, upper = float(ratios.min()), float(ratios.max())
        x = y / np.max(y)
        if upper - lower <= tol * upper:
            break
    radius = max(0.5 * (lower + upper) - 1.0, 0.0)
    return SmallGainCertificate(passed=radius < 1.0, spectral_radius=radius, iterations=iterations)
