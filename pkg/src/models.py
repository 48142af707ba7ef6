# File: src/models.py

"""Data models for the delayguard control stack"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


class Interpolation(Enum):
    """How a history buffer fills the gaps between stored samples"""
    LINEAR = "linear"
    CUBIC_HERMITE = "cubic-hermite"


class FunctionalKind(Enum):
    """Role of a separable functional"""
    LYAPUNOV = "lyapunov"
    BARRIER = "barrier"


class Branch(Enum):
    """Which branch of a synthesis engine produced a control"""
    ZERO = "zero"
    SONTAG = "sontag"
    QP_INACTIVE = "qp-inactive"
    QP_ACTIVE = "qp-active"
    SLIDING = "sliding"


class ControllerKind(Enum):
    """Closed-loop controller stacks a scenario can run"""
    STABILIZER = "stabilizer"
    QP = "qp"
    SLIDING = "sliding"
    OFF = "off"


class DelayPlacement(Enum):
    """Where the coupling drift samples own and neighbour states"""
    MIXED = "mixed"
    CURRENT = "current"
    DELAYED = "delayed"


class RunStatus(Enum):
    """Terminal state of a simulation run"""
    COMPLETED = "completed"
    SAFETY_VIOLATION = "safety_violation"
    NUMERICAL_ABORT = "numerical_abort"


class AuditStatus(Enum):
    """Outcome of one numerical audit condition"""
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class DomainError(ValueError):
    """Raised when a query or index falls outside the valid domain"""


class BarrierDomainError(DomainError):
    """Raised when a reciprocal barrier is evaluated outside its safe set"""

    def __init__(self, message: str, h_value: float = float("nan")):
        super().__init__(message)
        self.h_value = h_value


class DegenerateSurfaceError(RuntimeError):
    """Raised when the sliding surface has no usable input direction"""


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration entries"""


@dataclass(frozen=True)
class LieData:
    """Derivative data of a separable functional along the dynamics"""
    lf_v1: float
    lg_v1: np.ndarray
    dini_v2: float

    @property
    def input_dim(self) -> int:
        return int(self.lg_v1.shape[0])


@dataclass
class GainGraph:
    """Linear class-K gains over the interconnection graph"""
    rho_bar: np.ndarray
    gamma_bar: np.ndarray

    def __post_init__(self):
        self.rho_bar = np.asarray(self.rho_bar, dtype=float)
        self.gamma_bar = np.array(self.gamma_bar, dtype=float)
        p = self.rho_bar.shape[0]
        if self.rho_bar.ndim != 1 or p == 0:
            raise ValueError("rho_bar must be a non-empty vector")
        if self.gamma_bar.shape != (p, p):
            raise ValueError(f"gamma_bar must be {p}x{p}, got {self.gamma_bar.shape}")
        if np.any(self.rho_bar <= 0.0):
            raise ValueError("rho_bar entries must be positive")
        if np.any(self.gamma_bar < 0.0):
            raise ValueError("gamma_bar entries must be nonnegative")
        np.fill_diagonal(self.gamma_bar, 0.0)

    @classmethod
    def uniform(cls, p: int, rho: float, gamma: float) -> 'GainGraph':
        """Same gains on every subsystem and every edge of a complete graph"""
        gamma_bar = np.full((p, p), gamma, dtype=float)
        return cls(rho_bar=np.full(p, rho, dtype=float), gamma_bar=gamma_bar)

    @property
    def size(self) -> int:
        return int(self.rho_bar.shape[0])

    def decay(self, i: int, value: float) -> float:
        return float(self.rho_bar[i] * value)

    def coupling(self, i: int, values: np.ndarray) -> float:
        return float(self.gamma_bar[i] @ np.asarray(values, dtype=float))


@dataclass(frozen=True)
class SmallGainCertificate:
    """Result of the linear small-gain check"""
    passed: bool
    spectral_radius: float
    iterations: int

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"spectral radius {self.spectral_radius:.6f} {verdict}"


@dataclass(frozen=True)
class SlidingSurfaceSpec:
    """Weights and gains of one sliding surface

    U is corrected by ``offset + anchor_gradient . (x - anchor)``, the weighted
    barrier sum and its gradient at the target state ``anchor``, so that U
    and its gradient vanish there. Below ``g_floor`` the input gradient |G|
    is floored in the control law.
    """
    weights: Tuple[float, ...]
    gain: float = 5.0
    smoothing: float = 1e-2
    g_tol: float = 1e-9
    g_floor: float = 1e-3
    offset: float = 0.0
    anchor: Optional[Tuple[float, ...]] = None
    anchor_gradient: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if any(w < 0.0 for w in self.weights):
            raise ValueError("surface weights must be nonnegative")
        if self.gain <= 0.0:
            raise ValueError("sliding gain must be positive")
        if self.smoothing <= 0.0:
            raise ValueError("smoothing must be positive")
        if self.g_floor < self.g_tol:
            raise ValueError("g_floor must not be below g_tol")
        if (self.anchor is None) != (self.anchor_gradient is None):
            raise ValueError("anchor and anchor_gradient are set together")
        if self.anchor is not None and len(self.anchor) != len(self.anchor_gradient):
            raise ValueError("anchor_gradient must match the anchor state")


@dataclass
class ControlDecision:
    """Control for one subsystem plus what it took to compute it"""
    u: np.ndarray
    branch: Branch
    active_set: Tuple[int, ...] = ()
    margins: List[Tuple[str, float]] = field(default_factory=list)
    diagnostics: Dict[str, float] = field(default_factory=dict)
    infeasible: bool = False

    @property
    def active_label(self) -> str:
        """Active constraint ids joined for the telemetry table"""
        return ";".join(str(k) for k in self.active_set)

    def min_margin(self) -> float:
        if not self.margins:
            return float("inf")
        return min(slack for _, slack in self.margins)


@dataclass
class RunReport:
    """Summary of a simulation run"""
    controller: str
    status: RunStatus
    min_h: Optional[float]
    violation: bool
    final_distance: List[Optional[float]]
    time_to_ball: List[Optional[float]]
    targets: List[List[float]]
    ball_radius: float
    spectral_radius: float
    small_gain_passed: bool
    residual_maxima: Dict[str, Optional[float]] = field(default_factory=dict)
    surface_audit: Optional[Dict[str, Any]] = None
    qp_infeasible_steps: int = 0
    horizon_reached: float = 0.0
    conflicts: List[str] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    def add_error(self, error: str):
        """Add an error message"""
        self.errors.append(error)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to the report.json layout"""
        return {
            'controller': self.controller,
            'status': self.status.value,
            'safety': {
                'min_h': self.min_h,
                'violation': self.violation,
                'conflicts': self.conflicts,
            },
            'stabilization': {
                'ball_radius': self.ball_radius,
                'targets': self.targets,
                'final_distance': self.final_distance,
                'time_to_ball': self.time_to_ball,
            },
            'certificate': {
                'spectral_radius': self.spectral_radius,
                'passed': self.small_gain_passed,
            },
            'residual_maxima': self.residual_maxima,
            'surface_audit': self.surface_audit,
            'qp_infeasible_steps': self.qp_infeasible_steps,
            'horizon_reached': self.horizon_reached,
            'errors': self.errors,
        }
