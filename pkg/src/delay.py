# File: src/delay.py

"""History buffers and subsystem layouts for time-delay states"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, FrozenSet, Iterable, Optional, Tuple

import numpy as np
from .models import DomainError, Interpolation

# Offsets closer than this to a window edge are treated as on the edge
_EDGE_TOL = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SubsystemLayout:
    """Partition of a stacked state into subsystem blocks"""
    dims: Tuple[int, ...]
    edges: FrozenSet[Tuple[int, int]] = frozenset()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d <= 0 for d in dims):
            raise ValueError("subsystem dimensions must be positive")
        object.__setattr__(self, 'dims', dims)
        edges = set()
        for i, j in self.edges:
            if not (0 <= i < len(dims) and 0 <= j < len(dims)):
                raise ValueError(f"edge ({i}, {j}) references a missing subsystem")
            if i != j:
                edges.add((min(i, j), max(i, j)))
        object.__setattr__(self, 'edges', frozenset(edges))

    @classmethod
    def complete(cls, dims: Iterable[int]) -> 'SubsystemLayout':
        """Layout whose graph connects every pair of subsystems"""
        dims = tuple(dims)
        edges = frozenset((i, j) for i in range(len(dims)) for j in range(i + 1, len(dims)))
        return cls(dims=dims, edges=edges)

    @property
    def p(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return sum(self.dims)

    @cached_property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate(([0], np.cumsum(self.dims)[:-1])))

    @cached_property
    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.p, self.p), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        adj.setflags(write=False)
        return adj

    def check_index(self, i: int):
        if not 0 <= i < self.p:
            raise DomainError(f"subsystem index {i} outside 0..{self.p - 1}")

    def block(self, i: int) -> slice:
        self.check_index(i)
        start = self.offsets[i]
        return slice(start, start + self.dims[i])

    def neighbors(self, i: int) -> Tuple[int, ...]:
        self.check_index(i)
        return tuple(int(j) for j in np.flatnonzero(self.adjacency[i]))


@dataclass(frozen=True)
class HistoryBuffer:
    """Sampled trajectory segment on [-delta, 0]

    ``offsets`` are strictly increasing and end at 0. The first offset sits at
    -delta for freshly built buffers; after ``advance`` one sample before
    -delta may be kept so that -delta stays bracketed.
    """
    delta: float
    offsets: np.ndarray
    states: np.ndarray
    interpolation: Interpolation = Interpolation.CUBIC_HERMITE
    derivatives: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        offsets = _frozen(self.offsets)
        states = _frozen(self.states)
        if states.ndim == 1:
            states = _frozen(states[:, None])
        if offsets.ndim != 1 or offsets.shape[0] < 2:
            raise ValueError("a history buffer needs at least two samples")
        if states.shape[0] != offsets.shape[0]:
            raise ValueError("one state per offset is required")
        if np.any(np.diff(offsets) <= 0.0):
            raise ValueError("offsets must be strictly increasing")
        if offsets[-1] != 0.0:
            raise ValueError("the last offset must be 0")
        if offsets[0] > -self.delta + _EDGE_TOL * self.delta:
            raise ValueError("the first offset must reach -delta")
        object.__setattr__(self, 'offsets', offsets)
        object.__setattr__(self, 'states', states)
        if self.derivatives is not None:
            derivatives = _frozen(self.derivatives)
            if derivatives.ndim == 1:
                derivatives = _frozen(derivatives[:, None])
            if derivatives.shape != states.shape:
                raise ValueError("derivatives must match the state samples")
            object.__setattr__(self, 'derivatives', derivatives)

    @classmethod
    def _unchecked(cls, delta: float, offsets: np.ndarray, states: np.ndarray,
                   interpolation: Interpolation, derivatives: Optional[np.ndarray]) -> 'HistoryBuffer':
        """Build from samples already known to be valid, skipping __post_init__"""
        buf = object.__new__(cls)
        for name, value in (('delta', delta), ('offsets', offsets), ('states', states),
                            ('interpolation', interpolation), ('derivatives', derivatives)):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(buf, name, value)
        return buf

    @classmethod
    def constant(cls, delta: float, value, n_samples: int = 2,
                 interpolation: Interpolation = Interpolation.CUBIC_HERMITE) -> 'HistoryBuffer':
        """Buffer holding one value over the whole window"""
        value = np.atleast_1d(np.asarray(value, dtype=float))
        offsets = np.linspace(-delta, 0.0, max(n_samples, 2))
        offsets[-1] = 0.0
        states = np.tile(value, (offsets.shape[0], 1))
        return cls(delta, offsets, states, interpolation, np.zeros_like(states))

    @classmethod
    def from_function(cls, delta: float, fn: Callable[[float], np.ndarray], n_samples: int = 51,
                      interpolation: Interpolation = Interpolation.CUBIC_HERMITE) -> 'HistoryBuffer':
        """Sample ``fn(theta)`` on an even grid over [-delta, 0]"""
        offsets = np.linspace(-delta, 0.0, n_samples)
        offsets[0], offsets[-1] = -delta, 0.0
        states = np.array([np.atleast_1d(fn(theta)) for theta in offsets], dtype=float)
        return cls(delta, offsets, states, interpolation)

    @property
    def dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def head(self) -> np.ndarray:
        return self.states[-1]

    def query(self, theta: float) -> np.ndarray:
        """State at offset ``theta``; exact at stored offsets"""
        theta = float(theta)
        if theta > 0.0 or theta < -self.delta * (1.0 + _EDGE_TOL):
            raise DomainError(f"offset {theta} outside [-{self.delta}, 0]")
        theta = max(theta, float(self.offsets[0]))
        j = int(np.searchsorted(self.offsets, theta))
        if self.offsets[j] == theta:
            return self.states[j].copy()
        return self._interpolate(j - 1, theta)

    def _interpolate(self, j: int, theta: float) -> np.ndarray:
        o0, o1 = self.offsets[j], self.offsets[j + 1]
        width = o1 - o0
        s = (theta - o0) / width
        if self.interpolation is not Interpolation.CUBIC_HERMITE or self.derivatives is None:
            return (1.0 - s) * self.states[j] + s * self.states[j + 1]
        s2, s3 = s * s, s * s * s
        return ((2.0 * s3 - 3.0 * s2 + 1.0) * self.states[j] + (s3 - 2.0 * s2 + s) * width * self._slope(j)
                + (3.0 * s2 - 2.0 * s3) * self.states[j + 1] + (s3 - s2) * width * self._slope(j + 1))

    def _slope(self, k: int) -> np.ndarray:
        """Stored derivative at sample k, else the local np.gradient estimate"""
        stored = self.derivatives[k]
        if np.all(np.isfinite(stored)):
            return stored
        lo, hi = max(k - 1, 0), min(k + 2, self.offsets.shape[0])
        return np.gradient(self.states[lo:hi], self.offsets[lo:hi], axis=0)[k - lo]

    def window(self) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and states covering exactly [-delta, 0]"""
        start = int(np.searchsorted(self.offsets, -self.delta, side='left'))
        offsets, states = self.offsets[start:], self.states[start:]
        if offsets[0] != -self.delta:
            offsets = np.concatenate(([-self.delta], offsets))
            states = np.vstack((self.query(-self.delta), states))
        return offsets, states

    def sup_norm(self) -> float:
        """Largest Euclidean norm over the stored window

        Exact for linear interpolation; a lower bound in cubic mode.
        """
        _, states = self.window()
        return float(np.max(np.linalg.norm(states, axis=1)))

    def advance(self, dt: float, new_head, derivative=None) -> 'HistoryBuffer':
        """Shift the window forward by ``dt`` and append ``new_head`` at offset 0"""
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        new_head = np.atleast_1d(np.asarray(new_head, dtype=float))
        if new_head.shape != (self.dim,):
            raise DomainError(f"new head has shape {new_head.shape}, expected ({self.dim},)")
        shifted = self.offsets - dt
        start = max(int(np.searchsorted(shifted, -self.delta, side='right')) - 1, 0)
        offsets = np.append(shifted[start:], 0.0)
        states = np.vstack((self.states[start:], new_head))
        derivatives = None
        if self.derivatives is not None or derivative is not None:
            old = (self.derivatives[start:] if self.derivatives is not None
                   else np.full((offsets.shape[0] - 1, self.dim), np.nan))
            head_slope = (np.full(self.dim, np.nan) if derivative is None
                          else np.atleast_1d(np.asarray(derivative, dtype=float)))
            derivatives = np.vstack((old, head_slope))
        return HistoryBuffer._unchecked(self.delta, offsets, states, self.interpolation, derivatives)

    def sub_view(self, layout: SubsystemLayout, i: int) -> 'HistoryBuffer':
        """Buffer restricted to the state block of subsystem ``i``"""
        if layout.n != self.dim:
            raise DomainError(f"layout covers {layout.n} states, buffer holds {self.dim}")
        block = layout.block(i)
        derivatives = None if self.derivatives is None else self.derivatives[:, block]
        return HistoryBuffer._unchecked(self.delta, self.offsets, self.states[:, block],
                                        self.interpolation, derivatives)

    def map_states(self, fn: Callable[[np.ndarray], np.ndarray]) -> 'HistoryBuffer':
        """Apply ``fn`` to the sample matrix, keeping the offsets"""
        states = np.asarray(fn(np.array(self.states)), dtype=float)
        return HistoryBuffer(self.delta, self.offsets, states, self.interpolation)
