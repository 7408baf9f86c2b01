"""Vector fields of the periodic fast-slow lattice.

The lattice values ``U_1..U_N`` evolve (in the experiment time unit) as

    dU_k/dt = U_k (U_{k-1} - U_{k+1}) + nu (U_{k+1} - 2 U_k + U_{k-1})

with indices taken mod N. The first term is the fast (Volterra/KdV) field,
the second the slow diffusion. ``nu = eps / (2h)``; setting ``nu = 0`` leaves
the pure fast system, which is the only other code path. The ``eps``/``tau``
form is reached purely through ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from .errors import InvalidInput

MIN_N = 6


def _check_n(n: int) -> None:
    if n < MIN_N or n % 2:
        raise InvalidInput(f"lattice size must be even and >= {MIN_N}, got {n}")


@dataclass(frozen=True, eq=False)
class State:
    """Immutable, strictly positive lattice state with periodic indexing."""

    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float, copy=True)
        if u.ndim != 1:
            raise InvalidInput(f"state must be one-dimensional, got shape {u.shape}")
        _check_n(u.size)
        if not np.all(np.isfinite(u)):
            raise InvalidInput("state has non-finite components")
        bad = np.flatnonzero(u <= 0.0)
        if bad.size:
            k = int(bad[0])
            raise InvalidInput(f"state component U_{k + 1} = {u[k]!r} is not strictly positive")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def mass(self) -> float:
        return float(self.u.sum())

    def __len__(self) -> int:
        return self.u.size

    def __array__(self, dtype=None, copy=None):
        return self.u if dtype is None else self.u.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, State):
            return NotImplemented
        return np.array_equal(self.u, other.u)

    def __hash__(self) -> int:
        return hash(self.u.tobytes())

    def __repr__(self) -> str:
        return f"State({np.array2string(self.u, separator=', ')})"


def as_state(x: State | ArrayLike) -> State:
    return x if isinstance(x, State) else State(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SystemParams:
    """Lattice size and diffusion strength.

    ``nu`` is the diffusion coefficient in the experiment time unit. The
    fast-field time ``sigma`` coincides with that unit; ``tau = eps * t``
    and the Lax-pair time ``s = -sigma / 2`` are documentation only.
    """

    n: int
    nu: float = 0.0
    h: float = field(init=False)

    def __post_init__(self):
        _check_n(self.n)
        if not (self.nu >= 0.0 and math.isfinite(self.nu)):
            raise InvalidInput(f"nu must be finite and >= 0, got {self.nu}")
        object.__setattr__(self, "h", 2.0 * math.pi / self.n)

    @property
    def eps(self) -> float:
        """Small parameter of the original scaling, ``eps = 2 h nu``."""
        return 2.0 * self.h * self.nu

    @classmethod
    def from_eps(cls, n: int, eps: float) -> "SystemParams":
        return cls(n=n, nu=eps / (2.0 * (2.0 * math.pi / n)))


@dataclass(frozen=True, eq=False)
class AVector:
    """Square-root variables ``a_k = sqrt(U_k)`` used by the Lax pair."""

    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float, copy=True)
        if a.ndim != 1 or np.any(~np.isfinite(a)) or np.any(a <= 0.0):
            raise InvalidInput("A-vector must be one-dimensional, finite and strictly positive")
        _check_n(a.size)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)


def _u(state: State | ArrayLike) -> np.ndarray:
    return as_state(state).u


def fast_rhs(state: State | ArrayLike) -> np.ndarray:
    """``dU_k/dsigma = -U_k (U_{k+1} - U_{k-1})``."""
    return fast_rhs_array(_u(state))


def fast_rhs_array(u: np.ndarray) -> np.ndarray:
    """Unvalidated fast field; RK stages may leave the positive orthant."""
    return -u * (np.roll(u, -1) - np.roll(u, 1))


def full_rhs_array(u: np.ndarray, nu: float) -> np.ndarray:
    up, um = np.roll(u, -1), np.roll(u, 1)
    return u * (um - up) + nu * (up - 2.0 * u + um)


def diffusion_stencil(state: State | ArrayLike) -> np.ndarray:
    """Periodic second difference ``U_{k+1} - 2 U_k + U_{k-1}``."""
    u = _u(state)
    return np.roll(u, -1) - 2.0 * u + np.roll(u, 1)


def full_rhs(state: State | ArrayLike, params: SystemParams | float) -> np.ndarray:
    nu = params.nu if isinstance(params, SystemParams) else float(params)
    if nu < 0.0:
        raise InvalidInput(f"nu must be >= 0, got {nu}")
    u = _u(state)
    if isinstance(params, SystemParams) and params.n != u.size:
        raise InvalidInput(f"params are for N={params.n}, state has N={u.size}")
    return full_rhs_array(u, nu)


def to_a(state: State | ArrayLike) -> AVector:
    return AVector(np.sqrt(_u(state)))


def from_a(a: AVector | ArrayLike) -> State:
    arr = a.a if isinstance(a, AVector) else AVector(np.asarray(a, dtype=float)).a
    return State(arr * arr)
