"""Fixed-step RK4 integration, trajectory recording and fast-period estimation.

The two lattice fields (``FastField`` and ``FullField``) run through a
compiled kernel; any other callable ``f(u) -> du`` goes through the plain
Python loop. Both paths perform the same arithmetic in the same order, and
positivity is re-checked after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .dynamics import State, as_state, fast_rhs, fast_rhs_array, full_rhs_array
from .errors import FixedPoint, InvalidInput, NoReturnFound, PositivityError

DEFAULT_THRESHOLD = 0.25
FIXED_POINT_TOL = 1e-10


class FastField:
    """``nu = 0`` lattice field."""

    tag = "fast"
    nu = 0.0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return fast_rhs_array(np.asarray(u, dtype=float))

    def __repr__(self) -> str:
        return "FastField()"


class FullField:
    """Fast field plus ``nu`` times the diffusion stencil."""

    def __init__(self, nu: float):
        nu = float(nu)
        if not (nu >= 0.0 and math.isfinite(nu)):
            raise InvalidInput(f"nu must be finite and >= 0, got {nu}")
        self.nu = nu

    @property
    def tag(self) -> str:
        return f"full({self.nu!r})"

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return full_rhs_array(np.asarray(u, dtype=float), self.nu)

    def __repr__(self) -> str:
        return f"FullField(nu={self.nu!r})"


Field = Callable[[np.ndarray], np.ndarray]


def _lattice_nu(field) -> float | None:
    if isinstance(field, (FastField, FullField)):
        return field.nu
    return None


@numba.njit(cache=True)
def _lattice_rhs(u, nu, out):
    n = u.shape[0]
    for k in range(n):
        up = u[(k + 1) % n]
        um = u[(k - 1) % n]
        out[k] = u[k] * (um - up) + nu * (up - 2.0 * u[k] + um)


@numba.njit(cache=True)
def _rk4_lattice(u0, nu, dt, nsteps, sample_every, out):
    """Integrate in place; returns the index of the first failing step or -1."""
    n = u0.shape[0]
    u = u0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    half = 0.5 * dt
    sixth = dt / 6.0
    out[0, :] = u
    row = 1
    for step in range(nsteps):
        _lattice_rhs(u, nu, k1)
        for i in range(n):
            tmp[i] = u[i] + half * k1[i]
        _lattice_rhs(tmp, nu, k2)
        for i in range(n):
            tmp[i] = u[i] + half * k2[i]
        _lattice_rhs(tmp, nu, k3)
        for i in range(n):
            tmp[i] = u[i] + dt * k3[i]
        _lattice_rhs(tmp, nu, k4)
        for i in range(n):
            u[i] = u[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(n):
            if not (u[i] > 0.0) or not np.isfinite(u[i]):
                out[min(row, out.shape[0] - 1), :] = u
                return step
        if (step + 1) % sample_every == 0:
            out[row, :] = u
            row += 1
    return -1


def _rk4_array(field: Field, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = np.asarray(field(u), dtype=float)
    k2 = np.asarray(field(u + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(field(u + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(field(u + dt * k3), dtype=float)
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _first_bad(u: np.ndarray) -> int:
    bad = np.flatnonzero(~(u > 0.0) | ~np.isfinite(u))
    return int(bad[0]) if bad.size else -1


def rk4_step(field: Field, state: State | np.ndarray, dt: float) -> State:
    """One classical Runge-Kutta step; raises ``PositivityError`` on a non-positive result."""
    if not dt > 0.0:
        raise InvalidInput(f"dt must be positive, got {dt}")
    u = as_state(state).u
    out = _rk4_array(field, u, dt)
    k = _first_bad(out)
    if k >= 0:
        raise PositivityError(f"U_{k + 1} = {out[k]!r} after a step of dt={dt}", index=k, value=float(out[k]))
    return State(out)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled states; ``states`` is an (S, N) array."""

    times: np.ndarray
    states: np.ndarray
    dt: float
    field_tag: str
    rhs_evals: int

    def __len__(self) -> int:
        return self.times.size

    def state(self, i: int) -> State:
        return State(self.states[i])

    @property
    def final(self) -> State:
        return State(self.states[-1])

    @property
    def sample_interval(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def n_steps_for(t_end: float, dt: float) -> int:
    """Number of whole steps of size ``dt`` that fit in ``t_end`` (roundoff tolerant)."""
    return int(math.floor(t_end / dt + 1e-9))


def integrate_steps(field: Field, state0: State | np.ndarray, dt: float, nsteps: int,
                    sample_every: int = 1, t0: float = 0.0) -> Trajectory:
    """Take exactly ``nsteps`` RK4 steps, keeping every ``sample_every``-th state and the first."""
    if not dt > 0.0:
        raise InvalidInput(f"dt must be positive, got {dt}")
    if nsteps < 0 or sample_every < 1:
        raise InvalidInput("nsteps must be >= 0 and sample_every >= 1")
    u0 = as_state(state0).u
    nrows = nsteps // sample_every + 1
    out = np.empty((nrows, u0.size))
    nu = _lattice_nu(field)
    if nu is not None:
        failed = _rk4_lattice(u0.copy(), nu, dt, nsteps, sample_every, out)
        if failed >= 0:
            bad_row = out[min(failed // sample_every + 1, nrows - 1)]
            k = _first_bad(bad_row)
            raise PositivityError(
                f"positivity lost at t={t0 + (failed + 1) * dt:.6g}: U_{k + 1} = {bad_row[k]!r}",
                index=k, value=float(bad_row[k]), time=t0 + (failed + 1) * dt)
    else:
        u = u0.copy()
        out[0] = u
        row = 1
        for step in range(nsteps):
            u = _rk4_array(field, u, dt)
            k = _first_bad(u)
            if k >= 0:
                t_fail = t0 + (step + 1) * dt
                raise PositivityError(f"positivity lost at t={t_fail:.6g}: U_{k + 1} = {u[k]!r}",
                                      index=k, value=float(u[k]), time=t_fail)
            if (step + 1) % sample_every == 0:
                out[row] = u
                row += 1
    times = t0 + dt * sample_every * np.arange(nrows)
    return Trajectory(times=times, states=out, dt=dt,
                      field_tag=getattr(field, "tag", "custom"), rhs_evals=4 * nsteps)


def integrate_record(field: Field, state0: State | np.ndarray, t_end: float, dt: float,
                     sample_every: int = 1) -> Trajectory:
    """Integrate to within ``dt`` of ``t_end`` with fixed steps, sampling every ``sample_every`` steps."""
    if not t_end >= 0.0:
        raise InvalidInput(f"t_end must be >= 0, got {t_end}")
    if not dt > 0.0:
        raise InvalidInput(f"dt must be positive, got {dt}")
    return integrate_steps(field, state0, dt, n_steps_for(t_end, dt), sample_every)


# ---------------------------------------------------------------- periods


@dataclass(frozen=True)
class PeriodEstimate:
    period: float
    return_distance: float
    confident: bool


def return_distance(states: np.ndarray, u0: np.ndarray) -> np.ndarray:
    """RMS log-ratio ``sqrt(mean(log(U/U0)^2))`` for every row of ``states``.

    Componentwise relative, so large and small lattice values weigh alike.
    """
    return np.sqrt(np.mean(np.log(np.asarray(states) / u0) ** 2, axis=-1))


def _parabola_vertex(d: np.ndarray, i: int) -> tuple[float, float]:
    a, b, c = d[i - 1], d[i], d[i + 1]
    curv = a - 2.0 * b + c
    if curv <= 0.0:
        return 0.0, float(b)
    off = 0.5 * (a - c) / curv
    return float(off), float(b - 0.25 * (a - c) * off)


def nearest_return(states: np.ndarray, dt: float, lo: int, hi: int | None = None) -> tuple[float, float]:
    """Refined time and distance of the closest return to ``states[0]`` among samples ``lo..hi``.

    Used to track a known period: the minimum is searched inside a window
    rather than by threshold.
    """
    d = return_distance(states, states[0])
    hi = d.size - 2 if hi is None else min(hi, d.size - 2)
    lo = max(lo, 1)
    if hi < lo:
        raise NoReturnFound("return window is empty")
    i = lo + int(np.argmin(d[lo:hi + 1]))
    off, dist = _parabola_vertex(d, i)
    return (i + off) * dt, dist


def estimate_fast_period(state0: State | np.ndarray, search_horizon: float = 10.0, dt: float = 1e-3,
                         threshold: float = DEFAULT_THRESHOLD) -> PeriodEstimate:
    """Approximate return time of the fast orbit through ``state0``.

    Integrates the fast field and takes the first local minimum of the
    log-ratio distance to ``state0`` that falls below ``threshold``, after an
    exclusion window of ``10 dt``. The minimum is refined with a parabola
    through the three samples around it.

    Raises:
        FixedPoint: the fast field vanishes at ``state0``.
        NoReturnFound: no qualifying minimum before ``search_horizon``.
    """
    return _search_period(state0, search_horizon, dt, threshold)[0]


def _search_period(state0, search_horizon, dt, threshold, chunk_steps=1000):
    """Period search in chunks so the cost stops at the first return; also returns rhs evals."""
    u0 = as_state(state0).u
    if not (search_horizon > 0.0 and dt > 0.0 and threshold > 0.0):
        raise InvalidInput("search_horizon, dt and threshold must be positive")
    if np.linalg.norm(fast_rhs(u0)) <= FIXED_POINT_TOL * float(np.dot(u0, u0)):
        raise FixedPoint(f"fast field vanishes at {u0.tolist()}")
    total = n_steps_for(search_horizon, dt)
    exclusion = 10
    d = return_distance(u0[None, :], u0)
    u = u0
    done = 0
    i = exclusion + 1
    while done < total:
        m = min(chunk_steps, total - done)
        seg = integrate_steps(FastField(), u, dt, m)
        d = np.concatenate([d, return_distance(seg.states[1:], u0)])
        u = seg.states[-1]
        done += m
        while i < d.size - 1:
            if d[i] <= d[i - 1] and d[i] < d[i + 1] and d[i] <= threshold:
                off, dist = _parabola_vertex(d, i)
                est = PeriodEstimate(period=(i + off) * dt, return_distance=dist,
                                     confident=dist <= 0.5 * threshold)
                return est, 4 * done
            i += 1
    raise NoReturnFound(f"no return below {threshold} within sigma <= {search_horizon}")


def peak_period(traj: Trajectory, component: int = 0) -> float:
    """Mean spacing of local maxima of one component; a cross-check on ``estimate_fast_period``."""
    x = traj.states[:, component]
    peaks = np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1
    if peaks.size < 2:
        raise NoReturnFound(f"fewer than two peaks of U_{component + 1}")
    return float(np.mean(np.diff(traj.times[peaks])))
