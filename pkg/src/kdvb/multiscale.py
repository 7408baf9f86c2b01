"""Projective integration of the slow observables.

Two ways of estimating ``dv/dt`` for the fast invariants ``v_j``:

* Young-measure averaging: sample one or more fast orbits (``nu = 0``) at
  uniform spacing and average ``nu * grad v_j . D`` over the samples.
* Equation-free: run the full system for one fast period and take the slope
  of the chord of ``v_j`` between the two "periodic" end points.

Either estimate drives a forward Euler step of ``euler_step_periods`` fast
periods in observable space, after which a lattice state consistent with the
new observables is rebuilt by ``lift``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import State, as_state
from .errors import (InvalidInput, LeftPositiveOrthant, LiftFailure, MaxItersExceeded,
                     NumericalFailure, ProjectiveRunAborted, SingularJacobian)
from .integrate import (DEFAULT_THRESHOLD, FastField, FullField, _search_period, integrate_steps,
                        nearest_return)
from .invariants import _gradients_stack, _observables_stack, drift_integrands, n_observables

log = logging.getLogger(__name__)

METHODS = ("young_measure", "equation_free")


@dataclass(frozen=True)
class ProjectiveConfig:
    nu: float
    euler_step_periods: int = 3
    averaging_periods: int = 1
    steps_per_period: int = 50
    # RK4 steps between consecutive samples; 1 matches the 50 steps/period cost model
    substeps: int = 1
    fixed_indices: tuple[int, ...] | None = None
    lift_tolerance: float = 1e-10
    lift_accept_tolerance: float | None = 1e-8
    lift_max_iters: int = 20
    period_dt: float = 1e-3
    period_horizon: float = 20.0
    period_threshold: float = DEFAULT_THRESHOLD
    # fraction of a period searched on either side of the expected return
    return_window: float = 0.1

    def __post_init__(self):
        if not (self.nu >= 0.0 and np.isfinite(self.nu)):
            raise InvalidInput(f"nu must be finite and >= 0, got {self.nu}")
        for name in ("euler_step_periods", "averaging_periods", "steps_per_period", "substeps",
                     "lift_max_iters"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidInput(f"{name} must be a positive integer, got {value!r}")
        if self.steps_per_period < 4:
            raise InvalidInput("steps_per_period must be at least 4")
        if not 0.0 < self.return_window < 0.5:
            raise InvalidInput("return_window must lie in (0, 0.5)")
        if not self.lift_tolerance > 0.0:
            raise InvalidInput("lift_tolerance must be positive")

    def lift_fixed_count(self, n: int) -> int:
        return n // 2 - 1

    def default_fixed(self, n: int) -> tuple[int, ...]:
        if self.fixed_indices is not None:
            return tuple(self.fixed_indices)
        return tuple(range(self.lift_fixed_count(n)))


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Equally weighted states sampled at uniform spacing along one fast orbit."""

    samples: np.ndarray
    dt: float
    period: float

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise InvalidInput("an empirical measure needs at least two samples")

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def weight(self) -> float:
        return 1.0 / self.count

    @property
    def last(self) -> State:
        return State(self.samples[-1])

    def observable_spread(self) -> np.ndarray:
        """Relative spread ``(max - min) / |mean|`` of every observable over the samples."""
        v = _observables_stack(self.samples)
        return np.ptp(v, axis=0) / np.abs(v.mean(axis=0))


@dataclass
class ObservableSeries:
    """Time-stamped observable vectors with cumulative right-hand-side evaluation counts."""

    times: np.ndarray
    values: np.ndarray
    method_tag: str
    rhs_evals: np.ndarray
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def rhs_eval_count(self) -> int:
        return int(self.rhs_evals[-1]) if self.rhs_evals.size else 0

    def __len__(self) -> int:
        return self.times.size

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > rtol * max(1.0, abs(t)):
            raise KeyError(f"no sample at t={t} in the {self.method_tag} series")
        return i

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]


# ----------------------------------------------------------------- measure


def _initial_period(u: np.ndarray, cfg: ProjectiveConfig) -> tuple[float, int]:
    est, evals = _search_period(u, cfg.period_horizon, cfg.period_dt, cfg.period_threshold)
    return est.period, evals


def _fast_burst(u: np.ndarray, period: float, cfg: ProjectiveConfig):
    """Fast orbit over the averaging window plus the return search margin."""
    spp = cfg.steps_per_period
    n = cfg.averaging_periods * spp
    margin = max(2, int(np.ceil(cfg.return_window * spp)))
    dt = period / spp
    sub = cfg.substeps
    traj = integrate_steps(FastField(), u, dt / sub, (n + margin + 1) * sub, sub)
    ret, _ = nearest_return(traj.states, dt, n - margin, n + margin)
    measure = EmpiricalMeasure(samples=traj.states[:n], dt=dt, period=period)
    return measure, ret / cfg.averaging_periods, traj.rhs_evals


def build_measure(state0: State | np.ndarray, cfg: ProjectiveConfig, period: float | None = None) -> EmpiricalMeasure:
    """Sample ``averaging_periods * steps_per_period`` states along the fast orbit of ``state0``.

    The fast period is estimated when not supplied.
    """
    u = as_state(state0).u
    if period is None:
        period, _ = _initial_period(u, cfg)
    dt = period / cfg.steps_per_period
    n = cfg.averaging_periods * cfg.steps_per_period
    traj = integrate_steps(FastField(), u, dt / cfg.substeps, (n - 1) * cfg.substeps, cfg.substeps)
    return EmpiricalMeasure(samples=traj.states, dt=dt, period=period)


def average_drift(measure: EmpiricalMeasure) -> np.ndarray:
    """Uniform average of ``grad v_j . D`` over the measure (no factor of ``nu``)."""
    drift = drift_integrands(measure.samples).mean(axis=0)
    drift[0] = 0.0  # mass: constant gradient against a telescoping stencil
    return drift


# ------------------------------------------------------------------- lift


@dataclass(frozen=True)
class LiftResult:
    state: State
    fixed_indices: tuple[int, ...]
    iterations: int
    residual: float
    exact: bool = True


def _relative_residual(u: np.ndarray, target: np.ndarray, scale: np.ndarray, log_product: bool) -> np.ndarray:
    return (_observables_stack(u, log_product) - target) / scale


def _check_target(v_target: np.ndarray, n: int, log_product: bool) -> None:
    if v_target.shape != (n_observables(n),):
        raise InvalidInput(f"target must have {n_observables(n)} entries for N={n}, got {v_target.shape}")
    if not np.all(np.isfinite(v_target)):
        raise InvalidInput("target observables must be finite")
    if not np.all(v_target[:-1] > 0.0):
        raise InvalidInput("trace observables must be positive")
    if not log_product and not v_target[-1] > 0.0:
        raise InvalidInput(f"product observable must be positive, got {v_target[-1]!r}")


def _check_fixed(fixed: tuple[int, ...], n: int) -> tuple[int, ...]:
    fixed = tuple(int(k) for k in fixed)
    if len(fixed) != n // 2 - 1 or len(set(fixed)) != len(fixed) or any(not 0 <= k < n for k in fixed):
        raise InvalidInput(f"need {n // 2 - 1} distinct fixed indices in 0..{n - 1}, got {fixed}")
    return fixed


def _newton_lift(v_target, u0, fixed, tol, max_iters, log_product) -> LiftResult:
    """Damped Newton on the free components.

    On failure the raised error carries ``best``, the lowest-residual
    iterate seen, as a ``LiftResult``.
    """
    n = u0.size
    free = np.array([k for k in range(n) if k not in fixed])
    scale = np.abs(v_target)
    u = u0.copy()
    r = _relative_residual(u, v_target, scale, log_product)
    best = LiftResult(State(u), fixed, 0, float(np.max(np.abs(r))), exact=False)

    def fail(exc):
        exc.best = best
        return exc

    for it in range(max_iters + 1):
        res = float(np.max(np.abs(r)))
        if res < best.residual:
            best = LiftResult(State(u), fixed, it, res, exact=False)
        if res <= tol:
            return LiftResult(State(u), fixed, it, res)
        if it == max_iters:
            break
        jac = _gradients_stack(u, log_product)[:, free] / scale[:, None]
        if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > 1e13:
            raise fail(SingularJacobian(f"lifting Jacobian singular with fixed indices {fixed}"))
        step = np.linalg.solve(jac, -r)
        lam = 1.0
        norm_r = np.linalg.norm(r)
        while True:
            trial = u.copy()
            trial[free] += lam * step
            if np.all(trial > 0.0):
                r_trial = _relative_residual(trial, v_target, scale, log_product)
                if np.linalg.norm(r_trial) < (1.0 - 1e-4 * lam) * norm_r:
                    break
            lam *= 0.5
            if lam < 2.0 ** -12:
                if not np.all(trial > 0.0):
                    raise fail(LeftPositiveOrthant(f"damping could not keep the iterate positive (fixed {fixed})"))
                raise fail(MaxItersExceeded(f"line search stalled at residual {res:.3e} (fixed {fixed})"))
        u, r = trial, r_trial
    raise fail(MaxItersExceeded(f"residual {res:.3e} after {max_iters} Newton iterations (fixed {fixed})"))


def _rotation_order(u, v_target, first, log_product):
    """Default index set first, then the others by conditioning of their Jacobian at the template."""
    n = u.size
    combos = [c for c in itertools.combinations(range(n), n // 2 - 1) if c != first]
    grads = _gradients_stack(u, log_product) / np.abs(v_target)[:, None]

    def cond(c):
        free = [k for k in range(n) if k not in c]
        return np.linalg.cond(grads[:, free])

    return [first] + sorted(combos, key=cond)


def solve_lift(v_target, template: State | np.ndarray, fixed_indices=None, *, tol: float = 1e-10,
               max_iters: int = 20, rotate: bool | None = None, log_product: bool = False,
               accept_tol: float | None = None) -> LiftResult:
    """Find a positive state with prescribed observables, keeping ``N/2 - 1`` template entries fixed.

    Damped Newton on the free components with residuals relative to the
    target. With ``rotate`` (the default when no index set is given) a failed
    solve is retried with the other index sets, best-conditioned first.

    ``accept_tol`` admits the best iterate found when no index set reaches
    ``tol`` but one gets below ``accept_tol``; the result is then marked
    ``exact=False``. Near the constant state, Euler-projected targets can sit
    marginally outside the attainable set and this is what keeps long runs
    going there.

    Raises:
        InvalidInput: infeasible target (non-positive trace or product) or bad index set.
        SingularJacobian, MaxItersExceeded, LeftPositiveOrthant: without rotation.
        LiftFailure: every index set failed.
    """
    u = as_state(template).u
    n = u.size
    v_target = np.asarray(v_target, dtype=float)
    _check_target(v_target, n, log_product)
    first = _check_fixed(tuple(range(n // 2 - 1)) if fixed_indices is None else fixed_indices, n)
    if rotate is None:
        rotate = fixed_indices is None
    order = _rotation_order(u, v_target, first, log_product) if rotate else [first]
    causes = []
    best = None

    def acceptable():
        return accept_tol is not None and best is not None and best.residual <= accept_tol

    for fixed in order:
        try:
            return _newton_lift(v_target, u, fixed, tol, max_iters, log_product)
        except np.linalg.LinAlgError as exc:
            err = SingularJacobian(f"{exc} (fixed {fixed})")
        except (SingularJacobian, MaxItersExceeded, LeftPositiveOrthant) as exc:
            err = exc
            if best is None or exc.best.residual < best.residual:
                best = exc.best
            if isinstance(exc, MaxItersExceeded) and acceptable():
                # stalled just short of tol: the target is marginally unattainable, rotating won't help
                log.debug("inexact lift accepted at residual %.3e", best.residual)
                return best
        if not rotate:
            if acceptable():
                return best
            raise err
        causes.append((fixed, err))
    if acceptable():
        return best
    raise LiftFailure(f"lifting failed for all {len(order)} fixed-index choices", causes)


def lift(v_target, template: State | np.ndarray, fixed_indices=None, *, tol: float = 1e-10,
         max_iters: int = 20, log_product: bool = False) -> State:
    return solve_lift(v_target, template, fixed_indices, tol=tol, max_iters=max_iters,
                      log_product=log_product).state


# ------------------------------------------------------------------ steps


@dataclass(frozen=True)
class StepResult:
    state: State
    v_new: np.ndarray
    next_period: float
    rhs_evals: int
    lift_residual: float
    fixed_indices: tuple[int, ...]


def _lift_for(v_new, template, cfg: ProjectiveConfig) -> tuple[LiftResult, np.ndarray]:
    """Lift and return the observables the run continues from.

    After an inexact lift the run continues from the lifted state's own
    observables (mass kept exact), so an unattainable target is not carried
    forward into the next step.
    """
    n = template.size
    res = solve_lift(v_new, template, cfg.default_fixed(n), tol=cfg.lift_tolerance,
                     max_iters=cfg.lift_max_iters, rotate=True, accept_tol=cfg.lift_accept_tolerance)
    if res.exact:
        return res, v_new
    v_real = _observables_stack(res.state.u)
    v_real[0] = v_new[0]
    return res, v_real


def _ym_step(u, v_old, period, step_time, cfg: ProjectiveConfig) -> StepResult:
    measure, next_period, evals = _fast_burst(u, period, cfg)
    v_new = v_old + step_time * cfg.nu * average_drift(measure)
    v_new[0] = v_old[0]
    res, v_next = _lift_for(v_new, measure.samples[-1], cfg)
    return StepResult(res.state, v_next, next_period, evals, res.residual, res.fixed_indices)


def _ef_step(u, v_old, period, step_time, cfg: ProjectiveConfig) -> StepResult:
    spp = cfg.steps_per_period
    margin = max(2, int(np.ceil(cfg.return_window * spp)))
    dt = period / spp
    sub = cfg.substeps
    traj = integrate_steps(FullField(cfg.nu), u, dt / sub, (spp + margin + 1) * sub, sub)
    ends = _observables_stack(traj.states[[0, spp]])
    slope = (ends[1] - ends[0]) / (spp * dt)
    slope[0] = 0.0  # mass is conserved exactly; the chord only sees roundoff
    if cfg.nu == 0.0:
        # the exact fast flow conserves every v_j; what the chord sees is RK4 drift
        slope[:] = 0.0
    v_new = v_old + step_time * slope
    ret, _ = nearest_return(traj.states, dt, spp - margin, spp + margin)
    res, v_next = _lift_for(v_new, traj.states[spp], cfg)
    return StepResult(res.state, v_next, ret, traj.rhs_evals, res.residual, res.fixed_indices)


_STEPPERS = {"young_measure": _ym_step, "equation_free": _ef_step}


def _single_step(method, state, cfg, period):
    u = as_state(state).u
    if period is None:
        period, _ = _initial_period(u, cfg)
    v_old = _observables_stack(u)
    out = _STEPPERS[method](u, v_old, period, cfg.euler_step_periods * period, cfg)
    return out.state, out.v_new


def ym_projective_step(state: State | np.ndarray, cfg: ProjectiveConfig,
                       period: float | None = None) -> tuple[State, np.ndarray]:
    """One Young-measure projective Euler step of ``euler_step_periods`` fast periods."""
    return _single_step("young_measure", state, cfg, period)


def ef_projective_step(state: State | np.ndarray, cfg: ProjectiveConfig,
                       period: float | None = None) -> tuple[State, np.ndarray]:
    """One equation-free step: chord slope over one period of the full system, then Euler."""
    return _single_step("equation_free", state, cfg, period)


def chord_slope(state: State | np.ndarray, nu: float, period: float, steps_per_period: int = 50) -> np.ndarray:
    """Slope of ``v_j`` between the ends of one fast period of the full system."""
    dt = period / steps_per_period
    traj = integrate_steps(FullField(nu), state, dt, steps_per_period)
    ends = _observables_stack(traj.states[[0, -1]])
    return (ends[1] - ends[0]) / (steps_per_period * dt)


def run_multiscale(method: str, state0: State | np.ndarray, cfg: ProjectiveConfig, total_periods: int,
                   period: float | None = None) -> ObservableSeries:
    """Projective run over ``total_periods`` fast periods of the initial state.

    Projective steps have the fixed length ``euler_step_periods * P0`` with
    ``P0`` the period of ``state0``, so checkpoints land on multiples of
    ``P0``. The sampling period used inside each step is re-estimated from
    the previous step's fast orbit.

    Raises:
        ProjectiveRunAborted: a step failed; the partial series is attached.
    """
    if method not in _STEPPERS:
        raise InvalidInput(f"method must be one of {METHODS}, got {method!r}")
    if not isinstance(total_periods, (int, np.integer)) or total_periods < 0:
        raise InvalidInput(f"total_periods must be a non-negative integer, got {total_periods!r}")
    if method == "equation_free" and cfg.nu <= 0.0 and total_periods > 0:
        log.info("equation-free run with nu = 0: chord slopes are set to zero")
    u = as_state(state0).u
    evals = 0
    if period is None:
        period, evals = _initial_period(u, cfg)
    p0 = period
    step_time = cfg.euler_step_periods * p0
    nsteps = total_periods // cfg.euler_step_periods
    stepper = _STEPPERS[method]

    v = _observables_stack(u)
    times, values, counts, states, residuals = [0.0], [v], [evals], [u], [0.0]

    def series():
        return ObservableSeries(
            times=np.array(times), values=np.array(values), method_tag=method,
            rhs_evals=np.array(counts, dtype=np.int64), states=np.array(states),
            meta={"period0": p0, "step_time": step_time, "config": cfg,
                  "lift_residuals": np.array(residuals)})

    for step in range(nsteps):
        try:
            out = stepper(u, v, period, step_time, cfg)
        except NumericalFailure as exc:
            raise ProjectiveRunAborted(f"{method} step {step} failed: {exc}", step, series(), exc) from exc
        u, v, period = out.state.u, out.v_new, out.next_period
        evals += out.rhs_evals
        times.append((step + 1) * step_time)
        values.append(v)
        counts.append(evals)
        states.append(u)
        residuals.append(out.lift_residual)
    return series()


def with_nu(cfg: ProjectiveConfig, nu: float) -> ProjectiveConfig:
    return replace(cfg, nu=nu)
