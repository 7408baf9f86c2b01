"""Reference integrations, error tables and cost accounting."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..dynamics import State, as_state
from ..errors import InvalidInput, NumericalFailure
from ..integrate import FullField, estimate_fast_period, integrate_steps
from ..invariants import observables_along
from ..multiscale import METHODS, ObservableSeries, ProjectiveConfig, run_multiscale

FIG1_STATE = (1.0, 1.0, 1.0, 3.0, 2.0, 1.0)
LOCAL_INVARIANT_STATE = (3.0, 2.0, 1.0, 3.0, 2.0, 1.0)
DECAY_STATE = (1.0, 1.0, 1.0, 1.0, 4.0, 1.0)
TABLE_NU = 1e-4
TABLE_CHECKPOINT_PERIODS = 600
TABLE_STEPS = (3, 6, 12)
# reference resolution for the tables: RK4 drift of the invariants must sit
# well below the 1e-4 error level being measured
TABLE_REFERENCE_STEPS_PER_PERIOD = 400
# equation-free bursts run the full system; at 50 steps/period the RK4 drift of
# the invariants over one period is ~2% of the nu-driven change
EF_STEPS_PER_PERIOD = 200


def run_reference(state0: State | np.ndarray, nu: float, t_end: float, dt: float,
                  sample_every: int = 1) -> ObservableSeries:
    """Direct RK4 integration of the full system with observables at every sample."""
    if not nu >= 0.0:
        raise InvalidInput(f"nu must be >= 0, got {nu}")
    if not (t_end >= 0.0 and dt > 0.0):
        raise InvalidInput("t_end must be >= 0 and dt > 0")
    nsteps = int(round(t_end / dt))
    if abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        nsteps = int(math.floor(t_end / dt + 1e-9))
    traj = integrate_steps(FullField(nu), state0, dt, nsteps, sample_every)
    steps_at = sample_every * np.arange(len(traj))
    return ObservableSeries(times=traj.times, values=observables_along(traj.states),
                            method_tag="reference", rhs_evals=4 * steps_at,
                            states=traj.states, meta={"dt": dt, "nu": nu})


@dataclass
class ErrorTable:
    """Checkpoint errors ``|v_proj - v_ref| * 1e3`` keyed by Euler step length in periods."""

    method: str
    nu: float
    checkpoint_time: float
    checkpoint_periods: int
    period: float
    columns: list[str]
    rows: dict[int, np.ndarray]
    reference: np.ndarray
    scale: float = 1e3
    projected: dict[int, np.ndarray] = field(default_factory=dict)

    def render(self) -> str:
        title = (f"{self.method} errors (x{self.scale:g}) at t = {self.checkpoint_time:.2f} "
                 f"({self.checkpoint_periods} fast periods, period {self.period:.4f}, nu = {self.nu:g})")
        head = "Euler step (periods) | " + " | ".join(f"{c:>8}" for c in self.columns)
        lines = [title, head, "-" * len(head)]
        for step in sorted(self.rows):
            cells = " | ".join(f"{x:8.3f}" for x in self.rows[step])
            lines.append(f"{step:>20} | {cells}")
        return "\n".join(lines)

    def column_monotone(self) -> list[bool]:
        steps = sorted(self.rows)
        data = np.array([self.rows[s] for s in steps])
        return [bool(np.all(np.diff(data[:, j]) > 0)) for j in range(data.shape[1])]


def table_config(method: str, nu: float, euler_step: int, **overrides) -> ProjectiveConfig:
    spp = EF_STEPS_PER_PERIOD if method == "equation_free" else 50
    base = ProjectiveConfig(nu=nu, euler_step_periods=euler_step, steps_per_period=spp)
    return replace(base, **overrides) if overrides else base


def make_error_table(method: str, state0=DECAY_STATE, nu: float = TABLE_NU,
                     checkpoint_periods: int = TABLE_CHECKPOINT_PERIODS, step_set=TABLE_STEPS,
                     reference_steps_per_period: int = TABLE_REFERENCE_STEPS_PER_PERIOD,
                     workers: int = 1, **cfg_overrides) -> ErrorTable:
    """Projective runs for each Euler step length against one direct reference run.

    The checkpoint is ``checkpoint_periods`` times the fast period of
    ``state0``. Every step length must divide ``checkpoint_periods``.
    """
    if method not in METHODS:
        raise InvalidInput(f"method must be one of {METHODS}, got {method!r}")
    step_set = tuple(int(s) for s in step_set)
    for s in step_set:
        if s < 1 or checkpoint_periods % s:
            raise InvalidInput(f"Euler step {s} does not divide the checkpoint ({checkpoint_periods} periods)")
    u0 = as_state(state0).u
    period = estimate_fast_period(u0).period
    t_check = checkpoint_periods * period
    v0 = observables_along(u0[None, :])[0]
    if nu == 0.0:
        # invariants are exact first integrals of the fast flow
        v_ref = v0
    else:
        ref = run_reference(u0, nu, t_check, period / reference_steps_per_period,
                            sample_every=checkpoint_periods * reference_steps_per_period)
        v_ref = ref.values[-1]

    def cell(step):
        cfg = table_config(method, nu, step, **cfg_overrides)
        try:
            series = run_multiscale(method, u0, cfg, checkpoint_periods, period=period)
        except NumericalFailure as exc:
            raise NumericalFailure(f"table cell (method={method}, Euler step={step}) failed: {exc}") from exc
        return series.values[-1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            finals = dict(zip(step_set, pool.map(cell, step_set)))
    else:
        finals = {s: cell(s) for s in step_set}
    rows = {s: 1e3 * np.abs(finals[s][1:] - v_ref[1:]) for s in step_set}
    columns = [f"v_{j}" for j in range(2, v0.size + 1)]
    return ErrorTable(method=method, nu=nu, checkpoint_time=t_check, checkpoint_periods=checkpoint_periods,
                      period=period, columns=columns, rows=rows, reference=v_ref, projected=finals)


# ------------------------------------------------------------------ cost


@dataclass
class CostReport:
    rhs_evals_direct: int
    rhs_evals_multiscale: int
    speedup: float
    horizon: float
    assumptions: dict = field(default_factory=dict)

    def render(self) -> str:
        lines = [f"horizon t = {self.horizon:.2f}",
                 f"direct rhs evaluations     : {self.rhs_evals_direct}",
                 f"multiscale rhs evaluations : {self.rhs_evals_multiscale}",
                 f"speedup                    : {self.speedup:.2f}"]
        lines += [f"  {k}: {v}" for k, v in self.assumptions.items()]
        return "\n".join(lines)


def cost_report(reference: ObservableSeries, multiscale: ObservableSeries, rtol: float = 1e-2,
                **assumptions) -> CostReport:
    """Ratio of right-hand-side evaluations of two runs over the same horizon."""
    t_ref, t_ms = float(reference.times[-1]), float(multiscale.times[-1])
    if abs(t_ref - t_ms) > rtol * max(abs(t_ref), abs(t_ms), 1e-300):
        raise InvalidInput(f"horizons differ: direct run ends at {t_ref}, multiscale at {t_ms}")
    direct, multi = reference.rhs_eval_count, multiscale.rhs_eval_count
    if direct <= 0 or multi <= 0:
        raise InvalidInput("both runs must record a positive number of rhs evaluations")
    return CostReport(rhs_evals_direct=direct, rhs_evals_multiscale=multi, speedup=direct / multi,
                      horizon=t_ms, assumptions=dict(assumptions))


def decay_horizon(nu: float, n: int, reduction: float = 1e-5) -> float:
    """Time for the slowest diffusion mode ``exp(-nu (2 - 2 cos(2 pi / N)) t)`` to fall by ``reduction``."""
    slowest = 2.0 - 2.0 * math.cos(2.0 * math.pi / n)
    return math.log(1.0 / reduction) / (nu * slowest)


@dataclass
class SpeedupResult:
    report: CostReport
    reference: ObservableSeries
    multiscale: ObservableSeries
    accuracy: float


def speedup_scenario(nu: float = 1e-3, state0=FIG1_STATE, reduction: float = 1e-5,
                     steps_per_period: int = 50, euler_step_periods: int | None = None,
                     base_nu: float = 1e-3, base_euler_step: int = 20) -> SpeedupResult:
    """Direct integration vs Young-measure projection until diffusion decays by ``reduction``.

    The Euler step is scaled with ``1/nu`` from the base setting so that
    ``nu * step`` (and hence the Euler accuracy) stays fixed. ``accuracy`` is
    the largest checkpoint error of ``v_2 ..`` relative to that observable's
    total change over the run.
    """
    u0 = as_state(state0).u
    if not nu > 0.0:
        raise InvalidInput("the speedup scenario needs nu > 0")
    if euler_step_periods is None:
        euler_step_periods = max(1, int(round(base_euler_step * base_nu / nu)))
    cfg = ProjectiveConfig(nu=nu, euler_step_periods=euler_step_periods, steps_per_period=steps_per_period)
    period = estimate_fast_period(u0).period
    horizon = decay_horizon(nu, u0.size, reduction)
    nsteps = max(1, int(round(horizon / period)) // euler_step_periods)
    total_periods = nsteps * euler_step_periods
    multi = run_multiscale("young_measure", u0, cfg, total_periods)
    dt = period / steps_per_period
    ref = run_reference(u0, nu, total_periods * period, dt, sample_every=euler_step_periods * steps_per_period)
    change = np.abs(ref.values[0, 1:] - ref.values[-1, 1:])
    err = np.abs(multi.values[:, 1:] - ref.values[:, 1:]).max(axis=0)
    accuracy = float(np.max(err / change))
    report = cost_report(ref, multi, steps_per_period=steps_per_period, euler_step_periods=euler_step_periods,
                         projective_steps=nsteps, nu=nu, period=round(period, 6),
                         reduction=reduction, accuracy=round(accuracy, 6))
    return SpeedupResult(report=report, reference=ref, multiscale=multi, accuracy=accuracy)
