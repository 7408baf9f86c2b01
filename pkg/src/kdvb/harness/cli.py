"""Command-line front end.

Every knob can come from a flag, from a flat ``key = value`` config file
(``--config``) or from a named preset; flags win over the file, the file
wins over the preset.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import State, SystemParams
from ..errors import InvalidInput, NumericalFailure
from ..integrate import FastField, FullField, estimate_fast_period, integrate_steps
from ..invariants import drift_integrands, observable_vector, observables_along
from ..multiscale import ProjectiveConfig, run_multiscale
from . import experiments as ex
from .io import export_csv, fmt, read_config, write_rows

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

COMMANDS = ("simulate-fast", "simulate-full", "period", "observables", "project-ym", "project-ef",
            "table1", "table2", "speedup", "export")

# name -> (command it applies to, settings)
PRESETS = {
    "fig-torus": ("simulate-fast", {"init": ex.FIG1_STATE, "dt": 1e-3, "periods": 40, "sample-every": 10}),
    "fig-decay": ("simulate-full", {"init": ex.DECAY_STATE, "nu": ex.TABLE_NU, "periods": 3000,
                                    "snapshots": (600, 1200, 1800, 2400, 3000), "window": 3}),
    "table1": ("table1", {"init": ex.DECAY_STATE, "nu": ex.TABLE_NU, "periods": 600, "steps": (3, 6, 12)}),
    "table2": ("table2", {"init": ex.DECAY_STATE, "nu": ex.TABLE_NU, "periods": 600, "steps": (3, 6, 12)}),
    # euler-step None: scale the step with 1/nu from the base setting
    "speedup": ("speedup", {"init": ex.FIG1_STATE, "nu": 1e-3, "steps-per-period": 50, "euler-step": None}),
}

_COMMON_DEFAULTS = {"dt": None, "periods": 10, "euler-step": 3, "avg-periods": 1, "steps-per-period": 50,
                    "sample-every": 1, "workers": 1, "window": 1, "snapshots": ()}

COMMAND_DEFAULTS = {
    "simulate-fast": {"init": ex.FIG1_STATE, "dt": 1e-3, "periods": 10, "sample-every": 10},
    "simulate-full": {"init": ex.DECAY_STATE, "nu": ex.TABLE_NU, "periods": 600, "sample-every": 50},
    "period": {"init": ex.FIG1_STATE, "dt": 1e-3},
    "observables": {"init": ex.FIG1_STATE},
    "project-ym": {"init": ex.DECAY_STATE, "nu": ex.TABLE_NU, "periods": 600},
    "project-ef": {"init": ex.DECAY_STATE, "nu": ex.TABLE_NU, "periods": 600,
                   "steps-per-period": ex.EF_STEPS_PER_PERIOD},
    "table1": PRESETS["table1"][1],
    "table2": PRESETS["table2"][1],
    "speedup": PRESETS["speedup"][1],
    "export": {"init": ex.FIG1_STATE, "nu": ex.TABLE_NU, "periods": 3000},
}


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise InvalidInput(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _ints(text) -> tuple[int, ...]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise InvalidInput(f"expected a comma-separated list of integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _int(text) -> int:
    try:
        value = float(text)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"expected an integer, got {text!r}") from exc
    if value != int(value):
        raise InvalidInput(f"expected an integer, got {text!r}")
    return int(value)


def _float(text) -> float:
    try:
        return float(text)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"expected a number, got {text!r}") from exc


CONVERTERS = {
    "init": _floats, "n": _int, "nu": _float, "dt": _float, "periods": _int, "euler-step": _int,
    "avg-periods": _int, "steps-per-period": _int, "out": str, "sample-every": _int, "workers": _int,
    "steps": _ints, "snapshots": _ints, "window": _int, "reference-out": str, "preset": str,
}


@dataclass
class ExperimentSpec:
    """Fully resolved settings for one CLI invocation."""

    command: str
    state0: State
    params: SystemParams
    projective: ProjectiveConfig
    dt: float | None
    periods: int
    sample_every: int
    out: str | None
    reference_out: str | None = None
    steps: tuple[int, ...] = (3, 6, 12)
    snapshots: tuple[int, ...] = ()
    window: int = 1
    workers: int = 1
    auto_euler_step: bool = False
    checkpoints: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.periods < 0:
            raise InvalidInput("--periods must be >= 0")
        if self.sample_every < 1 or self.workers < 1 or self.window < 1:
            raise InvalidInput("--sample-every, --workers and --window must be >= 1")
        if self.dt is not None and not self.dt > 0.0:
            raise InvalidInput("--dt must be positive")
        for c in self.checkpoints:
            if not 0 <= c <= self.periods:
                raise InvalidInput(f"checkpoint at {c} periods lies outside the run of {self.periods} periods")


def resolve_settings(command: str, flags: dict, config: dict | None = None) -> dict:
    """Merge command defaults, preset, config file and flags (in increasing priority)."""
    config = dict(config or {})
    preset = flags.get("preset") or config.get("preset")
    merged = dict(_COMMON_DEFAULTS)
    merged.update(COMMAND_DEFAULTS[command])
    if preset:
        if preset not in PRESETS:
            raise InvalidInput(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        target, values = PRESETS[preset]
        if target != command:
            raise InvalidInput(f"preset {preset!r} belongs to the {target} command")
        merged.update(values)
    for key, raw in config.items():
        if key in ("config", "preset"):
            continue
        if key not in CONVERTERS:
            raise InvalidInput(f"unknown config key {key!r}")
        merged[key] = CONVERTERS[key](raw)
    for key, value in flags.items():
        if value is not None and key not in ("config", "preset"):
            merged[key] = value
    return merged


def build_spec(command: str, s: dict) -> ExperimentSpec:
    init = s["init"]
    n = s.get("n")
    if n is not None and n != len(init):
        raise InvalidInput(f"--n {n} does not match the {len(init)} values given by --init")
    state = State(np.array(init, dtype=float))
    nu = float(s.get("nu", 0.0) or 0.0)
    params = SystemParams(n=state.n, nu=nu)
    euler = s["euler-step"]
    cfg = ProjectiveConfig(nu=nu, euler_step_periods=euler or 3, averaging_periods=s["avg-periods"],
                           steps_per_period=s["steps-per-period"])
    checkpoints = tuple(s.get("snapshots") or ())
    return ExperimentSpec(command=command, state0=state, params=params, projective=cfg, dt=s.get("dt"),
                          periods=s["periods"], sample_every=s["sample-every"], out=s.get("out"),
                          reference_out=s.get("reference-out"), steps=tuple(s.get("steps", (3, 6, 12))),
                          snapshots=checkpoints, window=s["window"], workers=s["workers"],
                          auto_euler_step=euler is None, checkpoints=checkpoints)


# ------------------------------------------------------------------ commands


def _period(spec: ExperimentSpec) -> float:
    return estimate_fast_period(spec.state0).period


def cmd_simulate_fast(spec: ExperimentSpec) -> None:
    dt = spec.dt or 1e-3
    nsteps = int(round(spec.periods * _period(spec) / dt))
    traj = integrate_steps(FastField(), spec.state0, dt, nsteps, spec.sample_every)
    export_csv(traj, spec.out)


def _snapshot_path(out: str | None, periods: int) -> str | None:
    if out is None or out == "-":
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}_p{periods:05d}{p.suffix or '.csv'}"))


def cmd_simulate_full(spec: ExperimentSpec) -> None:
    period = _period(spec)
    dt = spec.dt or period / spec.projective.steps_per_period
    field_ = FullField(spec.params.nu)
    if not spec.snapshots:
        nsteps = int(round(spec.periods * period / dt))
        export_csv(integrate_steps(field_, spec.state0, dt, nsteps, spec.sample_every), spec.out)
        return
    # one short fast-scale window of the full system at each snapshot
    u, done = spec.state0.u, 0
    for snap in sorted(spec.snapshots):
        steps = int(round((snap - done) * period / dt))
        if steps:
            u = integrate_steps(field_, u, dt, steps, steps).final.u
        done = snap
        window = int(round(spec.window * period / dt))
        traj = integrate_steps(field_, u, dt, window, spec.sample_every, t0=snap * period)
        export_csv(traj, _snapshot_path(spec.out, snap))


def cmd_period(spec: ExperimentSpec) -> None:
    est = estimate_fast_period(spec.state0, dt=spec.dt or 1e-3)
    rows = [("period", fmt(est.period)), ("return_distance", fmt(est.return_distance)),
            ("confident", str(est.confident)), ("checkpoint_600", fmt(600 * est.period))]
    write_rows(spec.out, ["key", "value"], rows)


def cmd_observables(spec: ExperimentSpec) -> None:
    v = observable_vector(spec.state0)
    write_rows(spec.out, [f"v_{j}" for j in range(1, v.size + 1)], [[fmt(x) for x in v]])


def _project(spec: ExperimentSpec, method: str) -> None:
    series = run_multiscale(method, spec.state0, spec.projective, spec.periods)
    export_csv(series, spec.out)
    if spec.reference_out:
        p0 = series.meta["period0"]
        spp = ex.TABLE_REFERENCE_STEPS_PER_PERIOD
        ref = ex.run_reference(spec.state0, spec.params.nu, spec.periods * p0, p0 / spp,
                               sample_every=spec.projective.euler_step_periods * spp)
        export_csv(ref, spec.reference_out)


def _table(spec: ExperimentSpec, method: str) -> None:
    overrides = {}
    if spec.projective.averaging_periods != 1:
        overrides["averaging_periods"] = spec.projective.averaging_periods
    table = ex.make_error_table(method, spec.state0, spec.params.nu, spec.periods, spec.steps,
                                workers=spec.workers, **overrides)
    print(table.render())
    if spec.out:
        rows = ([str(s)] + [fmt(x) for x in table.rows[s]] for s in sorted(table.rows))
        write_rows(spec.out, ["euler_step_periods"] + table.columns, rows)


def cmd_speedup(spec: ExperimentSpec) -> None:
    if spec.params.nu <= 0.0:
        raise InvalidInput("the speedup scenario needs --nu > 0")
    step = None if spec.auto_euler_step else spec.projective.euler_step_periods
    result = ex.speedup_scenario(spec.params.nu, spec.state0,
                                 steps_per_period=spec.projective.steps_per_period, euler_step_periods=step)
    print(result.report.render())
    if spec.out:
        rep = result.report
        rows = [("rhs_evals_direct", rep.rhs_evals_direct), ("rhs_evals_multiscale", rep.rhs_evals_multiscale),
                ("speedup", fmt(rep.speedup)), ("horizon", fmt(rep.horizon))]
        rows += [(k, v) for k, v in rep.assumptions.items()]
        write_rows(spec.out, ["key", "value"], rows)


def cmd_export(spec: ExperimentSpec) -> None:
    """Data sets behind every figure, written into the ``--out`` directory."""
    if not spec.out or spec.out == "-":
        raise InvalidInput("export needs --out <directory>")
    root = Path(spec.out)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {root}: {exc.strerror}") from exc
    nu = spec.params.nu if spec.params.nu > 0 else ex.TABLE_NU

    torus = State(ex.FIG1_STATE)
    p_torus = estimate_fast_period(torus).period
    traj = integrate_steps(FastField(), torus, 1e-3, int(round(40 * p_torus / 1e-3)), 10)
    export_csv(traj, root / "torus.csv")

    local = integrate_steps(FastField(), ex.LOCAL_INVARIANT_STATE, 1e-3, 10000, 10)
    export_csv(local, root / "local_invariants.csv")

    # bare drift integrand of v_3 over one period, with its running mean
    spp = 400
    orbit = integrate_steps(FastField(), torus, p_torus / spp, spp - 1)
    g = drift_integrands(orbit.states)[:, 2]
    running = np.cumsum(g) / np.arange(1, g.size + 1)
    write_rows(root / "drift_v3.csv", ["time", "grad_v3_dot_D", "running_mean"],
               ([fmt(t), fmt(a), fmt(b)] for t, a, b in zip(orbit.times, g, running)))

    decay = State(ex.DECAY_STATE)
    p_decay = estimate_fast_period(decay).period
    snaps = [p for p in (600, 1200, 1800, 2400, 3000) if p <= spec.periods]
    sub = ExperimentSpec(command="simulate-full", state0=decay, params=SystemParams(decay.n, nu),
                         projective=ProjectiveConfig(nu=nu), dt=p_decay / 50, periods=spec.periods,
                         sample_every=1, out=str(root / "decay.csv"), snapshots=tuple(snaps), window=3,
                         checkpoints=tuple(snaps))
    cmd_simulate_full(sub)

    full = integrate_steps(FullField(nu), decay, p_decay / 50, 50 * spec.periods, 50)
    write_rows(root / "full_v3.csv", ["time", "v_3"],
               ([fmt(t), fmt(v)] for t, v in zip(full.times, observables_along(full.states)[:, 2])))

    ym = run_multiscale("young_measure", decay, ProjectiveConfig(nu=nu, euler_step_periods=3), spec.periods)
    export_csv(ym, root / "young_measure.csv")
    ef = run_multiscale("equation_free", decay, ProjectiveConfig(nu=nu, euler_step_periods=3,
                                                                 steps_per_period=ex.EF_STEPS_PER_PERIOD),
                        spec.periods)
    export_csv(ef, root / "equation_free.csv")
    p0 = ym.meta["period0"]
    ref = ex.run_reference(decay, nu, spec.periods * p0, p0 / 200, sample_every=3 * 200)
    export_csv(ref, root / "reference.csv")


HANDLERS = {
    "simulate-fast": cmd_simulate_fast,
    "simulate-full": cmd_simulate_full,
    "period": cmd_period,
    "observables": cmd_observables,
    "project-ym": lambda spec: _project(spec, "young_measure"),
    "project-ef": lambda spec: _project(spec, "equation_free"),
    "table1": lambda spec: _table(spec, "young_measure"),
    "table2": lambda spec: _table(spec, "equation_free"),
    "speedup": cmd_speedup,
    "export": cmd_export,
}

# --------------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--init", type=_floats, help="initial state as a comma-separated list")
    p.add_argument("--n", type=int, help="lattice size (checked against --init)")
    p.add_argument("--nu", type=float, help="diffusion coefficient")
    p.add_argument("--dt", type=float, help="RK4 step")
    p.add_argument("--periods", type=int, help="run length or checkpoint, in fast periods")
    p.add_argument("--euler-step", type=int, help="projective step in fast periods")
    p.add_argument("--avg-periods", type=int, help="fast periods averaged per measure")
    p.add_argument("--steps-per-period", type=int, help="RK4 steps per fast period")
    p.add_argument("--sample-every", type=int, help="keep every k-th step")
    p.add_argument("--out", help="output path ('-' or absent: standard output)")
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdvb", description="Fast-slow lattice experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate-fast": "integrate the nu = 0 system and write the trajectory",
        "simulate-full": "integrate the full system and write the trajectory (or snapshots)",
        "period": "estimate the fast period of the initial state",
        "observables": "print the slow observables of the initial state",
        "project-ym": "Young-measure projective run, observable series as CSV",
        "project-ef": "equation-free projective run, observable series as CSV",
        "table1": "checkpoint error table for the Young-measure method",
        "table2": "checkpoint error table for the equation-free method",
        "speedup": "cost of direct vs projective integration over the diffusive horizon",
        "export": "write every figure data set into a directory",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _add_common(p)
        if name in ("project-ym", "project-ef"):
            p.add_argument("--reference-out", help="also write the direct reference series here")
        if name in ("table1", "table2"):
            p.add_argument("--steps", type=_ints, help="Euler steps in periods, comma-separated")
            p.add_argument("--workers", type=int, help="threads across table cells")
        if name == "simulate-full":
            p.add_argument("--snapshots", type=_ints, help="periods at which to record a short window")
            p.add_argument("--window", type=int, help="snapshot window length in periods")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k.replace("_", "-"): v for k, v in vars(args).items() if k not in ("command", "verbose")}
    config = read_config(args.config) if args.config else {}
    settings = resolve_settings(args.command, flags, config)
    spec = build_spec(args.command, settings)
    HANDLERS[args.command](spec)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except InvalidInput as exc:
        print(f"kdvb: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"kdvb: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"kdvb: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
