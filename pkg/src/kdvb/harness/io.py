"""CSV export and flat key=value configuration files."""

from __future__ import annotations

import csv
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import InvalidInput
from ..integrate import Trajectory
from ..multiscale import ObservableSeries


class ExportError(OSError):
    """I/O failure while writing an output file; the message names the path."""


def fmt(x: float) -> str:
    """17 significant digits, the shortest width that round-trips every double."""
    return f"{float(x):.17g}"


def _rows_for(data):
    if isinstance(data, Trajectory):
        n = data.states.shape[1]
        header = ["time"] + [f"U_{k}" for k in range(1, n + 1)]
        rows = ([fmt(t)] + [fmt(x) for x in u] for t, u in zip(data.times, data.states))
        return header, rows
    if isinstance(data, ObservableSeries):
        values = np.asarray(data.values, dtype=float)
        m = values.shape[1] if values.ndim == 2 and values.shape[1] else int(data.meta.get("n_observables", 0))
        header = ["time"] + [f"v_{j}" for j in range(1, m + 1)] + ["method_tag"]
        rows = ([fmt(t)] + [fmt(x) for x in v] + [data.method_tag] for t, v in zip(data.times, values))
        return header, rows
    raise InvalidInput(f"cannot export objects of type {type(data).__name__}")


def export_csv(data: Trajectory | ObservableSeries, path: str | os.PathLike | None) -> Path | None:
    """Write a trajectory (``time,U_1..U_N``) or series (``time,v_1..,method_tag``) as CSV."""
    header, rows = _rows_for(data)
    return write_rows(path, header, rows)


def write_rows(path: str | os.PathLike | None, header, rows) -> Path | None:
    """Write CSV rows to ``path``, or to standard output when ``path`` is None or ``-``."""
    if path is None or str(path) == "-":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return None
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use flag spelling (``euler-step``)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidInput(f"{path}:{lineno}: expected key = value, got {raw!r}")
        out[key.strip().lstrip("-").replace("_", "-")] = value.strip()
    return out
