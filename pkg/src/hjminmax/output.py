"""Deterministic file emission: CSV and JSON writers with atomic replace.

Floats are printed with 12 significant digits, lines end with a bare
newline, JSON keys are sorted, and nothing time- or host-dependent is ever
written, so identical inputs yield byte-identical files.  Writes go to a
temporary file in the target directory followed by os.replace, so readers
never observe a partial file.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from hjminmax.scheme import SolutionField

__all__ = [
    "fmt_float",
    "atomic_write_text",
    "write_csv",
    "write_json",
    "field_rows",
    "front_rows",
]


def fmt_float(x: float) -> str:
    return f"{float(x):.12g}"


def _cell(value) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt_float(float(value))
    return str(value)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} does not match header "
                             f"{header}")
        lines.append(",".join(_cell(c) for c in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def write_json(path, obj) -> None:
    text = json.dumps(_plain(obj), indent=2, sort_keys=True,
                      ensure_ascii=False)
    atomic_write_text(path, text + "\n")


def field_rows(field: SolutionField):
    """(t, x, u, scheme) rows, time-major, matching the CSV header."""
    for k, t in enumerate(field.times):
        for j, x in enumerate(field.x_grid):
            yield (float(t), float(x), float(field.u[k, j]), field.scheme)


def front_rows(rows):
    """(x, u, branch_id, from_kink) rows from wavefront output."""
    for x, u, branch_id, from_kink in rows:
        yield (float(x), float(u), int(branch_id), bool(from_kink))
