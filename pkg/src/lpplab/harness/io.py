"""Deterministic CSV and manifest writers.

CSV output is the reproducibility surface: UTF-8, '\\n' line endings,
'.' decimal separator, floats printed with 17 significant digits so a
byte-compare between runs is also a value-compare.  The JSON manifest
carries everything else (config echo, constants, fits, warnings, wall
time) and is allowed to differ between runs in its timing fields.
"""

from __future__ import annotations

import json

import numpy as np


def format_cell(value):
    """One CSV cell.  Floats go through %.16e; ints and strings as-is."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".16e")
    if isinstance(value, (complex, np.complexfloating)):
        raise TypeError("complex values must be split into columns before writing")
    return str(value)


def write_csv(path, header, rows):
    """Write one table.  Returns the path for manifest bookkeeping."""
    lines = [",".join(str(h) for h in header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(
                f"row has {len(row)} cells, header has {len(header)}"
            )
        lines.append(",".join(format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return str(path)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__} into the manifest")


def write_manifest(path, payload):
    """JSON manifest, keys sorted so the layout is stable run to run."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return str(path)
