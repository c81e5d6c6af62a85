"""Deterministic CSV/JSON output with atomic writes."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .mesh import NODAL, Field


def atomic_write(path, text: str):
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(v) -> str:
    return "%.17g" % v


def field_csv(f: Field) -> str:
    """Rows ``i, j, x, t, value`` (``i, j, x, x2, t, value`` in 2D).

    Nodal rows carry the time level ``t_j``; interval rows the step end ``t_{j+1}``.
    """
    g = f.grid
    c = g.coords
    cols = [c] if g.dim == 1 else list(c)
    t = g.times if f.role == NODAL else g.times[1:]
    head = "i,j,x,t,value" if g.dim == 1 else "i,j,x,x2,t,value"
    lines = [head]
    vals = f.values
    for i in range(vals.shape[0]):
        xs = ",".join(fmt(col[i]) for col in cols)
        for j in range(vals.shape[1]):
            lines.append(f"{i},{j},{xs},{fmt(t[j])},{fmt(vals[i, j])}")
    return "\n".join(lines) + "\n"


def write_field_csv(path, f: Field):
    atomic_write(path, field_csv(f))


def table_csv(rows, columns) -> str:
    lines = [",".join(columns)]
    for r in rows:
        out = []
        for c in columns:
            v = r.get(c)
            if v is None:
                out.append("")
            elif isinstance(v, (bool, np.bool_)):
                out.append(str(bool(v)).lower())
            elif isinstance(v, (int, np.integer)):
                out.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                out.append(fmt(v))
            else:
                out.append(str(v))
        lines.append(",".join(out))
    return "\n".join(lines) + "\n"


def write_table_csv(path, rows, columns):
    atomic_write(path, table_csv(rows, columns))


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and dataclasses; non-finite floats become null."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return jsonable(obj.to_dict())
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps(obj))
