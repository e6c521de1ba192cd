"""Deterministic CSV/JSON writers (floats at 17 significant digits)."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from measure_heat.mesh import Mesh
from measure_heat.solvers import fmt


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode(str(k), indent, level)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps_json(obj) -> str:
    """JSON text with fixed float formatting; non-finite floats become null."""
    return _encode(obj, 2, 0) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def write_node_table(path: str | Path, mesh: Mesh, values) -> None:
    """Node table ``node_index,x[,y],value``."""
    header = ["node_index", "x", "y"][: 1 + mesh.dim] + ["value"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for j, (c, value) in enumerate(zip(mesh.coords, np.asarray(values))):
            writer.writerow([j, *(fmt(x) for x in c), fmt(value)])
