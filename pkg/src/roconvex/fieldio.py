"""Serialization: the shared field CSV format and JSON-compatible reports.

A field file is one JSON header line (the grid spec, prefixed by '# ') followed
by a CSV table with one row per node: coordinate columns, value, mask. Floats
are written with repr so re-reading and re-writing is byte-stable.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import GridSpec, SampledField


def fmt(x: float) -> str:
    """Shortest round-trip decimal form; NaN spelled 'nan'."""
    return repr(float(x))


def write_field(field: SampledField, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = field.grid.shape.coord_names()
    coords = field.node_coords()
    lines = ["# " + json.dumps(field.grid.to_dict(), sort_keys=True)]
    lines.append(",".join(names + ("value", "mask")))
    for k in range(coords.shape[0]):
        row = [fmt(c) for c in coords[k]]
        row.append(fmt(field.values[k]) if field.mask[k] else "nan")
        row.append("1" if field.mask[k] else "0")
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_field(path: str | Path) -> SampledField:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# "):
        raise ValueError(f"{path}: missing grid header line")
    spec = GridSpec.from_dict(json.loads(text[0][2:]))
    dim = spec.shape.dim
    n = spec.points_per_axis**dim
    values = np.full(n, np.nan)
    mask = np.zeros(n, dtype=bool)
    rows = text[2:]
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} node rows, found {len(rows)}")
    for k, row in enumerate(rows):
        parts = row.split(",")
        values[k] = float(parts[dim])
        mask[k] = parts[dim + 1] == "1"
    return SampledField(spec, values, mask)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Plain CSV with deterministic float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, float) or isinstance(cell, np.floating):
                cells.append(fmt(float(cell)))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def _jsonable(obj: object) -> object:
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):  # before int: bool is an int subclass
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(obj: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")
    return path


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()
