"""Deterministic on-disk formats: CSV tables, JSON records, field files.

Floats are written as their shortest round-trip decimal form, so a
re-run that computes bit-identical values produces byte-identical
files.  Nothing here writes wall-clock information.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "format_value",
    "load_field",
    "read_manifest",
    "save_field",
    "write_csv",
    "write_json",
]


def format_value(value: Any) -> str:
    """Render one CSV cell: shortest round-trip decimals for floats."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a table with a fixed header and unix newlines."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} does not match header width {len(header)}")
        lines.append(",".join(format_value(cell) for cell in row))
    out.write_text("\n".join(lines) + "\n")
    return out


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def write_json(path: str | Path, payload: dict) -> Path:
    """Write a sorted, indented JSON record with a trailing newline."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")
    return out


def read_manifest(path: str | Path) -> dict:
    """Load a manifest; accepts the file or its containing directory."""
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise FileNotFoundError(f"no manifest found at {p}")
    return json.loads(p.read_text())


def save_field(path: str | Path, samples: np.ndarray) -> Path:
    """Store field samples as a binary array file (row-major layout).

    Axis order is (component, x) in one dimension and (component, x, y)
    in two; the same layout the solver uses in memory.
    """
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, np.ascontiguousarray(np.asarray(samples, dtype=float)))
    return out if out.suffix == ".npy" else out.with_suffix(out.suffix + ".npy")


def load_field(path: str | Path) -> np.ndarray:
    """Load field samples saved by save_field."""
    arr = np.load(Path(path))
    if arr.dtype != np.float64:
        arr = arr.astype(float)
    return arr
