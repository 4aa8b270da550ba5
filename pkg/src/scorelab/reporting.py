"""Deterministic serialization for experiment outputs.

Reports are JSON with sorted keys; tables and trajectories are CSV whose
first line is a comment carrying the config hash. Floats are written with
``repr`` (shortest round-trip), so identical results serialize to identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

__all__ = [
    "canonical_json",
    "config_hash",
    "write_report",
    "read_report",
    "write_csv",
    "format_table",
]


def _plain(value):
    """Coerce numpy scalars/arrays into plain python types for JSON."""
    if hasattr(value, "item") and getattr(value, "ndim", 1) == 0:
        return value.item()
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def write_report(path: str | Path, payload: dict, cfg_hash: str) -> None:
    body = dict(payload)
    body["config_hash"] = cfg_hash
    with open(path, "w") as f:
        json.dump(_plain(body), f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path: str | Path) -> dict:
    with open(path) as f:
        return json.load(f)


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, header: list[str], rows, cfg_hash: str) -> None:
    with open(path, "w") as f:
        f.write(f"# config_hash={cfg_hash}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")


def format_table(header: list[str], rows) -> str:
    """Fixed-width text table for terminal summaries."""
    cells = [[_cell(v) for v in row] for row in rows]
    widths = [
        max(len(header[i]), *(len(r[i]) for r in cells)) if cells else len(header[i])
        for i in range(len(header))
    ]
    def fmt(row):
        return "  ".join(str(v).ljust(w) for v, w in zip(row, widths))
    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in cells)
    return "\n".join(lines)
