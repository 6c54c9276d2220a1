"""CSV and JSON writers with a fixed convention header."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(x) -> str:
    """Shortest round-trip decimal text for numbers; ``str`` otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if x == 0.0:
            return "0.0"  # drop the sign of negative zero
        return repr(x)
    return str(x)


def convention_lines(conventions: dict, hbar: float) -> list[str]:
    lines = [f"hbar = {fmt(float(hbar))}"]
    lines += [f"{k}: {conventions[k]}" for k in sorted(conventions)]
    return lines


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], conventions: dict,
              hbar: float) -> Path:
    """Write ``#``-prefixed convention lines, then a plain CSV table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [f"# {line}" for line in convention_lines(conventions, hbar)]
    out.append(",".join(header))
    for r in rows:
        out.append(",".join(fmt(v) for v in r))
    path.write_text("\n".join(out) + "\n")
    return path


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]) if len(lines) > 1 else np.zeros((0, len(header)))
    return header, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path: str | Path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path
