"""Stage reports: JSON documents with a fixed envelope, plus CSV side files."""
from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = ["SCHEMA", "envelope", "jsonable", "dumps", "write_json", "write_text"]

SCHEMA = json.loads(resources.files("moserlab").joinpath("report_schema.json").read_text(encoding="utf-8"))


def jsonable(v):
    """Plain JSON types; non-finite floats become strings so output stays strict JSON."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if v is None or isinstance(v, str):
        return v
    return str(v)


def envelope(stage, status, digest, data, timestamp=None):
    ts = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    return {"stage": stage, "status": status, "inputs_digest": digest, "data": jsonable(data), "timestamp": ts}


def dumps(report):
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(out_dir, name, report):
    path = Path(out_dir) / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(report), encoding="utf-8")
    return path


def write_text(out_dir, name, text):
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
