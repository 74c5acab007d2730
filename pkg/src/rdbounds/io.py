"""Binary field dumps and deterministic JSON/CSV reports."""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .geometry import SpaceTimeGrid

MAGIC = b"CDNF"
VERSION = 1
_HEADER = struct.Struct("<4siiii12x")   # 32 bytes


def write_field(path, values: np.ndarray, grid: SpaceTimeGrid, sidecar: dict | None = None) -> list[Path]:
    """Little-endian float64 dump behind a 32-byte header, plus a JSON sidecar."""
    path = Path(path)
    vals = np.ascontiguousarray(values, dtype="<f8")
    if vals.shape != grid.shape:
        raise ValueError(f"values shape {vals.shape} != grid shape {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.d, grid.nx, grid.nt))
        fh.write(vals.tobytes())
    meta = {"grid": grid.to_dict()}
    meta.update(sidecar or {})
    side = path.with_suffix(path.suffix + ".json")
    write_json(side, meta)
    return [path, side]


def read_field(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, d, nx, nt = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path} is not a field dump")
        vals = np.frombuffer(fh.read(), dtype="<f8")
    shape = (nt,) + (nx,) * d
    if vals.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload does not match header")
    return vals.reshape(shape), {"version": version, "d": d, "nx": nx, "nt": nt}


def _clean(obj):
    """Make an object JSON-safe; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, rows: list[dict]) -> Path:
    """One row per record; columns are the sorted union of keys."""
    path = Path(path)
    cols = sorted({k for r in rows for k in r})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in cols])
    return path


def read_samples(path) -> np.ndarray:
    """Load a sample file: .npy, or text with one number per line (or comma separated)."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).ravel()
    text = path.read_text(encoding="utf-8").replace(",", " ")
    return np.array([float(tok) for tok in text.split()])
