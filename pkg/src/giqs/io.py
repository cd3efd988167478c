"""Report serialization: canonical JSON, CSV tables and the GIQS1 binary container."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import asdict, is_dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

MAGIC = b"GIQS1"
SCHEMA_VERSION = "1.0"


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays, tuples and non-finite floats.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"`` so
    the output is strict JSON.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(float(obj.real)), to_jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=1, ensure_ascii=False,
                      allow_nan=False) + "\n"


def config_hash(config: dict) -> str:
    canon = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def read_csv(path) -> tuple[list, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def write_container(path, array, meta: dict | None = None) -> Path:
    """``GIQS1`` + uint32 LE header length + JSON header + raw little-endian complex128."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<c16"))
    header = dumps({"dtype": "complex128-le", "shape": list(arr.shape), "order": "C",
                    "meta": meta or {}}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(arr.tobytes(order="C"))
    return path


def read_container(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError("not a GIQS1 container")
    (n,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + n].decode("utf-8"))
    data = np.frombuffer(raw[9 + n:], dtype="<c16")
    shape = tuple(header["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError("container payload does not match its header shape")
    return data.reshape(shape).astype(np.complex128), header


def load_schema() -> dict:
    """The JSON schema every report record validates against."""
    return json.loads(resources.files("giqs").joinpath("schema/report.schema.json").read_text("utf-8"))
