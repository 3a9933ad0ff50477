"""Binary matrix files, vectors, CSV import and JSON/JSONL outputs.

Matrix file layout (all little-endian)::

    offset  size  field
    0       4     magic b"OTMX"
    4       2     version (u16, currently 1)
    6       1     dtype tag (1 = float32, 2 = float64)
    7       1     layout tag (1 = column-major)
    8       8     m (u64)
    16      8     n (u64)
    24      ...   m*n values in column-major order

Vectors are stored as ``m x 1`` matrices.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, MatrixFileError, RaggedCsv, SizeMismatch, VersionUnsupported

MAGIC = b"OTMX"
VERSION = 1
HEADER = struct.Struct("<4sHBBQQ")
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
LAYOUT_COL_MAJOR = 1


def _tag_for(dtype) -> int:
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return 1
    if dtype == np.float64:
        return 2
    raise MatrixFileError(f"unsupported dtype {dtype}; use float32 or float64")


def encode_matrix(a) -> bytes:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise MatrixFileError(f"expected a matrix, got {a.ndim} dimensions")
    tag = _tag_for(a.dtype)
    m, n = a.shape
    payload = np.asfortranarray(a, dtype=DTYPE_TAGS[tag]).tobytes(order="F")
    return HEADER.pack(MAGIC, VERSION, tag, LAYOUT_COL_MAJOR, m, n) + payload


def decode_matrix(data: bytes) -> np.ndarray:
    if len(data) < HEADER.size:
        raise SizeMismatch(f"file has {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, tag, layout, m, n = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(f"version {version} is not supported")
    if tag not in DTYPE_TAGS:
        raise MatrixFileError(f"unknown dtype tag {tag}")
    if layout != LAYOUT_COL_MAJOR:
        raise MatrixFileError(f"unknown layout tag {layout}")
    dtype = DTYPE_TAGS[tag]
    expected = m * n * dtype.itemsize
    payload = memoryview(data)[HEADER.size:]
    if len(payload) != expected:
        raise SizeMismatch(f"payload has {len(payload)} bytes, header implies {expected}")
    flat = np.frombuffer(payload, dtype=dtype, count=m * n)
    return np.array(flat.reshape((m, n), order="F"), dtype=dtype.newbyteorder("="), order="F")


def write_matrix(path, a) -> None:
    Path(path).write_bytes(encode_matrix(a))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def write_vector(path, v) -> None:
    write_matrix(path, np.asarray(v).reshape(-1, 1))


def read_vector(path) -> np.ndarray:
    a = read_matrix(path)
    if a.shape[1] != 1:
        raise SizeMismatch(f"expected a single column, got shape {a.shape}")
    return a[:, 0].copy()


def read_csv_matrix(path_or_text, *, text: bool = False) -> np.ndarray:
    """Parse decimal floats from CSV; every row must have the same length."""
    if text:
        lines = str(path_or_text).splitlines()
    else:
        lines = Path(path_or_text).read_text().splitlines()
    rows = [r for r in csv.reader(lines) if r and any(c.strip() for c in r)]
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise RaggedCsv(f"row {i} has {len(r)} fields, expected {width}")
    return np.array([[float(c) for c in r] for r in rows], dtype=np.float64)


def format_float(x: float) -> str:
    """17 significant digits, enough for a float64 to survive a round trip."""
    return format(float(x), ".17g")


def write_csv_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in row])


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating,)):
        return _json_safe(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(_json_safe(row), sort_keys=True) + "\n")
