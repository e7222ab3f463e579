"""Feature matrix files.

Binary layout, little endian: ``b"CRSTCF1"``, u32 rows, u32 cols, then
row-major float32. The CSV form has one row per frame and no header.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MATRIX_MAGIC = b"CRSTCF1"
_HEADER = struct.Struct("<7sII")


def write_matrix(path, m: np.ndarray) -> None:
    m = np.ascontiguousarray(np.atleast_2d(m), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_matrix(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ValueError(f"{path}: too short for a CRSTCF1 header")
    magic, rows, cols = _HEADER.unpack_from(buf)
    if magic != MATRIX_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(buf) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float64)


def write_matrix_csv(path, m: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(m), delimiter=",", fmt="%.9g")


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
