"""Binary field snapshot files.

Layout (little-endian), 40-byte header followed by payload:

    bytes 0..8    magic "MFLD0001"
    bytes 8..12   u32 n (samples per axis)
    bytes 12..16  u32 reserved (zero)
    bytes 16..24  f64 side_length
    bytes 24..32  f64 time
    bytes 32..40  f64 rho
    bytes 40..    n*n f64 samples, row-major (x index outer)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import Field, TorusGrid

MAGIC = b"MFLD0001"
_HEADER = struct.Struct("<8sIIddd")


def write_snapshot(path, field: Field, time: float, rho: float) -> None:
    g = field.grid
    header = _HEADER.pack(MAGIC, g.n, 0, g.side_length, float(time), float(rho))
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_snapshot(path) -> tuple[Field, float, float]:
    """Returns (field, time, rho)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, n, _reserved, side_length, time, rho = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * n * n
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, n)
    grid = TorusGrid(n=int(n), side_length=float(side_length))
    return Field(grid, values.astype(float)), float(time), float(rho)
