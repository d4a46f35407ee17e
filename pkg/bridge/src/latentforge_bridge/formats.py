"""Byte-exact writers/readers for the toolkit file contracts.

The bridge deliberately does not import the main toolkit: the language
boundary is the filesystem, so these formats are reimplemented here and
round-trip tested against the toolkit's strict parsers in CI.

LATV v1: magic ``LATV``, u32 version=1 LE, u32 count, u32 dim, then
count*dim float32 LE row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

LATV_MAGIC = b"LATV"
_HEADER = struct.Struct("<4sIII")


class BridgeFormatError(Exception):
    pass


def write_latv(path, vectors) -> None:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or (arr.size and arr.shape[1] < 1):
        raise BridgeFormatError(f"LATV payload must be (count, dim), got shape {arr.shape}")
    count, dim = arr.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_HEADER.pack(LATV_MAGIC, 1, count, dim) + arr.astype("<f4").tobytes(order="C"))


def read_latv(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise BridgeFormatError(f"{path}: truncated header")
    magic, version, count, dim = _HEADER.unpack_from(data)
    if magic != LATV_MAGIC or version != 1 or dim < 1:
        raise BridgeFormatError(f"{path}: bad LATV header")
    if len(data) != _HEADER.size + 4 * count * dim:
        raise BridgeFormatError(f"{path}: length mismatch")
    if count == 0:
        return np.empty((0, dim))
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64).reshape(count, dim)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv_rows(path, required=()):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise BridgeFormatError(f"{path}: empty CSV")
    header = lines[0].split(",")
    missing = set(required) - set(header)
    if missing:
        raise BridgeFormatError(f"{path}: missing columns {sorted(missing)}")
    return [dict(zip(header, line.split(","))) for line in lines[1:] if line]
