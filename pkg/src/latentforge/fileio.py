"""File formats shared by every pipeline stage.

Vector store "LATV v1": bytes 0-3 magic ``LATV``, bytes 4-7 version u32=1
little-endian, bytes 8-11 count u32, bytes 12-15 dim u32, then count*dim
float32 little-endian, row-major. Vectors are widened to float64 on load and
narrowed to float32 on save.

All parsers are strict: anything that does not match the declared layout
raises FormatError rather than returning a best-effort array.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, IoError

LATV_MAGIC = b"LATV"
LATV_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_latv(path, vectors) -> None:
    """Write a 2-D float array as a LATV v1 file (float32 little-endian)."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise InputError(f"LATV payload must be (count, dim) with dim >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("LATV payload contains non-finite values")
    count, dim = arr.shape
    header = _HEADER.pack(LATV_MAGIC, LATV_VERSION, count, dim)
    payload = arr.astype("<f4").tobytes(order="C")
    atomic_write_bytes(path, header + payload)


def read_latv(path) -> np.ndarray:
    """Read a LATV v1 file into a float64 (count, dim) array.

    Raises FormatError on truncation, wrong magic/version, count/dim
    disagreement with the actual payload length, or non-finite entries.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read LATV file {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated LATV header ({len(data)} bytes, need {_HEADER.size})")
    magic, version, count, dim = _HEADER.unpack_from(data)
    if magic != LATV_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {LATV_MAGIC!r}")
    if version != LATV_VERSION:
        raise FormatError(f"{path}: unsupported LATV version {version}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1, got {dim}")
    expected = _HEADER.size + 4 * count * dim
    if len(data) != expected:
        raise FormatError(
            f"{path}: payload length mismatch (count={count}, dim={dim} "
            f"needs {expected} bytes, file has {len(data)})"
        )
    if count == 0:
        return np.empty((0, dim), dtype=np.float64)
    vecs = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    vecs = vecs.reshape(count, dim)
    if not np.all(np.isfinite(vecs)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return vecs


def write_boundary_json(path, boundary) -> None:
    """Serialize an AttributeBoundary to the structured-text boundary document."""
    doc = {
        "attribute": boundary.attribute,
        "normal": [float(x) for x in boundary.normal],
        "bias": float(boundary.bias),
        "n_train": int(boundary.meta.n_train),
        "validation_accuracy": float(boundary.meta.validation_accuracy),
        "average_distance": float(boundary.meta.average_distance),
    }
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_boundary_json(path):
    """Load a boundary document. The normal is re-normalized to unit length."""
    from .geometry import AttributeBoundary, BoundaryMeta

    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read boundary file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    missing = {"attribute", "normal", "bias"} - set(doc)
    if missing:
        raise FormatError(f"{path}: boundary document missing fields {sorted(missing)}")
    meta = BoundaryMeta(
        n_train=int(doc.get("n_train", 0)),
        validation_accuracy=float(doc.get("validation_accuracy", 0.0)),
        average_distance=float(doc.get("average_distance", 0.0)),
    )
    return AttributeBoundary(
        attribute=str(doc["attribute"]),
        normal=np.asarray(doc["normal"], dtype=np.float64),
        bias=float(doc["bias"]),
        meta=meta,
    )


def read_scores_csv(path, n_expected=None) -> np.ndarray:
    """Read attribute scores aligned to LATV row order.

    Accepts either ``index,score`` rows (with or without a header line) or
    one bare score per line. Indexed rows must cover 0..n-1 exactly.
    """
    try:
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    except OSError as exc:
        raise IoError(f"cannot read score file {path}: {exc}") from exc
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if lines and lines[0].lower().replace(" ", "") in ("index,score", "score"):
        lines = lines[1:]
    if not lines:
        raise FormatError(f"{path}: no score rows")
    indexed = "," in lines[0]
    scores: dict[int, float] | list[float]
    try:
        if indexed:
            scores = {}
            for ln in lines:
                idx_s, val_s = ln.split(",", 1)
                scores[int(idx_s)] = float(val_s)
        else:
            scores = [float(ln) for ln in lines]
    except ValueError as exc:
        raise FormatError(f"{path}: bad score row: {exc}") from exc
    if indexed:
        n = len(scores)
        if sorted(scores) != list(range(n)):
            raise FormatError(f"{path}: indices do not cover 0..{n - 1}")
        out = np.array([scores[i] for i in range(n)], dtype=np.float64)
    else:
        out = np.array(scores, dtype=np.float64)
    if n_expected is not None and len(out) != n_expected:
        raise FormatError(f"{path}: {len(out)} scores, expected {n_expected}")
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{path}: scores contain non-finite values")
    return out


def write_csv(path, header, rows) -> None:
    """Write a CSV with the given header and iterable of row tuples."""
    buf = []
    buf.append(",".join(header))
    for row in rows:
        buf.append(",".join(str(v) for v in row))
    atomic_write_text(path, "\n".join(buf) + "\n")


def read_csv_dicts(path, required=()):
    """Read a headered CSV into a list of dicts, checking required columns."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            fields = reader.fieldnames or []
    except OSError as exc:
        raise IoError(f"cannot read CSV {path}: {exc}") from exc
    missing = set(required) - set(fields)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    return rows


def read_sidecar_csv(path) -> dict[str, int]:
    """Read a ``sample_id,row_index`` sidecar mapping ids to LATV rows."""
    rows = read_csv_dicts(path, required=("sample_id", "row_index"))
    out: dict[str, int] = {}
    for row in rows:
        sid = row["sample_id"]
        if sid in out:
            raise FormatError(f"{path}: duplicate sample_id {sid!r}")
        try:
            out[sid] = int(row["row_index"])
        except ValueError as exc:
            raise FormatError(f"{path}: bad row_index for {sid!r}: {exc}") from exc
    return out


def write_sidecar_csv(path, mapping) -> None:
    write_csv(path, ("sample_id", "row_index"), ((k, v) for k, v in mapping.items()))


def read_pgm(path):
    """Read a binary PGM (P5, maxval <= 255) into a uint8 (height, width) array."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read PGM {path}: {exc}") from exc

    pos = 0

    def _token() -> bytes:
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        return data[start:pos]

    if _token() != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    try:
        width, height, maxval = int(_token()), int(_token()), int(_token())
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header: {exc}") from exc
    if width < 1 or height < 1 or not (0 < maxval <= 255):
        raise FormatError(f"{path}: unsupported PGM geometry {width}x{height} maxval={maxval}")
    pos += 1  # single whitespace after maxval
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: raster has {len(raster)} bytes, expected {width * height}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes via temp-file-then-rename so readers never see partials."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read JSON {path}: {exc}") from exc
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    except OSError as exc:
        raise IoError(f"cannot digest {path}: {exc}") from exc
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
