"""Writers and readers for the detector's dataset files.

This package talks to the streaming detector only through files, so the
formats are implemented here from their published layout rather than
imported. The embedding container is little-endian binary:

    offset  size  field
    0       4     magic "TTLE"
    4       2     version, uint16, currently 1
    6       1     dtype code, uint8, 0 = float32
    7       4     dim, uint32
    11      8     count, uint64
    19      -     payload: count * dim float32 values, row-major

Labels are one `0` (OOD) or `1` (ID) per line. The manifest is a JSON
object with dataset_name, dim, id_classnames, files (role to relative
path), and free-text notes; notes that parse as a JSON object are treated
by the detector as config defaults, so everything this package records
lives under a single "extraction" key.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TTLE"
VERSION = 1
DTYPE_F32 = 0
HEADER = struct.Struct("<4sHBIQ")


def write_embeddings(path, rows) -> None:
    """Write an (n, d) float array as a version-1 float32 container."""
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise FormatError(f"expected a (n, d) matrix with d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to write non-finite embeddings")
    n, d = arr.shape
    header = HEADER.pack(MAGIC, VERSION, DTYPE_F32, d, n)
    Path(path).write_bytes(header + arr.astype("<f4").tobytes(order="C"))


def read_embeddings(path) -> np.ndarray:
    """Read a container back as the exact stored float32 values, as float64."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: shorter than the {HEADER.size}-byte header")
    magic, version, dtype, dim, count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if len(raw) != HEADER.size + 4 * dim * count:
        raise FormatError(f"{path}: payload length disagrees with header")
    flat = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    return flat.astype(np.float64).reshape(count, dim)


def write_labels(path, labels) -> None:
    vals = np.asarray(labels, dtype=np.int64)
    if vals.ndim != 1 or not np.all((vals == 0) | (vals == 1)):
        raise FormatError("labels must be a flat array of 0 (OOD) and 1 (ID)")
    Path(path).write_text("".join(f"{v}\n" for v in vals))


def read_labels(path) -> np.ndarray:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        token = line.strip()
        if not token:
            continue
        if token not in ("0", "1"):
            raise FormatError(f"{path}:{lineno}: label must be 0 or 1, got {token!r}")
        out.append(int(token))
    return np.asarray(out, dtype=np.int64)


def write_manifest(path, dataset_name: str, dim: int, id_classnames, files: dict,
                   notes: str = "") -> Path:
    """Write the manifest JSON next to the files it points at."""
    if dim < 1:
        raise FormatError(f"dim must be >= 1, got {dim}")
    if not id_classnames:
        raise FormatError("manifest needs at least one ID classname")
    for role in ("id_text", "stream"):
        if role not in files:
            raise FormatError(f"manifest missing required file role {role!r}")
    doc = {
        "dataset_name": dataset_name,
        "dim": int(dim),
        "id_classnames": list(id_classnames),
        "files": dict(files),
        "notes": notes,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
