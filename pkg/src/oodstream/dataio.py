"""Embedding file, manifest, and label I/O.

Binary embedding layout (little-endian throughout):

    offset  size  field
    0       4     magic "TTLE"
    4       2     version, uint16, currently 1
    6       1     dtype code, uint8, 0 = float32
    7       4     dim, uint32
    11      8     count, uint64
    19      -     payload: count * dim float32 values, row-major

Readers must reject wrong magic/version/dtype and any payload whose byte
length disagrees with dim * count. Rows are unit-normalized at read time, so
downstream code can assume unit vectors; files that already store unit rows
round-trip unchanged up to float32 quantization.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .core import CorruptionError, DomainError, FormatError, normalize_rows

MAGIC = b"TTLE"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sHBIQ")
HEADER_SIZE = _HEADER.size  # 19 bytes


def write_embeddings(path, vectors) -> None:
    """Write an (n, d) array of embeddings to the binary format.

    Accepts any float input; payload is stored as float32. All rows must share
    one dimensionality (enforced by the array coercion) and d must be >= 1.
    """
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DomainError(f"expected (n, d) embeddings, got ndim={arr.ndim}")
    n, d = arr.shape
    if d < 1:
        raise DomainError("embedding dim must be >= 1")
    if not np.all(np.isfinite(arr)):
        raise DomainError("refusing to write non-finite embeddings")
    payload = arr.astype("<f4").tobytes(order="C")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, d, n)
    Path(path).write_bytes(header + payload)


def read_embeddings(path, expect_dim: int | None = None, normalize: bool = True,
                    allow_nonfinite: bool = False) -> np.ndarray:
    """Read embeddings back as a float64 (n, d) matrix.

    With normalize=True (default) every row is unit-normalized; a zero row is
    reported as corruption since no direction survives the round trip. A
    caller that screens rows itself (the streaming engine rejects bad samples
    one at a time) can pass allow_nonfinite=True with normalize=False.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than {HEADER_SIZE}-byte header")
    magic, version, dtype, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1, header says {dim}")
    expected = HEADER_SIZE + 4 * dim * count
    if len(raw) != expected:
        raise CorruptionError(
            f"{path}: payload length {len(raw) - HEADER_SIZE} does not match "
            f"dim={dim} count={count} (expected {expected - HEADER_SIZE} bytes)"
        )
    if expect_dim is not None and dim != expect_dim:
        raise FormatError(f"{path}: dim {dim} does not match expected {expect_dim}")
    flat = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE)
    arr = flat.astype(np.float64).reshape(count, dim)
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise CorruptionError(f"{path}: non-finite values in payload")
    if normalize:
        try:
            arr = normalize_rows(arr) if count else arr
        except DomainError as exc:
            raise CorruptionError(f"{path}: {exc}") from exc
    return arr


def write_labels(path, labels) -> None:
    """Write 0/1 stream labels, one per line."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise DomainError("labels must be one-dimensional")
    vals = arr.astype(np.int64)
    if not np.all((vals == 0) | (vals == 1)):
        raise DomainError("labels must be 0 (OOD) or 1 (ID)")
    Path(path).write_text("".join(f"{v}\n" for v in vals))


def read_labels(path) -> np.ndarray:
    """Read newline-separated 0/1 labels into an int array."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        token = line.strip()
        if not token:
            continue
        if token not in ("0", "1"):
            raise FormatError(f"{path}:{lineno}: label must be 0 or 1, got {token!r}")
        out.append(int(token))
    return np.asarray(out, dtype=np.int64)


@dataclasses.dataclass
class Manifest:
    """Describes one dataset: its dimensionality and where its files live.

    `files` maps roles to paths relative to the manifest location. Role
    "id_text" (the ID class features) and "stream" (the test-time samples)
    are required to run; "labels" is optional and only ever read by
    evaluation, never by the detector itself. `notes` is free text; if it
    parses as a JSON object its keys act as config overrides below
    command-line flags.
    """

    dataset_name: str
    dim: int
    id_classnames: list
    files: dict
    notes: str = ""

    REQUIRED_ROLES = ("id_text", "stream")

    def validate(self) -> "Manifest":
        if self.dim < 1:
            raise FormatError(f"manifest dim must be >= 1, got {self.dim}")
        if not self.id_classnames:
            raise FormatError("manifest needs at least one ID classname")
        for role in self.REQUIRED_ROLES:
            if role not in self.files:
                raise FormatError(f"manifest missing required file role {role!r}")
        return self

    def resolve(self, role: str, base: Path) -> Path:
        return (Path(base) / self.files[role]).resolve()

    def notes_config(self) -> dict:
        """Config overrides embedded in the notes, or {} if notes are prose."""
        try:
            parsed = json.loads(self.notes)
        except (json.JSONDecodeError, TypeError):
            return {}
        return parsed if isinstance(parsed, dict) else {}

    def save(self, path) -> None:
        doc = {
            "dataset_name": self.dataset_name,
            "dim": self.dim,
            "id_classnames": list(self.id_classnames),
            "files": dict(self.files),
            "notes": self.notes,
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
        missing = {"dataset_name", "dim", "id_classnames", "files"} - set(doc)
        if missing:
            raise FormatError(f"{path}: manifest missing keys {sorted(missing)}")
        return cls(
            dataset_name=doc["dataset_name"],
            dim=int(doc["dim"]),
            id_classnames=list(doc["id_classnames"]),
            files=dict(doc["files"]),
            notes=str(doc.get("notes", "")),
        ).validate()
