"""Bounded store of learned OOD feature snapshots and score calibration.

Every flush inserts a snapshot of each OOD feature row, scored by how
dissimilar it is to the frozen ID features (negated max cosine, so higher
means more OOD-like). Retention strategies:

    priority  keep the capacity highest-scoring entries; ties keep the newer
    fifo      keep the most recent capacity entries
    rand      evict a uniformly random entry once full
    sa        keep everything (unbounded)

Calibration scores a sample against the stored snapshots; the default rule is
the negated best match, with two alternatives for comparison runs.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
from pathlib import Path

import numpy as np

from . import dataio
from .core import ConfigError, DomainError, cosine_to_rows

CALIBRATION_VARIANTS = ("maxsim", "expsum", "idr")


def potential_ood_score(feature, id_features) -> float:
    """How dissimilar a feature is to every ID class feature.

    The worst case over classes of the negated cosine, i.e. minus the best
    match; in [-1, 1], with 1 meaning opposite to every ID feature.
    """
    id_rows = np.asarray(id_features, dtype=np.float64)
    f = np.asarray(feature, dtype=np.float64)
    if id_rows.ndim != 2 or id_rows.shape[0] < 1:
        raise DomainError("id_features must be a nonempty (N, d) matrix")
    cosines = cosine_to_rows(f, id_rows)
    return float(-cosines.max())


@dataclasses.dataclass
class BankEntry:
    feature: np.ndarray
    priority: float
    insert_seq: int


class KnowledgeBank:
    """Snapshot store with a pluggable retention strategy."""

    def __init__(self, capacity: int, strategy: str, id_features, rng=None):
        if strategy not in ("priority", "fifo", "rand", "sa"):
            raise ConfigError(f"unknown bank strategy {strategy!r}")
        if capacity < 1:
            raise ConfigError(f"bank capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.strategy = strategy
        self.id_features = np.asarray(id_features, dtype=np.float64)
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._seq = 0
        # priority uses a min-heap of (priority, insert_seq); the heap root is
        # the weakest entry, and older entries lose ties to newer ones.
        self._heap: list[tuple[float, int, BankEntry]] = []
        self._list: list[BankEntry] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._heap) if self.strategy == "priority" else len(self._list)

    def entries(self) -> list[BankEntry]:
        """Entries in insertion order (stable across strategies)."""
        if self.strategy == "priority":
            items = [entry for _, _, entry in self._heap]
        else:
            items = list(self._list)
        return sorted(items, key=lambda e: e.insert_seq)

    def insert_batch(self, features) -> None:
        """Score and insert a snapshot of every row of `features`."""
        rows = np.asarray(features, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        for row in rows:
            entry = BankEntry(
                feature=np.array(row, dtype=np.float64, copy=True),
                priority=potential_ood_score(row, self.id_features),
                insert_seq=self._seq,
            )
            self._seq += 1
            self._insert(entry)
        self._matrix = None

    def _insert(self, entry: BankEntry) -> None:
        if self.strategy == "priority":
            item = (entry.priority, entry.insert_seq, entry)
            if len(self._heap) < self.capacity:
                heapq.heappush(self._heap, item)
            else:
                # Replace the weakest iff the newcomer beats it; equal
                # priority favors the newer entry (larger insert_seq).
                root = self._heap[0]
                if (entry.priority, entry.insert_seq) > (root[0], root[1]):
                    heapq.heapreplace(self._heap, item)
        elif self.strategy == "fifo":
            self._list.append(entry)
            if len(self._list) > self.capacity:
                del self._list[0]
        elif self.strategy == "rand":
            if len(self._list) < self.capacity:
                self._list.append(entry)
            else:
                victim = int(self._rng.integers(0, len(self._list)))
                self._list[victim] = entry
        else:  # sa: store-all
            self._list.append(entry)

    def feature_matrix(self) -> np.ndarray:
        """Stacked entry features, cached until the next insert."""
        if self._matrix is None:
            items = self.entries()
            if items:
                self._matrix = np.stack([e.feature for e in items])
            else:
                self._matrix = np.zeros((0, self.id_features.shape[1]))
        return self._matrix

    def calibration_score(self, z) -> float:
        """Negated best match against the stored snapshots; 0 when empty.

        Lower (more negative) means the sample sits close to known OOD
        directions. The empty-bank value 0 keeps score fusion equal to the
        base score before any adaptation has happened.
        """
        mat = self.feature_matrix()
        if mat.shape[0] == 0:
            return 0.0
        return float(-(mat @ np.asarray(z, dtype=np.float64)).max())

    def calibration_variant(self, z, variant: str, tau: float = 1.0) -> float:
        """Alternative calibration rules used by comparison runs.

        maxsim matches calibration_score; expsum negates the summed
        exponentiated similarities (0 when empty); idr is the ID-side share
        of exponentiated similarity mass against ID features (1 when empty:
        no OOD evidence).
        """
        if variant not in CALIBRATION_VARIANTS:
            raise ConfigError(f"unknown calibration variant {variant!r}")
        z = np.asarray(z, dtype=np.float64)
        mat = self.feature_matrix()
        if variant == "maxsim":
            return self.calibration_score(z)
        if mat.shape[0] == 0:
            return 0.0 if variant == "expsum" else 1.0
        sims = mat @ z
        if variant == "expsum":
            return float(-np.exp(sims / tau).sum())
        # idr
        id_sims = cosine_to_rows(z, self.id_features)
        shift = max(float(sims.max()), float(id_sims.max()))
        e_bank = np.exp(sims / tau - shift / tau)
        e_id = np.exp(id_sims / tau - shift / tau)
        return float(e_id.sum() / (e_id.sum() + e_bank.sum()))

    def dump(self, features_path, sidecar_path) -> None:
        """Write entry features to the embedding format plus a JSON sidecar."""
        items = self.entries()
        dataio.write_embeddings(features_path, self.feature_matrix())
        sidecar = {
            "strategy": self.strategy,
            "capacity": self.capacity,
            "priorities": [e.priority for e in items],
            "insert_seqs": [e.insert_seq for e in items],
        }
        Path(sidecar_path).write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def restore(cls, features_path, sidecar_path, id_features, rng=None) -> "KnowledgeBank":
        sidecar = json.loads(Path(sidecar_path).read_text())
        bank = cls(sidecar["capacity"], sidecar["strategy"], id_features, rng=rng)
        rows = dataio.read_embeddings(features_path, normalize=False)
        pris = sidecar["priorities"]
        seqs = sidecar["insert_seqs"]
        if not (rows.shape[0] == len(pris) == len(seqs)):
            raise DomainError("bank sidecar does not match the features file")
        for row, pri, seq in zip(rows, pris, seqs):
            entry = BankEntry(feature=row.copy(), priority=float(pri), insert_seq=int(seq))
            bank._insert(entry)
            bank._seq = max(bank._seq, int(seq) + 1)
        bank._matrix = None
        return bank
