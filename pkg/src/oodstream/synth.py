"""Seeded synthetic embedding streams for benchmarking the detector.

ID class features double as cluster centers on the unit sphere; stream
samples are unit-normalized Gaussian perturbations of a center. OOD cluster
centers are pushed away from the ID features until no cosine exceeds the
configured ceiling, so the difficulty of the stream is a controlled quantity.
Everything derives from one seeded generator: a given spec reproduces its
files byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from . import dataio
from .core import ConfigError, normalize_rows

_CEILING_ITERS = 200


@dataclasses.dataclass
class SynthSpec:
    """Generation parameters for one synthetic dataset.

    `concentration` sets the per-coordinate perturbation scale
    concentration/sqrt(dim), so small values read roughly as the cluster's
    angular spread in radians. `ood_concentration` defaults to the ID value;
    `ood_center_spread` draws the OOD centers as perturbations of one shared
    direction instead of independently; `max_id_cosine` is the ceiling on
    |cos| between any OOD center and any ID feature.

    `ood_id_affinity` makes near-OOD streams: each raw OOD center (the shared
    anchor, in spread mode) is drawn at exactly that cosine from one randomly
    chosen ID feature instead of isotropically. Combined with a lower
    `max_id_cosine` the ceiling projection then pins the center at the
    ceiling, which is how tests place OOD clusters at a controlled distance
    just inside the ID score distribution.
    """

    dim: int
    num_id_classes: int
    num_ood_clusters: int
    concentration: float
    id_fraction: float
    stream_length: int
    seed: int
    ood_concentration: float | None = None
    ood_center_spread: float | None = None
    ood_id_affinity: float | None = None
    max_id_cosine: float = 0.3

    def validate(self) -> "SynthSpec":
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")
        if self.num_id_classes < 1 or self.num_ood_clusters < 1:
            raise ConfigError("need at least one ID class and one OOD cluster")
        if self.num_id_classes + self.num_ood_clusters > self.dim:
            raise ConfigError("more clusters than dimensions leaves no room to separate them")
        if self.concentration < 0:
            raise ConfigError("concentration must be >= 0")
        if self.ood_concentration is not None and self.ood_concentration < 0:
            raise ConfigError("ood_concentration must be >= 0")
        if not (0.0 < self.id_fraction < 1.0):
            raise ConfigError("id_fraction must sit strictly inside (0, 1)")
        if self.stream_length < 1:
            raise ConfigError("stream_length must be >= 1")
        if not (0.0 < self.max_id_cosine < 1.0):
            raise ConfigError("max_id_cosine must sit in (0, 1)")
        if self.ood_id_affinity is not None and not (0.0 <= self.ood_id_affinity < 1.0):
            raise ConfigError("ood_id_affinity must sit in [0, 1)")
        return self


@dataclasses.dataclass
class SynthResult:
    id_features: np.ndarray
    ood_centers: np.ndarray
    stream: np.ndarray
    labels: np.ndarray


def _push_below_ceiling(center: np.ndarray, id_features: np.ndarray, ceiling: float) -> np.ndarray:
    """Iteratively remove ID components until every |cos| <= ceiling."""
    v = center.copy()
    for _ in range(_CEILING_ITERS):
        cosines = id_features @ v
        worst = int(np.argmax(np.abs(cosines)))
        c = cosines[worst]
        if abs(c) <= ceiling + 1e-12:
            return v
        target = math.copysign(ceiling, c)
        v = v - (c - target) * id_features[worst]
        v = v / np.linalg.norm(v)
    raise ConfigError("could not push an OOD center below the cosine ceiling; "
                      "ceiling too tight for this many correlated ID features")


def _perturb(centers: np.ndarray, noise: np.ndarray, scale: float) -> np.ndarray:
    return normalize_rows(centers + scale * noise)


def _draw_toward(rng, id_features: np.ndarray, affinity: float, d: int) -> np.ndarray:
    """Unit vector at exactly `affinity` cosine from one random ID feature."""
    t = id_features[int(rng.integers(0, id_features.shape[0]))]
    g = rng.normal(size=d)
    perp = g - (g @ t) * t
    perp /= np.linalg.norm(perp)
    return affinity * t + math.sqrt(1.0 - affinity * affinity) * perp


def generate(spec: SynthSpec) -> SynthResult:
    """Draw the ID features, OOD centers, stream, and labels for a spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.dim

    id_features = normalize_rows(rng.normal(size=(spec.num_id_classes, d)))

    if spec.ood_center_spread is None:
        if spec.ood_id_affinity is None:
            raw = rng.normal(size=(spec.num_ood_clusters, d))
        else:
            raw = np.stack([_draw_toward(rng, id_features, spec.ood_id_affinity, d)
                            for _ in range(spec.num_ood_clusters)])
    else:
        if spec.ood_id_affinity is None:
            anchor = rng.normal(size=d)
        else:
            anchor = _draw_toward(rng, id_features, spec.ood_id_affinity, d)
        raw = anchor[None, :] + spec.ood_center_spread * rng.normal(size=(spec.num_ood_clusters, d))
    ood_centers = np.stack([
        _push_below_ceiling(row, id_features, spec.max_id_cosine)
        for row in normalize_rows(raw)
    ])

    n_id = round(spec.id_fraction * spec.stream_length)
    if n_id == 0 or n_id == spec.stream_length:
        raise ConfigError("id_fraction leaves one side of the stream empty at this length")
    labels = np.concatenate([
        np.ones(n_id, dtype=np.int64),
        np.zeros(spec.stream_length - n_id, dtype=np.int64),
    ])
    rng.shuffle(labels)

    pick_id = rng.integers(0, spec.num_id_classes, size=spec.stream_length)
    pick_ood = rng.integers(0, spec.num_ood_clusters, size=spec.stream_length)
    noise = rng.normal(size=(spec.stream_length, d))

    id_mask = labels == 1
    centers = np.where(id_mask[:, None], id_features[pick_id], ood_centers[pick_ood])
    ood_conc = spec.concentration if spec.ood_concentration is None else spec.ood_concentration
    scales = np.where(id_mask, spec.concentration, ood_conc) / math.sqrt(d)
    stream = normalize_rows(centers + scales[:, None] * noise)

    return SynthResult(id_features=id_features, ood_centers=ood_centers,
                       stream=stream, labels=labels)


def write_dataset(spec: SynthSpec, out_dir) -> Path:
    """Generate and write the dataset files plus a manifest; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = generate(spec)
    dataio.write_embeddings(out / "id_text.emb", result.id_features)
    dataio.write_embeddings(out / "stream.emb", result.stream)
    dataio.write_labels(out / "labels.txt", result.labels)
    manifest = dataio.Manifest(
        dataset_name=f"synthetic-seed{spec.seed}",
        dim=spec.dim,
        id_classnames=[f"cluster_{i:02d}" for i in range(spec.num_id_classes)],
        files={"id_text": "id_text.emb", "stream": "stream.emb", "labels": "labels.txt"},
        notes=json.dumps({"synth_spec": dataclasses.asdict(spec)}),
    )
    path = out / "manifest.json"
    manifest.save(path)
    return path
