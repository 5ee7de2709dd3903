"""The extraction pipeline: enumerate, encode in batches, write dataset files.

Enumeration is deterministic (ID items first, then OOD, each side sorted),
an optional seed shuffles that order reproducibly, and both the rule and
the seed are recorded in the manifest notes so any downstream
order-sensitivity study can reconstruct the stream exactly.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from . import formats
from .encoders import load_encoder
from .errors import JobError
from .job import ExtractJob

log = logging.getLogger("vlextract")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}
ENUMERATION_RULE = "sorted-id-then-ood"


def extract_text(job: ExtractJob, encoder=None) -> np.ndarray:
    """Encode one prompt per classname, in classname order, unit rows."""
    job.validate()
    if encoder is None:
        encoder = load_encoder(job.model_id, device=job.device)
    prompts = job.prompts()
    chunks = [encoder.encode_text(prompts[i:i + job.batch_size])
              for i in range(0, len(prompts), job.batch_size)]
    return np.concatenate(chunks, axis=0)


def _enumerate_directory(source: Path) -> list:
    """Items from `<source>/id/` and `<source>/ood/`, each side sorted."""
    items = []
    for label, side in ((1, "id"), (0, "ood")):
        side_dir = source / side
        if not side_dir.is_dir():
            raise JobError(f"{source}: expected an {side}/ subdirectory of images")
        paths = sorted(p for p in side_dir.rglob("*")
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not paths:
            raise JobError(f"{side_dir}: no images found")
        for p in paths:
            items.append((label, str(p.relative_to(source)),
                          lambda p=p: Image.open(p)))
    return items


def _enumerate_dataset(name: str) -> list:
    """Items for a standard dataset pair identifier like "cifar100+svhn"."""
    if name != "cifar100+svhn":
        raise JobError(f"unknown dataset identifier {name!r}")
    try:
        from torchvision import datasets
    except ImportError as exc:
        raise JobError(f"the [clip] extras are not installed: {exc}") from exc
    root = Path.home() / ".cache" / "vlextract"
    try:
        cifar = datasets.CIFAR100(root=str(root), train=False, download=True)
        svhn = datasets.SVHN(root=str(root), split="test", download=True)
    except Exception as exc:
        raise JobError(f"could not obtain {name}: {exc}") from exc
    items = [(1, f"cifar100/{i:05d}", lambda i=i: cifar[i][0])
             for i in range(len(cifar))]
    items += [(0, f"svhn/{i:05d}", lambda i=i: svhn[i][0])
              for i in range(len(svhn))]
    return items


def enumerate_items(job: ExtractJob) -> list:
    source = Path(job.image_source)
    if source.is_dir():
        items = _enumerate_directory(source)
    else:
        items = _enumerate_dataset(job.image_source)
    if job.shuffle_seed is not None:
        order = np.random.default_rng(job.shuffle_seed).permutation(len(items))
        items = [items[i] for i in order]
    return items


def extract_images(job: ExtractJob, encoder=None) -> tuple:
    """Encode the stream; returns (features, labels, skipped keys)."""
    job.validate()
    if encoder is None:
        encoder = load_encoder(job.model_id, device=job.device)
    items = enumerate_items(job)

    features, labels, skipped = [], [], []
    batch_imgs, batch_labels = [], []

    def flush():
        if batch_imgs:
            features.append(encoder.encode_images(batch_imgs))
            labels.extend(batch_labels)
            batch_imgs.clear()
            batch_labels.clear()

    for index, (label, key, loader) in enumerate(items):
        try:
            img = loader()
            img.load()
        except Exception as exc:
            log.warning("skipping unreadable image %d (%s): %s", index, key, exc)
            skipped.append(key)
            continue
        batch_imgs.append(img)
        batch_labels.append(label)
        if len(batch_imgs) == job.batch_size:
            flush()
    flush()

    if not features:
        raise JobError("every image in the source failed to load")
    return np.concatenate(features, axis=0), np.asarray(labels, dtype=np.int64), skipped


def build_dataset(job: ExtractJob) -> Path:
    """Run both extractions and write the manifest plus its three files."""
    job.validate()
    encoder = load_encoder(job.model_id, device=job.device)
    text = extract_text(job, encoder)
    stream, labels, skipped = extract_images(job, encoder)
    if text.shape[1] != stream.shape[1]:
        raise JobError(f"text dim {text.shape[1]} != image dim {stream.shape[1]}")

    out = Path(job.out_manifest)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_embeddings(out.parent / "id_text.emb", text)
    formats.write_embeddings(out.parent / "stream.emb", stream)
    formats.write_labels(out.parent / "labels.txt", labels)

    notes = json.dumps({"extraction": {
        "model_id": job.model_id,
        "image_source": job.image_source,
        "prompt_template": job.prompt_template,
        "enumeration": ENUMERATION_RULE,
        "shuffle_seed": job.shuffle_seed,
        "preprocessing": "checkpoint default",
        "skipped": len(skipped),
        "device": job.device,
    }})
    return formats.write_manifest(
        out,
        dataset_name=job.dataset_name or out.resolve().parent.name,
        dim=text.shape[1],
        id_classnames=job.classnames,
        files={"id_text": "id_text.emb", "stream": "stream.emb",
               "labels": "labels.txt"},
        notes=notes,
    )
