"""Text and image encoders behind one small interface.

`load_encoder` picks the backend from the model id. Ids of the form
"mock:<dim>" build a deterministic offline encoder whose features are
seeded by the input content; anything else is treated as a pretrained
vision-language checkpoint name and loaded through `transformers`, which
needs the optional [clip] dependencies and a fetchable checkpoint.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ArgumentError, JobError


def _unit(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise JobError("encoder produced a zero feature vector")
    return rows / norms


class MockEncoder:
    """Deterministic stand-in encoder for offline runs and tests.

    Every input maps to a fixed unit vector drawn from a generator seeded
    by a content hash, so equal inputs give equal features, across
    processes and platforms, and the model tag keys the whole family.
    """

    def __init__(self, dim: int, tag: str = "mock"):
        if dim < 2:
            raise ArgumentError(f"mock encoder dim must be >= 2, got {dim}")
        self.dim = dim
        self.tag = tag

    def _feature(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(self.tag.encode() + b"\x00" + payload).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.dim)

    def encode_text(self, texts) -> np.ndarray:
        if len(texts) == 0:
            raise ArgumentError("encode_text needs at least one string")
        rows = np.stack([self._feature(b"text:" + t.encode()) for t in texts])
        return _unit(rows)

    def encode_images(self, images) -> np.ndarray:
        if len(images) == 0:
            raise ArgumentError("encode_images needs at least one image")
        rows = []
        for img in images:
            arr = np.asarray(img.convert("RGB") if hasattr(img, "convert") else img,
                             dtype=np.uint8)
            head = f"image:{arr.shape}".encode()
            rows.append(self._feature(head + arr.tobytes()))
        return _unit(np.stack(rows))


class ClipEncoder:
    """Pretrained contrastive vision-language checkpoint via transformers."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise JobError(f"the [clip] extras are not installed: {exc}") from exc
        try:
            self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
            self.processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise JobError(f"could not load model {model_id!r}: {exc}") from exc
        self._torch = torch
        self.device = device
        self.dim = int(self.model.config.projection_dim)

    def encode_text(self, texts) -> np.ndarray:
        if len(texts) == 0:
            raise ArgumentError("encode_text needs at least one string")
        inputs = self.processor(text=list(texts), return_tensors="pt",
                                padding=True, truncation=True).to(self.device)
        with self._torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return _unit(feats.cpu().double().numpy())

    def encode_images(self, images) -> np.ndarray:
        if len(images) == 0:
            raise ArgumentError("encode_images needs at least one image")
        inputs = self.processor(images=list(images), return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return _unit(feats.cpu().double().numpy())


def load_encoder(model_id: str, device: str = "cpu"):
    if model_id.startswith("mock:"):
        try:
            dim = int(model_id.split(":", 1)[1])
        except ValueError as exc:
            raise ArgumentError(f"mock model id must look like 'mock:64', "
                                f"got {model_id!r}") from exc
        return MockEncoder(dim, tag=model_id)
    return ClipEncoder(model_id, device=device)
