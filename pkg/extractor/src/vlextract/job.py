"""Extraction job description and its YAML form."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .errors import ArgumentError

DEFAULT_TEMPLATE = "a photo of a {classname}."


@dataclasses.dataclass
class ExtractJob:
    """Everything needed to turn one checkpoint plus images into a dataset.

    `image_source` is either a directory containing `id/` and `ood/`
    subdirectories of images, or a dataset identifier such as
    "cifar100+svhn". `classnames` order is preserved into the text feature
    rows. A shuffle seed of None keeps the deterministic enumeration order
    (all ID, then all OOD, each sorted by relative path).
    """

    model_id: str
    image_source: str
    classnames: list
    out_manifest: str
    prompt_template: str = DEFAULT_TEMPLATE
    device: str = "cpu"
    shuffle_seed: int | None = None
    batch_size: int = 64
    dataset_name: str = ""

    def validate(self) -> "ExtractJob":
        if not self.model_id:
            raise ArgumentError("model_id must be nonempty")
        if not self.classnames:
            raise ArgumentError("classnames must be nonempty")
        if any(not str(c).strip() for c in self.classnames):
            raise ArgumentError("classnames must not contain blank entries")
        if "{classname}" not in self.prompt_template:
            raise ArgumentError(
                "prompt_template must contain the {classname} placeholder")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.out_manifest:
            raise ArgumentError("out_manifest must be nonempty")
        return self

    def prompts(self) -> list:
        return [self.prompt_template.format(classname=c) for c in self.classnames]


def job_from_yaml(path) -> ExtractJob:
    """Load a job file; `classnames` may be a list or a path to a name-per-line file."""
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ArgumentError(f"{path}: job file must be a YAML mapping")
    known = {f.name for f in dataclasses.fields(ExtractJob)}
    unknown = set(doc) - known
    if unknown:
        raise ArgumentError(f"{path}: unknown job keys {sorted(unknown)}")
    names = doc.get("classnames")
    if isinstance(names, str):
        doc = dict(doc, classnames=_read_classnames(Path(path).parent / names))
    return ExtractJob(**doc).validate()


def _read_classnames(path) -> list:
    names = [line.strip() for line in Path(path).read_text().splitlines()
             if line.strip()]
    if not names:
        raise ArgumentError(f"{path}: classname file is empty")
    return names
