"""Command line entry: one job in, one dataset out.

Exit codes: 0 on success, 1 with a one-line JSON error object on stderr for
anything the package raises on purpose, 2 for bad usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .errors import ExtractError
from .extract import build_dataset
from .job import DEFAULT_TEMPLATE, ExtractJob, _read_classnames, job_from_yaml


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vlextract",
        description="Extract vision-language embeddings into a dataset manifest")
    p.add_argument("--job", help="YAML job file; flags below override its fields")
    p.add_argument("--model", help="checkpoint name, or mock:<dim> for the offline encoder")
    p.add_argument("--source", help="image directory with id/ and ood/, or a dataset id")
    p.add_argument("--classnames", help="file with one classname per line")
    p.add_argument("--out", help="output manifest path")
    p.add_argument("--template", help=f"prompt template (default {DEFAULT_TEMPLATE!r})")
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.add_argument("--device", default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--dataset-name", default=None)
    return p


def _job_from_args(args: argparse.Namespace) -> ExtractJob:
    fields: dict = {}
    if args.job:
        fields = dataclasses.asdict(job_from_yaml(args.job))
    overrides = {
        "model_id": args.model,
        "image_source": args.source,
        "out_manifest": args.out,
        "prompt_template": args.template,
        "shuffle_seed": args.shuffle_seed,
        "device": args.device,
        "batch_size": args.batch_size,
        "dataset_name": args.dataset_name,
    }
    if args.classnames:
        overrides["classnames"] = _read_classnames(args.classnames)
    fields.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"model_id", "image_source", "classnames", "out_manifest"} - set(fields)
    if missing:
        raise ExtractError(f"missing job fields {sorted(missing)}; "
                           f"pass --job or the matching flags")
    return ExtractJob(**fields).validate()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        job = _job_from_args(args)
        manifest = build_dataset(job)
    except (ExtractError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps({"manifest": str(manifest)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
