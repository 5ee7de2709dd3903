#!/usr/bin/env python3
"""Build the CIFAR-100 vs SVHN benchmark dataset with a real checkpoint.

Encodes the CIFAR-100 test split (ID) and the SVHN test split (OOD) with a
pretrained contrastive vision-language model, writing the manifest the
detector's real-embedding acceptance check looks for. Needs the [clip]
extras plus network access to fetch the checkpoint and both datasets; on
an offline machine it exits 1 with the blocking error.

    python3 scripts/build_cifar100_svhn.py
    python3 scripts/build_cifar100_svhn.py --model openai/clip-vit-base-patch16 \
        --out ../extractor/artifacts/cifar100_svhn/manifest.json
"""

import argparse
import sys
from pathlib import Path

from vlextract import ExtractError, ExtractJob
from vlextract.extract import build_dataset

CIFAR100_CLASSNAMES = [
    "apple", "aquarium fish", "baby", "bear", "beaver", "bed", "bee", "beetle",
    "bicycle", "bottle", "bowl", "boy", "bridge", "bus", "butterfly", "camel",
    "can", "castle", "caterpillar", "cattle", "chair", "chimpanzee", "clock",
    "cloud", "cockroach", "couch", "crab", "crocodile", "cup", "dinosaur",
    "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster",
    "house", "kangaroo", "keyboard", "lamp", "lawn mower", "leopard", "lion",
    "lizard", "lobster", "man", "maple tree", "motorcycle", "mountain",
    "mouse", "mushroom", "oak tree", "orange", "orchid", "otter", "palm tree",
    "pear", "pickup truck", "pine tree", "plain", "plate", "poppy",
    "porcupine", "possum", "rabbit", "raccoon", "ray", "road", "rocket",
    "rose", "sea", "seal", "shark", "shrew", "skunk", "skyscraper", "snail",
    "snake", "spider", "squirrel", "streetcar", "sunflower", "sweet pepper",
    "table", "tank", "telephone", "television", "tiger", "tractor", "train",
    "trout", "tulip", "turtle", "wardrobe", "whale", "willow tree", "wolf",
    "woman", "worm",
]

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "artifacts" / "cifar100_svhn" / "manifest.json"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default="openai/clip-vit-base-patch16")
    p.add_argument("--out", default=str(DEFAULT_OUT))
    p.add_argument("--device", default="cpu")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--shuffle-seed", type=int, default=0)
    args = p.parse_args(argv)

    job = ExtractJob(
        model_id=args.model,
        image_source="cifar100+svhn",
        classnames=CIFAR100_CLASSNAMES,
        out_manifest=args.out,
        device=args.device,
        batch_size=args.batch_size,
        shuffle_seed=args.shuffle_seed,
        dataset_name="cifar100_svhn",
    )
    try:
        manifest = build_dataset(job)
    except ExtractError as exc:
        print(f"blocked: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    print("next: oodstream run --manifest", manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
