#!/usr/bin/env python3
"""Download the MNIST / FashionMNIST IDX files used by the image configs.

Usage:
    python scripts/fetch_mnist.py [--dataset mnist|fashionmnist|all] [--dest DIR]

Files land in DIR/<dataset>/ as the four standard gzipped IDX files; point
RAMFED_DATA_DIR (or the [dataset] dir key) at that directory afterwards.
"""

from __future__ import annotations

import argparse
import sys
import urllib.request
from pathlib import Path

FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]

MIRRORS = {
    "mnist": [
        "https://storage.googleapis.com/cvdf-datasets/mnist/",
        "https://ossci-datasets.s3.amazonaws.com/mnist/",
    ],
    "fashionmnist": [
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    ],
}


def fetch(dataset: str, dest: Path) -> bool:
    target = dest / dataset
    target.mkdir(parents=True, exist_ok=True)
    ok = True
    for name in FILES:
        out = target / name
        if out.exists():
            print(f"{out} already present")
            continue
        for base in MIRRORS[dataset]:
            url = base + name
            try:
                print(f"fetching {url}")
                urllib.request.urlretrieve(url, out)
                break
            except OSError as err:
                print(f"  failed: {err}")
        else:
            print(f"could not fetch {name} from any mirror", file=sys.stderr)
            ok = False
    return ok


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", choices=["mnist", "fashionmnist", "all"], default="all")
    parser.add_argument("--dest", default="data", help="destination directory (default: data/)")
    args = parser.parse_args()
    datasets = ["mnist", "fashionmnist"] if args.dataset == "all" else [args.dataset]
    ok = all(fetch(ds, Path(args.dest)) for ds in datasets)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
