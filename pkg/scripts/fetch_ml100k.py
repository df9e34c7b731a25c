#!/usr/bin/env python3
"""Download ML-100K into data/ml-100k/ so the dataset-gated acceptance
tests can run. Needs network access; the test suite skips those tests
cleanly when this has not been run."""

import argparse
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default=None,
                        help="target directory (default: <repo>/data/ml-100k)")
    args = parser.parse_args()
    dest = Path(args.dest) if args.dest else (
        Path(__file__).resolve().parents[1] / "data" / "ml-100k")
    target = dest / "u.data"
    if target.exists():
        print(f"{target} already present")
        return 0
    print(f"downloading {URL} ...")
    try:
        with urllib.request.urlopen(URL, timeout=60) as resp:
            blob = resp.read()
    except OSError as exc:
        print(f"download failed: {exc}", file=sys.stderr)
        return 1
    dest.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        with zf.open("ml-100k/u.data") as src:
            target.write_bytes(src.read())
    print(f"wrote {target} ({target.stat().st_size} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
