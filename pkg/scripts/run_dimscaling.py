#!/usr/bin/env python3
"""Rollout-count scaling study over state dimension (writes study.csv)."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pgstab.cli import cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-values", default="4,8,16,32")
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/dimscaling")
    args = ap.parse_args()
    return cli_main(
        [
            "dimscaling",
            "--n-values",
            args.n_values,
            "--trials",
            str(args.trials),
            "--seed",
            str(args.seed),
            "--out",
            args.out,
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
