#!/usr/bin/env python3
"""Cart-pole stabilization: nonlinear annealing, then a ROA estimate of the
learned gain and of the linearized-LQR baseline for comparison.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pgstab.cli import cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--r-ini", type=float, default=0.3)
    ap.add_argument("--out", default="out/cartpole")
    ap.add_argument("--skip-baseline", action="store_true")
    args = ap.parse_args()

    rc = cli_main(
        [
            "cartpole",
            "--seed",
            str(args.seed),
            "--r-ini",
            str(args.r_ini),
            "--out",
            args.out,
        ]
    )
    if rc != 0 or args.skip_baseline:
        return rc
    return cli_main(
        [
            "roa",
            "--lqr-baseline",
            "--seed",
            str(args.seed),
            "--out",
            str(Path(args.out) / "lqr_baseline"),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
