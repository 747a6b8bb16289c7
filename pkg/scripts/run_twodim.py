#!/usr/bin/env python3
"""Reproduce the two-dimensional benchmark runs.

Writes one trace per trial plus meta.json under --out.  The sampled mode
uses the published run parameters (N = M = 20, tau = 100, eta = 1e-3,
r = 2e-3, xi = 0.9, gamma0 = 1e-3, one gradient step per iteration); the
exact mode swaps in the model-based oracle with eta = 1e-2.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pgstab.cli import cli_main
from pgstab.config import default_twodim_config


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", choices=["exact", "sampled", "noisy"], default="sampled")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=1)
    ap.add_argument("--out", default="out/twodim")
    args = ap.parse_args()

    cfg = default_twodim_config(variant=args.mode, seed=args.seed)
    if args.mode == "noisy":
        cfg["annealing"]["gamma0"] = 0.01
        cfg["annealing"]["max_outer"] = 500
        cfg["rollout"]["horizon"] = 150
        cfg["rollout"]["step_size"] = 1e-4
        cfg["init_dist"] = {"kind": "uniform_sphere"}
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(cfg, fh)
        cfg_path = fh.name
    return cli_main(
        [
            "anneal",
            "--config",
            cfg_path,
            "--out",
            args.out,
            "--seed",
            str(args.seed),
            "--trials",
            str(args.trials),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
