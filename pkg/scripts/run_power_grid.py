#!/usr/bin/env python3
"""Run the full rejection-rate grid (desk scale by default).

Thin wrapper over `balance-lab simulate` so the experiment is reproducible
from a single command:

    python scripts/run_power_grid.py --out-dir runs/desk
    python scripts/run_power_grid.py --config configs/full_scale.json --out-dir runs/full

The full-scale config is a long run; checkpointing makes it resumable
with --resume after an interruption.
"""

import argparse
import pathlib
import sys

from balance_lab import cli

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(CONFIGS / "desk_scale.json"))
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--threads", type=int, default=0, help="0 = all cores")
    parser.add_argument("--resume", action="store_true")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    cli_args = [
        "simulate",
        "--config", args.config,
        "--out-dir", args.out_dir,
        "--threads", str(args.threads),
    ]
    if args.resume:
        cli_args.append("--resume")
    if args.seed is not None:
        cli_args.extend(["--seed", str(args.seed)])
    return cli.main(cli_args)


if __name__ == "__main__":
    sys.exit(main())
