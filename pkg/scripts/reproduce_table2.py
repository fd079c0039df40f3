"""Shortcut ablation: mean outer iterations and solve time with and without it.

Usage: python3 scripts/reproduce_table2.py [--config CFG] [--output DIR] [--m 1 5 9] [--episodes 20]
"""

import argparse
import dataclasses
import sys

from ccmpc import experiments as ex
from ccmpc.config import load_config


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--output")
    ap.add_argument("--m", type=int, nargs="+")
    ap.add_argument("--episodes", type=int)
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    if args.output:
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    rows = ex.bench_shortcut(cfg, args.m, args.episodes)
    print(ex.bench_csv(rows), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
