"""Held-out empirical coverage of the calibrated bound table, per region.

Usage: python3 scripts/coverage_audit.py [--config CFG] [--output DIR] [--n 20000]
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
    ap.add_argument("--n", type=int, default=20000)
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    if args.output:
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    cov = ex.coverage_audit(cfg, args.n)
    print("region  n_cal  n_test  joint   min_k")
    for reg, c in sorted(cov.items()):
        print(f"{reg!s:7} {c['n_cal']:6d} {c['n_test']:6d}  {c['joint']:.4f}  {min(c['per_step']):.4f}")
    print(f"wrote {ex.paths(cfg).coverage}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
