"""Closed-loop comparison of SCP2, ACP and APF at a given pedestrian count.

Usage: python3 scripts/reproduce_table1.py [--config CFG] [--output DIR] [--m 1] [--episodes 200]

Builds missing artifacts (data, model, bounds) first, then evaluates every
controller on the same seeds and prints one summary row per controller.
"""

import argparse
import dataclasses
import sys

from ccmpc import experiments as ex
from ccmpc.config import load_config
from ccmpc.metrics import SUMMARY_FIELDS


def ensure_artifacts(cfg):
    p = ex.paths(cfg)
    if not (p.train.exists() and p.cal.exists()):
        ex.gen_data(cfg)
    if not p.weights.exists():
        ex.train(cfg)
    if not p.bounds.exists():
        ex.calibrate(cfg)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--output")
    ap.add_argument("--m", type=int, default=1)
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--controllers", nargs="+", default=["scp2", "acp", "apf"])
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    if args.output:
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    ensure_artifacts(cfg)
    w, table = ex.load_weights(cfg), ex.load_table(cfg)
    print(",".join(SUMMARY_FIELDS))
    for c in args.controllers:
        s = ex.evaluate(cfg, c, args.m, args.episodes, weights=w, table=table)
        print(s.summary_csv().splitlines()[1], flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
