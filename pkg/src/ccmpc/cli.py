"""Command line entry point: ``ccmpc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import experiments as ex
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("ccmpc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccmpc", description="Conformal chance-constrained MPC pipeline.")
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--output", type=Path, help="output directory (overrides config and CCMPC_OUTPUT)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate episodes and write train/cal datasets")
    g.add_argument("--n", type=int, help="total number of records (split train/cal)")
    g.add_argument("--seed", type=int)
    g.add_argument("--behavior", choices=("random_speed", "scripted"))

    t = sub.add_parser("train", help="fit the trajectory predictor")
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--seed", type=int)

    c = sub.add_parser("calibrate", help="build the conformal bound table")
    c.add_argument("--alpha", type=float)

    e = sub.add_parser("eval", help="closed-loop evaluation of one controller")
    e.add_argument("--controller", choices=ex.CONTROLLERS, default="scp2")
    e.add_argument("--m", type=int, help="number of pedestrians")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--logs", action="store_true", help="also write per-episode JSONL logs")

    b = sub.add_parser("bench-shortcut", help="outer iterations and time with/without the shortcut")
    b.add_argument("--m", type=int, nargs="+")
    b.add_argument("--episodes", type=int)
    b.add_argument("--seed", type=int)

    r = sub.add_parser("replay", help="re-simulate one evaluation episode and write its log")
    r.add_argument("--controller", choices=ex.CONTROLLERS, default="scp2")
    r.add_argument("--m", type=int, default=1)
    r.add_argument("--seed", type=int, help="evaluation seed (default: eval.seed)")
    r.add_argument("--index", type=int, default=0, help="episode index within the evaluation run")
    r.add_argument("--check", type=Path, help="compare with an existing log; exit 1 on any difference")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.output is not None:
        cfg = dataclasses.replace(cfg, output_dir=str(args.output))
    cmd = args.command
    if cmd == "gen-data":
        upd = {k: v for k, v in (("n_records", args.n), ("seed", args.seed), ("behavior", args.behavior))
               if v is not None}
        cfg = cfg.with_section("data", **upd) if upd else cfg
    elif cmd == "train":
        upd = {k: v for k, v in (("epochs", args.epochs), ("hidden", args.hidden), ("seed", args.seed))
               if v is not None}
        cfg = cfg.with_section("predictor", **upd) if upd else cfg
    elif cmd == "calibrate" and args.alpha is not None:
        cfg = cfg.with_section("conformal", alpha=args.alpha)
    return cfg


def _run(cfg: RunConfig, args) -> int:
    cmd = args.command
    if cmd == "gen-data":
        train, cal = ex.gen_data(cfg)
        p = ex.paths(cfg)
        print(f"wrote {len(train)} train records to {p.train}")
        print(f"wrote {len(cal)} cal records to {p.cal}")
    elif cmd == "train":
        w = ex.train(cfg)
        print(f"wrote weights (hidden {w.meta.hidden}, layers {w.meta.layers}) to {ex.paths(cfg).weights}")
    elif cmd == "calibrate":
        table = ex.calibrate(cfg)
        print(f"calibrated {len(table.counts)} regions (gamma {table.gamma:.4g}) -> {ex.paths(cfg).bounds}")
    elif cmd == "eval":
        if args.logs:
            cfg = cfg.with_section("eval", write_logs=True)
        s = ex.evaluate(cfg, args.controller, args.m, args.episodes, args.seed)
        print(s.summary_csv(), end="")
        print(f"wrote {ex.paths(cfg).summary(args.controller, s.n_pedestrians)}")
    elif cmd == "bench-shortcut":
        rows = ex.bench_shortcut(cfg, args.m, args.episodes, args.seed)
        print(ex.bench_csv(rows), end="")
        print(f"wrote {ex.paths(cfg).bench}")
    elif cmd == "replay":
        seed = cfg.eval.seed if args.seed is None else args.seed
        weights, table = ex._artifacts_for(args.controller, cfg)
        logs, _ = ex.run_episodes(args.controller, cfg, args.m, args.index + 1, seed, weights, table)
        ep = logs[-1]
        text = ep.to_jsonl()
        out = ex._write(ex.paths(cfg).episode_log(args.controller, args.m, ep.seed), text)
        print(f"episode seed {ep.seed}: {ep.status} after {ep.n_steps} steps -> {out}")
        if args.check is not None:
            if not args.check.exists():
                raise ex.MissingArtifact(f"log to compare not found: {args.check}")
            if args.check.read_text() != text:
                print(f"replay differs from {args.check}", file=sys.stderr)
                return 1
            print(f"replay identical to {args.check}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return _run(cfg, args)
    except (ConfigError, ex.MissingArtifact, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
