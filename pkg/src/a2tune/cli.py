"""Command-line entry point: generate, mse-eval, optimize, report."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .config import ConfigError, ExperimentConfig, dump_config, load_config, override
from .network import generate_synthetic, save_dataset


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="a2tune", description="A2-threshold tuning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    _common(g)
    g.add_argument("--days", type=int, help="days to generate (default: config days)")

    m = sub.add_parser("mse-eval", help="next-day MSE of the model variants on random-action data")
    _common(m)
    m.add_argument("--variant", action="append", help="variant to evaluate (repeatable)")

    o = sub.add_parser("optimize", help="closed-loop A2 optimisation")
    _common(o)
    o.add_argument("--repeats", type=int)
    o.add_argument("--policy", action="append", help="policy arm (repeatable), e.g. TAG-GCN/ratio-only")
    o.add_argument("--variant", help="model variant used by the default model arm")
    o.add_argument("--freeze-after-day", type=int, help="stop retraining once this day is in the buffer")

    r = sub.add_parser("report", help="re-render summary.txt from a run directory")
    r.add_argument("run_dir", type=Path)
    r.add_argument("--out", type=Path, help="write the summary here as well")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return override(cfg, seed=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            text = harness.rerender(args.run_dir)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "summary.txt").write_text(text, encoding="utf-8")
            sys.stdout.write(text)
            return 0
        cfg = _load(args)
        if args.command == "generate":
            days = args.days or cfg.days
            net = generate_synthetic(replace(cfg.network, days=days, seed=cfg.seed))
            save_dataset(args.out, net.records, net.stats)
            (args.out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
        elif args.command == "mse-eval":
            if args.variant:
                cfg = replace(cfg, variants=tuple(args.variant))
            res = harness.run_mse_eval(cfg)
            harness.emit_mse(res, cfg, args.out)
            for row in res.rank_rows():
                print(f"{row[0]:<8} {row[1]:<6} rank {row[2]:.2f}  mse {row[3]:.4f}")
        elif args.command == "optimize":
            policies = tuple(args.policy) if args.policy else cfg.policies
            if args.variant:
                policies = tuple(args.variant if p == "TAG-GCN" else p for p in policies)
            cfg = override(cfg, repeats=args.repeats, freeze_after_day=args.freeze_after_day)
            cfg = replace(cfg, policies=policies)
            res = harness.run_closed_loop(cfg)
            harness.emit_closed_loop(res, args.out)
            sys.stdout.write((args.out / "summary.txt").read_text(encoding="utf-8"))
    except (ConfigError, harness.HarnessError, ValueError, OSError) as exc:
        print(f"a2tune: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
