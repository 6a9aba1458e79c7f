"""Closed-loop comparison of every policy arm; writes a run directory and prints the summary.

    python scripts/run_closed_loop.py --config configs/closed_loop.yaml --out runs/closed_loop
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from a2tune.config import load_config
from a2tune.harness import emit_closed_loop, final_day_throughput, run_closed_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path("configs/closed_loop.yaml"))
    ap.add_argument("--out", type=Path, default=Path("runs/closed_loop"))
    ap.add_argument("--repeats", type=int)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    if args.repeats:
        cfg = replace(cfg, repeats=args.repeats)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = run_closed_loop(cfg)
    emit_closed_loop(result, args.out)
    print((args.out / "summary.txt").read_text(), end="")

    final = final_day_throughput(result.trajectory_rows())
    print("\nfinal-day network throughput per repeat")
    for policy, per_repeat in final.items():
        vals = " ".join(f"{per_repeat[r]:8.2f}" for r in sorted(per_repeat))
        print(f"  {policy:<28} {vals}")


if __name__ == "__main__":
    main()
