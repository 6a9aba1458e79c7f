"""Next-day MSE and average rank of the reward-model variants on random-action data.

    python scripts/run_mse_eval.py --config configs/mse_eval.yaml --seeds 0 1 2
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from a2tune.config import load_config
from a2tune.harness import emit_mse, run_mse_eval
from a2tune.reward import TARGETS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path("configs/mse_eval.yaml"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", type=Path, default=Path("runs/mse_eval"))
    args = ap.parse_args()

    base = load_config(args.config)
    ranks = {t: [] for t in TARGETS}
    for seed in args.seeds:
        cfg = replace(base, seed=seed)
        res = run_mse_eval(cfg)
        emit_mse(res, cfg, args.out / f"seed{seed}")
        for t in TARGETS:
            ranks[t].append(res.average_rank(t))
            row = "  ".join(f"{v}={r:.2f}" for v, r in zip(res.variants, res.average_rank(t)))
            print(f"seed {seed} {t:<5} {row}")
    if len(args.seeds) > 1:
        for t in TARGETS:
            mean = np.mean(ranks[t], axis=0)
            print(f"mean    {t:<5} " + "  ".join(f"{v}={r:.2f}" for v, r in zip(base.variants, mean)))


if __name__ == "__main__":
    main()
