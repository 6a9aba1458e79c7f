"""Median graph degree of synthetic networks as a function of the handover kernel length.

Used to pick the default kernel length so a 100-cell network has median degree in [3, 10].
"""
import argparse
from dataclasses import replace

import numpy as np

from a2tune.network import SyntheticNetworkConfig, build_graph, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=100)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--tau", type=float, default=10.0)
    ap.add_argument("--lengths", type=float, nargs="+")
    args = ap.parse_args()

    base = SyntheticNetworkConfig(cell_count=args.cells, days=1)
    lengths = args.lengths or [base.handover_rho_km * f for f in (0.5, 0.75, 1.0, 1.25, 1.5)]
    print(f"{'handover_rho_km':>16} {'median':>8} {'min':>6} {'max':>6}")
    for rho in lengths:
        medians = []
        for seed in range(args.seeds):
            net = generate_synthetic(replace(base, handover_rho_km=rho, seed=seed))
            medians.append(np.median(build_graph(net.stats, net.data.cells, args.tau).degrees))
        print(f"{rho:>16.3f} {np.median(medians):>8.1f} {min(medians):>6.1f} {max(medians):>6.1f}")


if __name__ == "__main__":
    main()
