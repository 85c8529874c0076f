"""Journal size and rebuild time against an eager stored history."""

import argparse
import time

import numpy as np

from smc2nx import pf
from smc2nx.kernels import fresh_pf
from smc2nx.models import StochasticVolatility, simulate
from smc2nx.rng import rebuild_history


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="50,200,1000")
    ap.add_argument("--horizons", default="50,200,400")
    args = ap.parse_args()

    model = StochasticVolatility()
    theta = np.array([-1.0, 0.9, 0.1])
    print(f"{'T':>5} {'N_x':>6} {'journal B':>10} {'eager B':>12} {'filter s':>9} {'rebuild s':>10}")
    for T in map(int, args.horizons.split(",")):
        _, y = simulate(model, theta, T - 1, np.random.default_rng(T))
        for n in map(int, args.sizes.split(",")):
            t0 = time.perf_counter()
            _, journal = fresh_pf(model, theta, n, y, np.random.default_rng(0))
            t1 = time.perf_counter()
            hist = rebuild_history(journal, model, theta, y)
            t2 = time.perf_counter()
            print(f"{T:>5} {n:>6} {journal.nbytes():>10} {hist.nbytes():>12} {t1 - t0:>9.3f} {t2 - t1:>10.3f}")


if __name__ == "__main__":
    main()
