"""Variant c on the desk dataset for each tau in the sweep (2.1, 1.7, 1.4, 1.1).

Prints final N_x and var(log Z) x CPU per tau.
"""

import argparse

from smc2nx import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/tau_sweep")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cfg, exp = bench.config_from_dict({"preset": "desk", "variants": ["c"], "tau_sweep": True})
    bench.run_experiment(cfg, exp, args.out, workers=args.workers)
    summary = bench.summarize(args.out)["variants"]
    print(f"{'run':>10} {'final N_x (median)':>20} {'var x cpu at T':>16}")
    for label in sorted(summary):
        s = summary[label]
        print(f"{label:>10} {s['final_n_x']['median']:>20.0f} {s['final_var_x_cpu']:>16.4g}")


if __name__ == "__main__":
    main()
