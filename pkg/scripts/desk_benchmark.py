"""Run the four variants on the desk-scale synthetic SV dataset and summarize.

    python3 scripts/desk_benchmark.py --out runs/desk --workers 4
"""

import argparse
import json

from smc2nx import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--seeds", default=None, help="comma separated, default 0..4")
    args = ap.parse_args()

    raw = {"preset": "desk"}
    if args.seeds:
        raw["seeds"] = [int(s) for s in args.seeds.split(",")]
    cfg, exp = bench.config_from_dict(raw)
    manifest = bench.run_experiment(cfg, exp, args.out, workers=args.workers)
    summary = bench.summarize(args.out)
    print(json.dumps(summary["variants"], indent=2, sort_keys=True))
    if manifest["failures"]:
        print("failed runs:", manifest["failures"])


if __name__ == "__main__":
    main()
