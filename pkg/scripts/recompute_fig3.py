"""Recompute the evidence-variance table from raw traces with the csv module only.

    python3 scripts/recompute_fig3.py runs/desk
"""

import csv
import statistics
import sys
from collections import defaultdict
from pathlib import Path


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def main(out_dir):
    out = Path(out_dir)
    runs = defaultdict(list)
    for p in sorted((out / "traces").glob("*.csv")):
        runs[p.stem.rsplit("_seed", 1)[0]].append(rows(p))
    table = {(r["variant"], r["t"]): float(r["value"])
             for r in rows(out / "fig3_evidence_variance.csv") if r["metric"] == "var_x_cpu"}
    worst = 0.0
    for label, traces in runs.items():
        for k in range(min(len(t) for t in traces)):
            z = [float(t[k]["log_evidence"]) for t in traces]
            cpu = statistics.fmean(float(t[k]["elapsed_s"]) for t in traces)
            mine = statistics.variance(z) * cpu if len(z) > 1 else float("nan")
            got = table.get((label, traces[0][k]["t"]))
            if got is not None and mine == mine:
                worst = max(worst, abs(mine - got) / max(abs(got), 1e-300))
    print(f"max relative difference: {worst:.3g}")
    return 0 if worst < 1e-9 else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else "runs/desk"))
