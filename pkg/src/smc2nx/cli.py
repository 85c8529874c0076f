"""Command-line entry point: ``smc2nx run|simulate|summarize``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import bench
from .errors import ConfigurationError, FatalDegeneracyError, ParameterError
from .models import simulate

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE = 0, 2, 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smc2nx", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seeds", type=_int_list, help="override the config's seeds, e.g. 0,1,2")
    r.add_argument("--out", help="output directory (default: config 'out' or ./smc2nx-out)")
    r.add_argument("--workers", type=int, help=f"process count (default ${bench.WORKERS_ENV} or 1)")

    s = sub.add_parser("simulate", help="simulate a dataset from a model")
    s.add_argument("--model", choices=("sv", "lgssm"), required=True)
    s.add_argument("--T", type=int, required=True, help="number of observations")
    s.add_argument("--theta", type=_float_list, required=True,
                   help="sv: mu,rho,sigma2  lgssm: rho")
    s.add_argument("--sigma-x", type=float, default=1.0)
    s.add_argument("--sigma-y", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    m = sub.add_parser("summarize", help="summarize the figure tables of a run directory")
    m.add_argument("--in", dest="in_dir", required=True)
    return p


def _cmd_run(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        config, exp = bench.parse_config(args.config)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.seeds:
        exp.seeds = args.seeds
    out = args.out or exp.out or "smc2nx-out"
    manifest = bench.run_experiment(config, exp, out, workers=args.workers)
    n_fail = len(manifest["failures"])
    print(f"{len(manifest['runs'])} runs written to {out} ({n_fail} failed)")
    if any(f["error"].startswith("degeneracy") for f in manifest["failures"]):
        return EXIT_DEGENERATE
    return EXIT_CONFIG if n_fail else EXIT_OK


def _cmd_simulate(args) -> int:
    model = bench.build_model({"name": "sv"} if args.model == "sv" else
                              {"name": "lgssm", "rho": args.theta[0],
                               "sigma_x": args.sigma_x, "sigma_y": args.sigma_y})
    theta = np.asarray(args.theta, dtype=float)
    if len(theta) != model.dim or not model.in_support(theta):
        raise ConfigurationError(f"--theta {args.theta} invalid for model {args.model}")
    _, y = simulate(model, theta, args.T, np.random.default_rng(args.seed))
    bench.write_series_csv(y, args.out)
    return EXIT_OK


def _cmd_summarize(args) -> int:
    print(json.dumps(bench.summarize(args.in_dir), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "simulate": _cmd_simulate, "summarize": _cmd_summarize}
    try:
        return handler[args.command](args)
    except (ConfigurationError, ParameterError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FatalDegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
