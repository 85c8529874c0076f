"""Experiment plumbing: JSON configs, data ingestion, multi-seed runs and
long-format figure tables.

Every file written here starts with a schema line (``# schema: ...`` for
CSV, a ``"schema"`` key for JSON) and every table is a pure projection of
the per-run trace and posterior CSVs, so outputs can be recomputed from
those alone.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import subprocess
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import Smc2Config, Variant, run, write_trace_csv
from .errors import ConfigurationError, FatalDegeneracyError, Smc2Error
from .models import LinearGaussian, StochasticVolatility, simulate

log = logging.getLogger(__name__)

WORKERS_ENV = "SMC2NX_WORKERS"
FIGURE_SCHEMA = "smc2nx-figure/1"
POSTERIOR_SCHEMA = "smc2nx-posterior/1"
DATA_SCHEMA = "smc2nx-data/1"
MANIFEST_SCHEMA = "smc2nx-manifest/1"
SUMMARY_SCHEMA = "smc2nx-summary/1"
FIGURE_FILES = {"fig2": "fig2_nx.csv", "fig3": "fig3_evidence_variance.csv",
                "fig4": "fig4_acceptance.csv", "fig5": "fig5_posterior.csv"}
FIGURE_COLUMNS = ("variant", "seed", "t", "metric", "value")
# label used in the seed column for across-seed aggregates
ALL_SEEDS = "all"
TAU_SWEEP = (2.1, 1.7, 1.4, 1.1)

DESK_PRESET = {
    "model": "sv",
    "synthetic": {"T": 100, "theta": [-1.0, 0.9, 0.1], "seed": 42},
    "n_theta": 200,
    "n_x_init": 100,
    "n_x_max": 2000,
    "variants": ["a", "b", "c", "d"],
    "seeds": [0, 1, 2, 3, 4],
}
PRESETS = {"desk": DESK_PRESET}

_CONFIG_FIELDS = {f.name for f in fields(Smc2Config)}
_EXPERIMENT_KEYS = {"model", "data", "transform", "synthetic", "variants", "seeds",
                    "tau_sweep", "preset", "out", "demean"}
_MODEL_KEYS = {"sv": {"name", "mu_prior_sd", "ig_shape", "ig_scale"},
               "lgssm": {"name", "rho", "sigma_x", "sigma_y"}}
_SYNTHETIC_KEYS = {"T", "theta", "seed"}


# --------------------------------------------------------------------------
# configuration


@dataclass
class Experiment:
    """Everything a run needs besides the sampler settings."""

    model: dict
    data: str | None = None
    transform: str = "none"
    demean: bool = False
    synthetic: dict | None = None
    variants: list = field(default_factory=lambda: ["c"])
    seeds: list = field(default_factory=lambda: [0])
    tau_sweep: list = field(default_factory=list)
    out: str | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _fail(path: str, msg: str):
    raise ConfigurationError(f"{path}: {msg}" if path else msg)


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    for k in obj:
        if k not in allowed:
            _fail(f"{path}.{k}" if path else k, "unknown key")


def load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return obj


def config_from_dict(raw: dict, base_dir=None) -> tuple[Smc2Config, Experiment]:
    """Validate a raw config mapping and apply defaults.

    Keys are either :class:`Smc2Config` fields or experiment keys; a
    ``preset`` key pulls in a named preset that the other keys override.
    """
    _check_keys(raw, _CONFIG_FIELDS | _EXPERIMENT_KEYS, "")
    if "preset" in raw:
        if raw["preset"] not in PRESETS:
            _fail("preset", f"unknown preset {raw['preset']!r}; known: {sorted(PRESETS)}")
        raw = {**PRESETS[raw["preset"]], **{k: v for k, v in raw.items() if k != "preset"}}

    model = raw.get("model")
    if model is None:
        _fail("model", "required")
    if isinstance(model, str):
        model = {"name": model}
    _check_keys(model, {"name"} | set().union(*_MODEL_KEYS.values()), "model")
    name = model.get("name")
    if name not in _MODEL_KEYS:
        _fail("model.name", f"must be one of {sorted(_MODEL_KEYS)}, got {name!r}")
    _check_keys(model, _MODEL_KEYS[name], "model")

    has_data, has_syn = "data" in raw, "synthetic" in raw
    if has_data == has_syn:
        _fail("data", "give exactly one of 'data' or 'synthetic'")
    synthetic = None
    if has_syn:
        synthetic = dict(raw["synthetic"]) if isinstance(raw["synthetic"], dict) else raw["synthetic"]
        _check_keys(synthetic, _SYNTHETIC_KEYS, "synthetic")
        for k in ("T", "theta"):
            if k not in synthetic:
                _fail(f"synthetic.{k}", "required")
        if not isinstance(synthetic["T"], int) or synthetic["T"] < 1:
            _fail("synthetic.T", "must be a positive integer")
        synthetic.setdefault("seed", 0)
    data = raw.get("data")
    if data is not None and base_dir is not None and not os.path.isabs(data):
        data = str(Path(base_dir) / data)
    transform = raw.get("transform", "none")
    if transform not in ("none", "log_returns_100"):
        _fail("transform", "must be 'none' or 'log_returns_100'")
    demean = raw.get("demean", False)
    if not isinstance(demean, bool):
        _fail("demean", "must be true or false")

    variants = raw.get("variants", [raw.get("variant", "c")])
    if not isinstance(variants, list) or not variants:
        _fail("variants", "must be a non-empty list")
    for i, v in enumerate(variants):
        if str(v).lower() not in {x.value for x in Variant}:
            _fail(f"variants[{i}]", f"unknown variant {v!r}")
    variants = [str(v).lower() for v in variants]
    seeds = raw.get("seeds", [raw.get("seed", 0)])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        _fail("seeds", "must be a list of non-negative integers")
    sweep = raw.get("tau_sweep", [])
    if sweep is True:
        sweep = list(TAU_SWEEP)
    elif sweep is False:
        sweep = []
    if not isinstance(sweep, list) or not all(isinstance(x, (int, float)) and x > 0 for x in sweep):
        _fail("tau_sweep", "must be true/false or a list of positive numbers")

    if "tau" in raw and "a" in variants:
        warnings.warn("tau is unused by variant a", UserWarning, stacklevel=2)

    kwargs = {k: raw[k] for k in _CONFIG_FIELDS & raw.keys() if k != "variant"}
    kwargs["variant"] = variants[0]
    try:
        config = Smc2Config(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    exp = Experiment(model=model, data=data, transform=transform, demean=demean, synthetic=synthetic,
                     variants=variants, seeds=seeds, tau_sweep=[float(x) for x in sweep],
                     out=raw.get("out"))
    return config, exp


def parse_config(path) -> tuple[Smc2Config, Experiment]:
    """Read a JSON config file; see :func:`config_from_dict`."""
    return config_from_dict(load_json(path), base_dir=Path(path).parent)


def build_model(spec: dict):
    spec = dict(spec)
    name = spec.pop("name")
    if name == "sv":
        return StochasticVolatility(**spec)
    return LinearGaussian(spec.get("rho", 0.9), spec.get("sigma_x", 1.0), spec.get("sigma_y", 0.5))


# --------------------------------------------------------------------------
# data


def _is_number(s: str) -> bool:
    try:
        return math.isfinite(float(s))
    except ValueError:
        return False


def ingest_returns(csv_path, transform: str = "none") -> np.ndarray:
    """Read one numeric series from a CSV file (last column of each row).

    A first row whose value is not numeric is treated as a header.  Lines
    starting with ``#`` and blank lines are ignored.  ``log_returns_100``
    turns prices p into ``100 * diff(log p)``.
    """
    if transform not in ("none", "log_returns_100"):
        raise ConfigurationError(f"unknown transform {transform!r}")
    values = []
    with open(csv_path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
                if r and any(c.strip() for c in r) and not r[0].lstrip().startswith("#")]
    for k, (line, row) in enumerate(rows):
        cell = row[-1].strip()
        if _is_number(cell):
            values.append(float(cell))
        elif k == 0:
            continue  # header
        else:
            raise ConfigurationError(f"{csv_path}: non-numeric value {cell!r} at row {line}")
    x = np.asarray(values, dtype=float)
    if transform == "log_returns_100":
        if np.any(x <= 0):
            raise ConfigurationError(f"{csv_path}: prices must be positive for log returns")
        x = 100.0 * np.diff(np.log(x))
    if len(x) == 0:
        raise ConfigurationError(f"{csv_path}: empty dataset")
    return x


def write_series_csv(y, path, name: str = "y") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {DATA_SCHEMA}\n{name}\n")
        for v in y:
            fh.write(repr(float(v)) + "\n")


def load_data(exp: Experiment, model) -> np.ndarray:
    if exp.data is not None:
        y = ingest_returns(exp.data, exp.transform)
        return y - y.mean() if exp.demean else y
    syn = exp.synthetic
    theta = np.asarray(syn["theta"], dtype=float)
    if len(theta) != model.dim or not model.in_support(theta):
        raise ConfigurationError(f"synthetic.theta {syn['theta']} invalid for model {model.name}")
    _, y = simulate(model, theta, syn["T"], np.random.default_rng(syn["seed"]))
    return y


# --------------------------------------------------------------------------
# experiment runs


@dataclass
class RunSpec:
    label: str
    variant: str
    seed: int
    config: dict


@dataclass
class RunResult:
    label: str
    variant: str
    seed: int
    trace: list
    thetas: np.ndarray | None
    log_weights: np.ndarray | None
    error: str | None = None


def _execute(args) -> RunResult:
    spec, model_spec, data = args
    model = build_model(model_spec)
    cfg = Smc2Config(**spec.config)
    try:
        st = run(cfg, model, data)
        return RunResult(spec.label, spec.variant, spec.seed, st.trace, st.thetas, st.log_weights)
    except FatalDegeneracyError as exc:
        return RunResult(spec.label, spec.variant, spec.seed, exc.state.trace, None, None,
                         f"degeneracy: {exc}")
    except Smc2Error as exc:
        return RunResult(spec.label, spec.variant, spec.seed, [], None, None,
                         f"{type(exc).__name__}: {exc}")


def plan_runs(config: Smc2Config, exp: Experiment) -> list[RunSpec]:
    base = config.to_dict()
    specs = []
    for v in exp.variants:
        for s in exp.seeds:
            specs.append(RunSpec(v, v, s, {**base, "variant": v, "seed": s}))
    for tau in exp.tau_sweep:
        label = f"c_tau{tau:g}"
        for s in exp.seeds:
            specs.append(RunSpec(label, "c", s, {**base, "variant": "c", "seed": s, "tau": tau}))
    return specs


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be >= 1")
    return n


def build_id() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run_experiment(config: Smc2Config, exp: Experiment, out_dir, workers: int | None = None) -> dict:
    """Run every (variant, seed) pair plus the tau sweep; write traces,
    posterior samples, the four figure tables and ``manifest.json``.

    Runs go to a process pool of ``workers`` (default from the
    ``SMC2NX_WORKERS`` environment variable).  Failed runs are recorded
    in the manifest and the rest continue.  Returns the manifest.
    """
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "posterior").mkdir(exist_ok=True)
    model = build_model(exp.model)
    data = load_data(exp, model)
    specs = plan_runs(config, exp)
    workers = worker_count() if workers is None else workers
    jobs = [(s, exp.model, data) for s in specs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            results = list(pool.map(_execute, jobs))
    else:
        results = [_execute(j) for j in jobs]

    runs, failures = [], []
    for r in results:
        stem = f"{r.label}_seed{r.seed}"
        trace_path = out / "traces" / f"{stem}.csv"
        write_trace_csv(r.trace, trace_path)
        entry = {"label": r.label, "variant": r.variant, "seed": r.seed,
                 "trace": str(trace_path.relative_to(out))}
        if r.thetas is not None:
            post_path = out / "posterior" / f"{stem}.csv"
            write_posterior_csv(r.thetas, r.log_weights, model.param_names, post_path)
            entry["posterior"] = str(post_path.relative_to(out))
        if r.error:
            entry["error"] = r.error
            failures.append({"label": r.label, "seed": r.seed, "error": r.error})
            log.warning("run %s failed: %s", stem, r.error)
        runs.append(entry)

    tables = figure_tables(out, runs, model.param_names)
    for key, rows in tables.items():
        write_figure_csv(rows, out / FIGURE_FILES[key], key)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "build": build_id(),
        "config": config.to_dict(),
        "experiment": exp.to_dict(),
        "n_observations": len(data),
        "seeds": list(exp.seeds),
        "runs": runs,
        "figures": dict(FIGURE_FILES),
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def write_posterior_csv(thetas, log_weights, names, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {POSTERIOR_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("island", *names, "log_weight"))
        for m, (th, lw) in enumerate(zip(thetas, log_weights)):
            w.writerow((m, *(repr(float(v)) for v in th), repr(float(lw))))


def read_trace_csv(path) -> dict:
    """Trace CSV as a dict of numpy columns."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
    return cols


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_figure_csv(rows, path, key: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {FIGURE_SCHEMA} table={key}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIGURE_COLUMNS)
        for r in rows:
            w.writerow((r[0], r[1], r[2], r[3], _num(r[4])))


def figure_tables(out_dir, runs, param_names) -> dict:
    """Build the four long-format figure tables from files on disk.

    fig2: N_x per (run, t).  fig3: across-seed variance of the log
    evidence at each t times the across-seed mean elapsed_s, plus both
    factors.  fig4: PMMH acceptance rate at each t with PMMH attempts.
    fig5: final-time theta of every island and its log-weight.
    """
    out = Path(out_dir)
    fig2, fig3, fig4, fig5 = [], [], [], []
    by_label: dict[str, list] = {}
    for r in runs:
        tr = read_trace_csv(out / r["trace"])
        by_label.setdefault(r["label"], []).append(tr)
        if len(tr.get("t", [])) == 0:
            continue
        for t, nx, att, acc in zip(tr["t"], tr["n_x"], tr["pmmh_attempts"], tr["pmmh_accepts"]):
            fig2.append((r["label"], r["seed"], int(t), "n_x", int(nx)))
            if att > 0:
                fig4.append((r["label"], r["seed"], int(t), "acceptance", acc / att))
        if "posterior" in r:
            t_final = int(tr["t"][-1])
            for row in read_table(out / r["posterior"]):
                m = int(row["island"])
                for p in param_names:
                    fig5.append((r["label"], r["seed"], t_final, f"{p}[{m}]", float(row[p])))
                fig5.append((r["label"], r["seed"], t_final, f"log_weight[{m}]",
                             float(row["log_weight"])))
    for label, traces in by_label.items():
        T = min((len(tr.get("t", [])) for tr in traces), default=0)
        for k in range(T):
            le = np.array([tr["log_evidence"][k] for tr in traces])
            el = np.array([tr["elapsed_s"][k] for tr in traces])
            var = float(np.var(le, ddof=1)) if len(le) > 1 else 0.0
            mean_el = float(el.mean())
            t = int(traces[0]["t"][k])
            fig3.append((label, ALL_SEEDS, t, "var_log_evidence", var))
            fig3.append((label, ALL_SEEDS, t, "mean_elapsed_s", mean_el))
            fig3.append((label, ALL_SEEDS, t, "var_x_cpu", var * mean_el))
    return {"fig2": fig2, "fig3": fig3, "fig4": fig4, "fig5": fig5}


# --------------------------------------------------------------------------
# summary


def _med_iqr(values) -> dict:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return {"median": None, "iqr": None, "n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "iqr": float(q3 - q1), "n": int(len(v))}


def summarize(in_dir) -> dict:
    """Per-variant medians and IQRs computed from the figure tables.

    ``final_n_x`` and ``acceptance`` (mean PMMH acceptance over time) are
    taken across seeds; ``var_x_cpu`` is taken across time steps.  The
    final-time variance x CPU value is reported separately.
    """
    d = Path(in_dir)
    fig2 = read_table(d / FIGURE_FILES["fig2"])
    fig3 = read_table(d / FIGURE_FILES["fig3"])
    fig4 = read_table(d / FIGURE_FILES["fig4"])
    labels = list(dict.fromkeys(r["variant"] for r in fig2 + fig3))
    out = {"schema": SUMMARY_SCHEMA, "variants": {}}
    for lab in labels:
        final_nx: dict[str, tuple] = {}
        for r in fig2:
            if r["variant"] == lab:
                t = int(r["t"])
                if r["seed"] not in final_nx or t >= final_nx[r["seed"]][0]:
                    final_nx[r["seed"]] = (t, float(r["value"]))
        acc: dict[str, list] = {}
        for r in fig4:
            if r["variant"] == lab:
                acc.setdefault(r["seed"], []).append(float(r["value"]))
        vxc = sorted(((int(r["t"]), float(r["value"])) for r in fig3
                      if r["variant"] == lab and r["metric"] == "var_x_cpu"))
        out["variants"][lab] = {
            "final_n_x": _med_iqr([v for _, v in final_nx.values()]),
            "acceptance": _med_iqr([np.mean(v) for v in acc.values()]),
            "var_x_cpu": _med_iqr([v for _, v in vxc]),
            "final_var_x_cpu": vxc[-1][1] if vxc else None,
        }
    (d / "summary.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out
