"""SMC^2: an SMC sampler over theta where each theta-particle carries its own
particle filter, with resample-move steps that may change N_x.

Four resample-move variants are available:

``a``  PMMH move; exchange step doubling N_x when mean acceptance < threshold
``b``  PMMH move; exchange step to the calibrated N_x after every move
``c``  calibrate N_x, then full particle Gibbs (theta | x by Gibbs)
``d``  calibrate N_x, then partial particle Gibbs followed by PMMH moves

Results depend only on the seed: each island draws from its own stream
keyed by (seed, island index, epoch), where the epoch increments at every
resampling, so the worker count never changes the output.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from . import pf
from .calibration import calibrate
from .errors import ConfigurationError, DegenerateWeightsError, FatalDegeneracyError
from .kernels import (Island, ThetaUpdate, fresh_pf, particle_gibbs, pmmh_step,
                      proposal_covariance)
from .rng import (MASTER_STREAM, SliceJournal, SliceRecord, StepTag, record_slice,
                  snapshot, spawn_stream)

TRACE_SCHEMA = "smc2nx-trace/1"
TRACE_COLUMNS = ("t", "ess", "n_x", "resampled", "pg_applied", "pmmh_attempts",
                 "pmmh_accepts", "sigma2_hat", "log_evidence", "elapsed_s")
# appended after the stable columns
TRACE_EXTRA_COLUMNS = ("work_units", "ess_post_move", "exchanged", "backfit_iters")


def logsumexp(a) -> float:
    # scipy's version carries array-API overhead that dominates on tiny inputs
    a = np.asarray(a, dtype=float)
    m = a.max()
    if not np.isfinite(m):
        return float(m) if m > 0 else -np.inf
    return float(m + np.log(np.exp(a - m).sum()))


class Variant(str, Enum):
    A = "a"
    B = "b"
    C = "c"
    D = "d"


@dataclass
class Smc2Config:
    n_theta: int = 500
    n_x_init: int = 100
    ess_min_frac: float = 0.5
    variant: Variant = Variant.C
    tau: float = 1.0
    pmmh_steps_after_pg: int = 3
    pmmh_accept_threshold: float = 0.20
    proposal_scale: float | None = None  # None -> 2.38^2 / d
    seed: int = 0
    n_x_min: int = 2
    n_x_max: int = 10_000
    pmmh_passes: int = 1
    gibbs_sweeps: int = 1
    nx_rule: str = "scaled"
    gam_df: float = 6.0
    workers: int = 1
    clock: str = "work"
    seconds_per_particle: float = 1e-6

    def __post_init__(self):
        self.variant = Variant(str(self.variant).lower()) if not isinstance(
            self.variant, Variant) else self.variant
        if self.n_theta < 1 or self.n_x_init < 1:
            raise ConfigurationError("n_theta and n_x_init must be positive")
        if not 0.0 <= self.ess_min_frac <= 1.0:
            raise ConfigurationError("ess_min_frac must lie in [0, 1]")
        if not 2 <= self.n_x_min <= self.n_x_max:
            raise ConfigurationError("need 2 <= n_x_min <= n_x_max")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if self.nx_rule not in ("scaled", "literal"):
            raise ConfigurationError("nx_rule must be 'scaled' or 'literal'")
        if self.clock not in ("work", "wall"):
            raise ConfigurationError("clock must be 'work' or 'wall'")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class TraceRow:
    t: int
    ess: float
    n_x: int
    resampled: int
    pg_applied: int
    pmmh_attempts: int
    pmmh_accepts: int
    sigma2_hat: float
    log_evidence: float
    elapsed_s: float
    work_units: int
    ess_post_move: float
    exchanged: int
    backfit_iters: int


@dataclass
class Smc2State:
    islands: list
    n_x: int
    t: int = -1
    log_evidence: float = 0.0
    epoch: int = 0
    work: int = 0
    wall: float = 0.0
    trace: list = field(default_factory=list)

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([isl.log_weight for isl in self.islands])

    @property
    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights
        return np.exp(lw - logsumexp(lw))

    @property
    def thetas(self) -> np.ndarray:
        return np.array([isl.theta for isl in self.islands])

    def ess(self) -> float:
        return pf.ess_log(self.log_weights)

    def posterior_mean(self) -> np.ndarray:
        return self.normalized_weights @ self.thetas

    def footprint_bytes(self) -> int:
        return sum(isl.footprint_bytes() for isl in self.islands)


class _Runner:
    """Maps a function over islands, optionally on a thread pool."""

    def __init__(self, workers: int):
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def smc2_init(config: Smc2Config, model) -> Smc2State:
    """Prior draws for every island, log-weights 0, empty journals."""
    islands = []
    for m in range(config.n_theta):
        gen = spawn_stream(config.seed, m, 0)
        islands.append(Island(model.sample_prior(gen), 0.0, None, SliceJournal(), gen))
    return Smc2State(islands, config.n_x_init)


def evidence_update(log_weights_pre, increments) -> float:
    """log sum_m W^m_pre * lhat^m_t, with W_pre the normalized pre-update weights."""
    lw = np.asarray(log_weights_pre, dtype=float)
    inc = np.asarray(increments, dtype=float)
    logW = lw - logsumexp(lw)
    return float(logsumexp(logW + inc))


def _extend(island: Island, model, data, t: int, n_x: int) -> float:
    if not island.alive:
        return -np.inf
    snap = snapshot(island.rng)
    try:
        if t == 0:
            fr = pf.pf_init(model, island.theta, n_x, data[0], island.rng)
            tag = StepTag.InitPF
        else:
            fr = pf.pf_step(model, island.theta, island.frontier, data[t], island.rng)
            tag = StepTag.ExtendPF
    except DegenerateWeightsError:
        island.kill()
        return -np.inf
    record_slice(island.journal, SliceRecord(snap, tag, fr.n_x, t))
    island.frontier = fr
    island.work += fr.n_x
    return fr.log_increment


def exchange_step(island: Island, model, data, n_x_new: int, rng=None) -> Island:
    """Replace the island's particle system by a fresh one of size ``n_x_new``,
    correcting the log-weight by the ratio of likelihood estimates."""
    rng = island.rng if rng is None else rng
    t = island.frontier.t
    old = island.frontier.cum_loglik
    island.work += (t + 1) * n_x_new
    try:
        fr, journal = fresh_pf(model, island.theta, n_x_new, data[:t + 1], rng)
    except DegenerateWeightsError:
        island.kill()
        return island
    island.log_weight += fr.cum_loglik - old
    island.frontier, island.journal = fr, journal
    return island


def smc2_step(state: Smc2State, config: Smc2Config, model, data, runner=None) -> Smc2State:
    """Advance every island to the next time index, reweight, and
    resample-move when the ESS falls to ``ess_min_frac * n_theta``."""
    own = runner is None
    runner = _Runner(config.workers) if own else runner
    try:
        return _step(state, config, model, np.asarray(data, dtype=float), runner)
    finally:
        if own:
            runner.close()


def _step(state, config, model, data, runner):
    t0 = time.perf_counter()
    t = state.t + 1
    if t >= len(data):
        raise ValueError(f"no observation at t={t}")
    lw_pre = state.log_weights
    incs = np.array(runner.map(lambda isl: _extend(isl, model, data, t, state.n_x),
                               state.islands))
    for isl, inc in zip(state.islands, incs):
        if isl.alive:
            isl.log_weight += inc
    state.t = t
    lw = state.log_weights
    if not np.any(np.isfinite(lw)):
        raise FatalDegeneracyError(f"all islands degenerate at t={t}", state)
    state.log_evidence += evidence_update(lw_pre, incs)
    ess = pf.ess_log(lw)
    info = {"resampled": 0, "pg_applied": 0, "pmmh_attempts": 0, "pmmh_accepts": 0,
            "sigma2_hat": math.nan, "ess_post_move": math.nan, "exchanged": 0,
            "backfit_iters": 0}
    if ess <= config.ess_min_frac * config.n_theta:
        info.update(resample_move(state, config, model, data, runner))
    for isl in state.islands:
        state.work += isl.work
        isl.work = 0
    state.wall += time.perf_counter() - t0
    elapsed = state.wall if config.clock == "wall" else state.work * config.seconds_per_particle
    state.trace.append(TraceRow(t=t, ess=ess, n_x=state.n_x,
                                log_evidence=state.log_evidence, elapsed_s=elapsed,
                                work_units=state.work, **info))
    return state


def _resample(state: Smc2State, config: Smc2Config):
    state.epoch += 1
    master = spawn_stream(config.seed, MASTER_STREAM, state.epoch)
    idx = pf.multinomial_resample(state.normalized_weights, config.n_theta, master)
    new = []
    for m, k in enumerate(idx):
        src = state.islands[k]
        new.append(Island(src.theta.copy(), 0.0, src.frontier, src.journal.copy(),
                          spawn_stream(config.seed, m, state.epoch)))
    # work done before resampling belongs to the pre-resampling islands
    state.work += sum(isl.work for isl in state.islands)
    state.islands = new


def _pmmh_pass(state, config, model, data, runner, cov, n_x):
    acc = runner.map(lambda isl: pmmh_step(isl, cov, model, data, n_x)[1], state.islands)
    return len(acc), int(sum(acc))


def _calibrate(state, config):
    alive = [isl for isl in state.islands if isl.alive]
    thetas = np.array([isl.theta for isl in alive])
    resp = np.array([isl.frontier.cum_loglik for isl in alive])
    return calibrate(thetas, resp, config.tau, config.n_x_min, config.n_x_max,
                     n_x=state.n_x, rule=config.nx_rule, df=config.gam_df)


def resample_move(state: Smc2State, config: Smc2Config, model, data, runner=None) -> dict:
    """Resample islands, reset weights, then apply the variant's move.

    Returns the diagnostics recorded in the trace.
    """
    own = runner is None
    runner = _Runner(config.workers) if own else runner
    try:
        return _resample_move(state, config, model, np.asarray(data, dtype=float), runner)
    finally:
        if own:
            runner.close()


def _resample_move(state, config, model, data, runner):
    _resample(state, config)
    v = config.variant
    thetas = state.thetas
    scale = config.proposal_scale or 2.38 ** 2 / thetas.shape[1]
    info = {"resampled": 1}
    att = acc = 0

    def pmmh_passes(n_passes, n_x):
        nonlocal att, acc
        cov = proposal_covariance(thetas, scale)
        for _ in range(n_passes):
            a, c = _pmmh_pass(state, config, model, data, runner, cov, n_x)
            att, acc = att + a, acc + c

    if v is Variant.A:
        pmmh_passes(config.pmmh_passes, state.n_x)
        if acc < config.pmmh_accept_threshold * att:
            n_new = min(2 * state.n_x, config.n_x_max)
            if n_new > state.n_x:
                runner.map(lambda isl: exchange_step(isl, model, data, n_new), state.islands)
                state.n_x = n_new
                info["exchanged"] = 1
    elif v is Variant.B:
        pmmh_passes(config.pmmh_passes, state.n_x)
        cal = _calibrate(state, config)
        runner.map(lambda isl: exchange_step(isl, model, data, cal.n_x_new), state.islands)
        state.n_x = cal.n_x_new
        info.update(exchanged=1, sigma2_hat=cal.sigma2_hat, backfit_iters=cal.iterations)
    else:
        cal = _calibrate(state, config)
        update = ThetaUpdate.Full if v is Variant.C else ThetaUpdate.Partial
        n_new = cal.n_x_new
        runner.map(lambda isl: particle_gibbs(isl, model, data, update, n_new,
                                              gibbs_sweeps=config.gibbs_sweeps),
                   state.islands)
        state.n_x = n_new
        info.update(pg_applied=1, sigma2_hat=cal.sigma2_hat, backfit_iters=cal.iterations)
        if v is Variant.D:
            pmmh_passes(config.pmmh_steps_after_pg, state.n_x)
    lw = state.log_weights
    if not np.any(np.isfinite(lw)):
        raise FatalDegeneracyError(f"all islands degenerate after move at t={state.t}", state)
    info.update(pmmh_attempts=att, pmmh_accepts=acc, ess_post_move=pf.ess_log(lw))
    return info


def run(config: Smc2Config, model, data) -> Smc2State:
    """Full pass over ``data``.  On fatal degeneracy the raised error carries
    the partial state (and its trace)."""
    data = np.asarray(data, dtype=float)
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if config.variant is Variant.C and not model.gibbs_capable:
        raise ConfigurationError(f"variant c needs a theta | x sampler; {model.name} has none")
    state = smc2_init(config, model)
    runner = _Runner(config.workers)
    try:
        for _ in range(len(data)):
            _step(state, config, model, data, runner)
    finally:
        runner.close()
    return state


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_columns() -> tuple:
    return TRACE_COLUMNS + TRACE_EXTRA_COLUMNS


def write_trace_csv(trace, path) -> None:
    cols = trace_columns()
    assert set(cols) == {f.name for f in fields(TraceRow)}
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {TRACE_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in trace:
            w.writerow([_fmt(getattr(row, c)) for c in cols])
