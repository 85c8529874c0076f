"""PMCMC moves on a single island: random-walk PMMH and particle Gibbs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import pf
from .errors import ConfigurationError, DegenerateWeightsError, ParameterError
from .rng import SliceJournal, SliceRecord, StepTag, rebuild_history, record_slice, snapshot


@dataclass
class Island:
    """One theta-particle with its particle filter, weight and replay journal.

    ``frontier`` is None before the first time step and for an island
    whose filter degenerated (``dead``; its log-weight is then -inf).
    ``work`` counts particle propagations performed on the island's behalf,
    replays included.
    """

    theta: np.ndarray
    log_weight: float
    frontier: pf.PFFrontier | None
    journal: SliceJournal
    rng: np.random.Generator
    work: int = 0
    dead: bool = False

    @property
    def alive(self) -> bool:
        return not self.dead

    def kill(self):
        self.frontier, self.log_weight, self.dead = None, -np.inf, True

    @property
    def n_x(self) -> int:
        return self.frontier.n_x

    def footprint_bytes(self) -> int:
        fr = 0 if self.frontier is None else self.frontier.nbytes()
        return self.theta.nbytes + 8 + fr + self.journal.nbytes()


class ThetaUpdate(str, Enum):
    Full = "full"
    Partial = "partial"


@dataclass
class ProposalCov:
    sigma: np.ndarray
    chol: np.ndarray


def proposal_covariance(thetas, scale: float) -> ProposalCov:
    """``scale`` times the sample covariance (ddof=1) of the theta rows."""
    X = np.atleast_2d(np.asarray(thetas, dtype=float))
    n, d = X.shape
    fallback = scale * 1e-4 * np.eye(d)
    if n < 2 or len(np.unique(X, axis=0)) < 2:
        return ProposalCov(fallback, np.linalg.cholesky(fallback))
    S = scale * np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    S = 0.5 * (S + S.T)
    try:
        return ProposalCov(S, np.linalg.cholesky(S))
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-9 * np.trace(S) / d
    if jitter > 0:
        for _ in range(10):
            Sj = S + jitter * np.eye(d)
            try:
                return ProposalCov(Sj, np.linalg.cholesky(Sj))
            except np.linalg.LinAlgError:
                jitter *= 2.0
    return ProposalCov(fallback, np.linalg.cholesky(fallback))


def fresh_pf(model, theta, n_x: int, ys, rng):
    """Whole particle filter pass over ``ys``, journalled as one FreshPF record."""
    snap = snapshot(rng)
    fr = pf.run_pass(model, theta, n_x, ys, rng)
    journal = record_slice(SliceJournal(), SliceRecord(snap, StepTag.FreshPF, n_x, len(ys) - 1))
    return fr, journal


def pmmh_step(island: Island, cov: ProposalCov, model, data, n_x_prop: int, rng=None):
    """One random-walk PMMH update; returns (island, accepted).

    Draw order: the d proposal normals, the proposal PF, one uniform.
    The island log-weight is never modified.
    """
    rng = island.rng if rng is None else rng
    t = island.frontier.t
    prop = island.theta + cov.chol @ rng.standard_normal(len(island.theta))
    if not model.in_support(prop):
        return island, False
    lp_prop = model.log_prior(prop)
    if lp_prop == -np.inf:
        return island, False
    island.work += (t + 1) * n_x_prop
    try:
        fr, journal = fresh_pf(model, prop, n_x_prop, data[:t + 1], rng)
    except DegenerateWeightsError:
        return island, False
    log_r = (lp_prop + fr.cum_loglik) - (model.log_prior(island.theta) + island.frontier.cum_loglik)
    u = rng.random()
    if u == 0.0 or math.log(u) < log_r:
        island.theta, island.frontier, island.journal = prop, fr, journal
        return island, True
    return island, False


def select_trajectory(history: pf.ParticleHistory, rng) -> np.ndarray:
    """Draw b_t ~ M(W_t) and follow ancestor links back to time 0."""
    t = history.t
    b = int(pf.multinomial_resample(history.W[t], 1, rng)[0])
    path = np.empty((t + 1,) + history.x.shape[2:], dtype=history.x.dtype)
    for s in range(t, -1, -1):
        path[s] = history.x[s, b]
        if s > 0:
            b = history.ancestors[s, b]
    return path


def csmc_regenerate(model, theta, pinned, n_x_new: int, ys, rng):
    """Conditional SMC pass of size ``n_x_new`` with particle 0 pinned.

    Returns (frontier, journal); the journal is a single CsmcRegen record
    that stores the pinned path.
    """
    if n_x_new < 2:
        raise ParameterError("conditional SMC needs n_x_new >= 2")
    pinned = np.asarray(pinned)
    if len(pinned) != len(ys):
        raise ParameterError("pinned path length must match the data length")
    snap = snapshot(rng)
    fr = pf.run_pass(model, theta, n_x_new, ys, rng, pinned=pinned)
    journal = record_slice(SliceJournal(),
                           SliceRecord(snap, StepTag.CsmcRegen, n_x_new, len(ys) - 1),
                           pinned=pinned)
    return fr, journal


def particle_gibbs(island: Island, model, data, theta_update, n_x_new: int,
                   rng=None, gibbs_sweeps: int = 1) -> Island:
    """Rebuild history, select a trajectory, update theta (full) or keep it
    (partial), and regenerate a size-``n_x_new`` system by conditional SMC.
    """
    theta_update = ThetaUpdate(theta_update)
    if theta_update is ThetaUpdate.Full and not model.gibbs_capable:
        raise ConfigurationError(f"full particle Gibbs needs a theta | x sampler; "
                                 f"{model.name} has none")
    rng = island.rng if rng is None else rng
    t = island.frontier.t
    ys = data[:t + 1]
    hist = rebuild_history(island.journal, model, island.theta, ys)
    island.work += (t + 1) * hist.n_x
    path = select_trajectory(hist, rng)
    theta = island.theta
    if theta_update is ThetaUpdate.Full:
        theta = model.gibbs_theta(path, ys, theta, rng, sweeps=gibbs_sweeps)
    island.frontier, island.journal = csmc_regenerate(model, theta, path, n_x_new, ys, rng)
    island.theta = theta
    island.work += (t + 1) * n_x_new
    return island
