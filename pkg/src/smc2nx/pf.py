"""Bootstrap-style particle filter with multinomial resampling at every step.

Every quantity is kept on the log scale.  A *slice* is the block of random
variables generated jointly at one time index: the ancestors ``a_t`` and the
states ``x_t`` (only ``x_0`` at time 0).  Slices consume the generator in a
frozen order -- all ancestor uniforms first, then all state proposals -- so
that a slice can be regenerated bit-for-bit from a generator snapshot.

Conditional SMC (one pinned trajectory at index 0) reuses the same slice
functions through the ``pinned`` argument; free particles then draw ancestors
for indices ``1..n-1`` followed by their states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError


@dataclass
class PFFrontier:
    """Current-time state of a particle filter."""

    x: np.ndarray
    logw: np.ndarray
    W: np.ndarray
    log_increment: float
    cum_loglik: float
    t: int

    @property
    def n_x(self) -> int:
        return len(self.W)

    def copy(self) -> "PFFrontier":
        return PFFrontier(self.x.copy(), self.logw.copy(), self.W.copy(),
                          self.log_increment, self.cum_loglik, self.t)

    def nbytes(self) -> int:
        return self.x.nbytes + self.logw.nbytes + self.W.nbytes + 3 * 8


@dataclass
class ParticleHistory:
    """Full particle system up to time t.

    ``ancestors[s, n]`` is the (0-based) index at time s-1 of the parent of
    particle n at time s; row 0 is filled with -1.
    """

    x: np.ndarray
    ancestors: np.ndarray
    logw: np.ndarray
    W: np.ndarray
    log_increments: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def t(self) -> int:
        return len(self.x) - 1

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    def nbytes(self) -> int:
        return self.x.nbytes + self.ancestors.nbytes + self.logw.nbytes + self.W.nbytes


def ess(weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2 of nonnegative weights."""
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if not s > 0.0:
        raise DegenerateWeightsError("all weights are zero")
    w = w / w.max()
    return float(w.sum() ** 2 / np.dot(w, w))


def ess_log(logw) -> float:
    """ESS computed from log-weights (max-subtracted before exponentiation)."""
    logw = np.asarray(logw, dtype=float)
    m = logw.max()
    if m == -np.inf:
        raise DegenerateWeightsError("all log-weights are -inf")
    return ess(np.exp(logw - m))


def normalize_log_weights(logw, theta=None, t=None):
    """Return normalized weights and log of the mean unnormalized weight."""
    m = np.max(logw)
    if not np.isfinite(m):
        raise DegenerateWeightsError(
            f"degenerate particle weights at t={t}", theta=theta, t=t)
    e = np.exp(logw - m)
    s = e.sum()
    W = e / s
    return W, float(m + np.log(s) - np.log(len(logw)))


def multinomial_resample(W, n_draws: int, rng) -> np.ndarray:
    """I.i.d. categorical draws from the simplex vector W by inversion.

    Consumes exactly ``n_draws`` uniforms from ``rng``.
    """
    c = np.cumsum(W)
    u = rng.random(n_draws) * c[-1]
    idx = np.searchsorted(c, u, side="right")
    return np.minimum(idx, len(c) - 1)


def _log_weights0(model, theta, x, y):
    if model.bootstrap:
        return model.log_obs(theta, y, x)
    return (model.log_initial(theta, x) + model.log_obs(theta, y, x)
            - model.log_proposal0(theta, x))


def _log_weights(model, theta, x_prev, x, y):
    if model.bootstrap:
        return model.log_obs(theta, y, x)
    return (model.log_transition(theta, x_prev, x) + model.log_obs(theta, y, x)
            - model.log_proposal(theta, x_prev, x))


def init_slice(model, theta, n: int, y, rng, pinned=None):
    """Generate time-0 particles; returns (x0, logw0)."""
    if pinned is None:
        x = model.sample_initial(theta, n, rng)
    else:
        free = model.sample_initial(theta, n - 1, rng)
        x = np.concatenate([np.asarray(pinned, dtype=free.dtype)[None], free])
    return x, _log_weights0(model, theta, x, y)


def step_slice(model, theta, x_prev, W_prev, y, rng, pinned=None):
    """Generate one time slice; returns (ancestors, x, logw)."""
    n = len(W_prev)
    if pinned is None:
        a = multinomial_resample(W_prev, n, rng)
        xp = x_prev[a]
        x = model.sample_transition(theta, xp, rng)
    else:
        a = np.empty(n, dtype=np.intp)
        a[0] = 0
        a[1:] = multinomial_resample(W_prev, n - 1, rng)
        xp = x_prev[a]
        free = model.sample_transition(theta, xp[1:], rng)
        x = np.concatenate([np.asarray(pinned, dtype=free.dtype)[None], free])
    return a, x, _log_weights(model, theta, xp, x, y)


def pf_init(model, theta, n_x: int, y0, rng, pinned=None) -> PFFrontier:
    if n_x < 1:
        raise ValueError("n_x must be >= 1")
    x, logw = init_slice(model, theta, n_x, y0, rng, pinned)
    W, log_inc = normalize_log_weights(logw, theta, 0)
    return PFFrontier(x, logw, W, log_inc, log_inc, 0)


def pf_step(model, theta, frontier: PFFrontier, y, rng, pinned=None) -> PFFrontier:
    t = frontier.t + 1
    _, x, logw = step_slice(model, theta, frontier.x, frontier.W, y, rng, pinned)
    W, log_inc = normalize_log_weights(logw, theta, t)
    return PFFrontier(x, logw, W, log_inc, frontier.cum_loglik + log_inc, t)


def run_pass(model, theta, n_x: int, ys, rng, pinned=None, collect: bool = False):
    """Run a particle filter (or conditional SMC if ``pinned`` is given)
    over all of ``ys``.

    Returns the final frontier, plus a :class:`ParticleHistory` when
    ``collect`` is true.
    """
    ys = np.asarray(ys)
    pin = (lambda s: None) if pinned is None else (lambda s: pinned[s])
    fr = pf_init(model, theta, n_x, ys[0], rng, pin(0))
    if not collect:
        for s in range(1, len(ys)):
            fr = pf_step(model, theta, fr, ys[s], rng, pin(s))
        return fr
    hist = _HistoryBuilder()
    hist.add(None, fr)
    fr = _continue_collect(model, theta, fr, ys, 1, rng, hist, pin)
    return fr, hist.build()


def _continue_collect(model, theta, fr, ys, start, rng, hist, pin):
    for s in range(start, len(ys)):
        fr, a = _step_collect(model, theta, fr, ys[s], rng, pin(s))
        hist.add(a, fr)
    return fr


def _step_collect(model, theta, frontier, y, rng, pinned=None):
    t = frontier.t + 1
    a, x, logw = step_slice(model, theta, frontier.x, frontier.W, y, rng, pinned)
    W, log_inc = normalize_log_weights(logw, theta, t)
    return PFFrontier(x, logw, W, log_inc, frontier.cum_loglik + log_inc, t), a


class _HistoryBuilder:
    def __init__(self):
        self.xs, self.anc, self.logw, self.W, self.inc = [], [], [], [], []

    def add(self, a, fr: PFFrontier):
        self.xs.append(fr.x)
        self.anc.append(np.full(fr.n_x, -1, dtype=np.intp) if a is None else a)
        self.logw.append(fr.logw)
        self.W.append(fr.W)
        self.inc.append(fr.log_increment)

    def build(self) -> ParticleHistory:
        return ParticleHistory(np.stack(self.xs), np.stack(self.anc),
                               np.stack(self.logw), np.stack(self.W),
                               np.asarray(self.inc))


def filtering_mean(frontier: PFFrontier) -> float:
    return float(np.dot(frontier.W, frontier.x))
