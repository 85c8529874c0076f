"""State-space models: stochastic volatility and a linear-Gaussian oracle model.

Parameters are passed around as 1-d float arrays.  States are scalar for both
built-in models; particle arrays have shape ``(n,)``.

Conventions worth knowing:

* ``InverseGamma(a, b)`` is shape/scale, density ``∝ x^{-a-1} exp(-b/x)``,
  so the SV prior ``IG(3, 0.5)`` has mean ``0.5 / 2 = 0.25``.
* The SV parameter vector is ``(mu, rho, sigma2)``: the random walk and the
  Gibbs sweep both act on the variance, which is the coordinate carrying the
  prior.  ``sigma = sqrt(sigma2)`` is reported where a standard deviation is
  wanted.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special, stats

from .errors import ParameterError, UnsupportedModelError

LOG_2PI = math.log(2.0 * math.pi)
# mass of N(0, 1) on [-1, 1]
_TN_MASS = special.ndtr(1.0) - special.ndtr(-1.0)


def _norm_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


class StateSpaceModel:
    """Base class.  Subclasses provide prior, dynamics and observation laws.

    The default proposal is the bootstrap one: ``q_0 = mu_theta`` and
    ``q_t = f^X``, in which case particle weights reduce to ``f^Y``.
    """

    name = "ssm"
    param_names: tuple = ()
    bootstrap = True
    gibbs_capable = False

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def in_support(self, theta) -> bool:
        raise NotImplementedError

    def log_prior(self, theta) -> float:
        raise NotImplementedError

    def sample_prior(self, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_initial(self, theta, n, rng):
        raise NotImplementedError

    def sample_transition(self, theta, x_prev, rng):
        raise NotImplementedError

    def sample_obs(self, theta, x, rng):
        raise NotImplementedError

    def log_initial(self, theta, x):
        raise NotImplementedError

    def log_transition(self, theta, x_prev, x):
        raise NotImplementedError

    def log_obs(self, theta, y, x):
        raise NotImplementedError

    # bootstrap proposal
    def log_proposal0(self, theta, x):
        return self.log_initial(theta, x)

    def log_proposal(self, theta, x_prev, x):
        return self.log_transition(theta, x_prev, x)

    def exact_loglik(self, theta, data) -> float:
        raise UnsupportedModelError(f"{self.name} has no exact likelihood")

    def gibbs_theta(self, x_path, data, theta, rng, sweeps=1):
        raise UnsupportedModelError(f"{self.name} provides no theta | x update")

    def log_joint_path(self, theta, x_path, data) -> float:
        """log p(x_{0:t}, y_{0:t} | theta) for a single trajectory."""
        x = np.asarray(x_path, dtype=float)
        y = np.asarray(data, dtype=float)
        out = self.log_initial(theta, x[:1])[0]
        if len(x) > 1:
            out += np.sum(self.log_transition(theta, x[:-1], x[1:]))
        return float(out + np.sum(self.log_obs(theta, y, x)))


def simulate(model: StateSpaceModel, theta, T: int, rng):
    """Draw a state path x_{0:T} and observations y_{0:T} from the model."""
    if T < 0:
        raise ParameterError("T must be >= 0")
    theta = np.asarray(theta, dtype=float)
    if not model.in_support(theta):
        raise ParameterError(f"theta {theta} outside the support of {model.name}")
    x = np.empty(T + 1)
    x[0] = model.sample_initial(theta, 1, rng)[0]
    for t in range(1, T + 1):
        x[t] = model.sample_transition(theta, x[t - 1:t], rng)[0]
    y = model.sample_obs(theta, x, rng)
    return x, y


# --------------------------------------------------------------------------
# conditional samplers shared by the Gibbs updates


def _truncnorm(mean, sd, rng, lo=-1.0, hi=1.0):
    """N(mean, sd^2) restricted to [lo, hi]; rejection unless mass < 1%."""
    a, b = (lo - mean) / sd, (hi - mean) / sd
    mass = special.ndtr(b) - special.ndtr(a)
    if mass >= 0.01:
        while True:
            z = rng.standard_normal()
            if a <= z <= b:
                return mean + sd * z
    return float(stats.truncnorm.ppf(rng.random(), a, b, loc=mean, scale=sd))


def _stationary_factor_log(rho, c):
    # log of sqrt(1 - rho^2) exp(-c (1 - rho^2)); the x_0 term of an AR(1)
    # started at stationarity, as a function of rho
    u = 1.0 - rho * rho
    with np.errstate(divide="ignore"):
        return 0.5 * np.log(u) - c * u


def _sample_ar_coefficient(prec, mean, c, rng, uniform_base=False):
    """Draw rho in [-1, 1] with density ∝ base(rho) * sqrt(1-rho^2) exp(-c(1-rho^2)).

    ``base`` is N(mean, 1/prec) truncated to [-1, 1], or uniform when
    ``uniform_base``.  Exact rejection sampling against the bounded
    stationary factor, with a grid inverse-cdf fallback when acceptance
    is below 1%.
    """
    c = max(c, 0.0)
    if c <= 0.5:
        log_gmax = -c
    else:
        log_gmax = 0.5 * math.log(0.5 / c) - 0.5
    sd = None if uniform_base else 1.0 / math.sqrt(prec)
    for _ in range(100):
        rho = -1.0 + 2.0 * rng.random() if uniform_base else _truncnorm(mean, sd, rng)
        if math.log(rng.random()) < _stationary_factor_log(rho, c) - log_gmax:
            return float(rho)
    grid = np.linspace(-1.0, 1.0, 20001)
    logd = _stationary_factor_log(grid, c)
    if not uniform_base:
        logd = logd - 0.5 * prec * (grid - mean) ** 2
    d = np.exp(logd - np.max(logd))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]))])
    cdf /= cdf[-1]
    return float(np.interp(rng.random(), cdf, grid))


# --------------------------------------------------------------------------


class StochasticVolatility(StateSpaceModel):
    """x_0 ~ N(mu, s2/(1-rho^2)), x_t - mu = rho (x_{t-1} - mu) + sqrt(s2) eps_t,
    y_t | x_t ~ N(0, exp(x_t)).

    Priors: mu ~ N(0, 2^2), rho ~ N(0, 1) truncated to [-1, 1],
    sigma2 ~ IG(3, 0.5).
    """

    name = "sv"
    param_names = ("mu", "rho", "sigma2")
    gibbs_capable = True

    def __init__(self, mu_prior_sd=2.0, ig_shape=3.0, ig_scale=0.5):
        self.mu_prior_sd = mu_prior_sd
        self.ig_shape = ig_shape
        self.ig_scale = ig_scale

    def in_support(self, theta) -> bool:
        mu, rho, s2 = theta
        return bool(np.isfinite(mu) and -1.0 <= rho <= 1.0 and s2 > 0.0 and np.isfinite(s2))

    def log_prior(self, theta) -> float:
        if not self.in_support(theta):
            return -np.inf
        mu, rho, s2 = theta
        a, b = self.ig_shape, self.ig_scale
        lp_mu = _norm_logpdf(mu, 0.0, self.mu_prior_sd ** 2)
        lp_rho = -0.5 * (LOG_2PI + rho * rho) - math.log(_TN_MASS)
        lp_s2 = a * math.log(b) - special.gammaln(a) - (a + 1.0) * math.log(s2) - b / s2
        return float(lp_mu + lp_rho + lp_s2)

    def sample_prior(self, rng) -> np.ndarray:
        mu = self.mu_prior_sd * rng.standard_normal()
        while True:
            rho = rng.standard_normal()
            if -1.0 <= rho <= 1.0:
                break
        s2 = self.ig_scale / rng.gamma(self.ig_shape)
        return np.array([mu, rho, s2])

    @staticmethod
    def _stationary_var(theta):
        _, rho, s2 = theta
        u = 1.0 - rho * rho
        return s2 / u if u > 0.0 else np.inf

    def sample_initial(self, theta, n, rng):
        return theta[0] + math.sqrt(self._stationary_var(theta)) * rng.standard_normal(n)

    def sample_transition(self, theta, x_prev, rng):
        mu, rho, s2 = theta
        return mu + rho * (x_prev - mu) + math.sqrt(s2) * rng.standard_normal(len(x_prev))

    def sample_obs(self, theta, x, rng):
        return np.exp(0.5 * np.asarray(x)) * rng.standard_normal(len(x))

    def log_initial(self, theta, x):
        v = self._stationary_var(theta)
        if not np.isfinite(v):
            return np.full(np.shape(x), -np.inf)
        return _norm_logpdf(x, theta[0], v)

    def log_transition(self, theta, x_prev, x):
        mu, rho, s2 = theta
        return _norm_logpdf(x, mu + rho * (x_prev - mu), s2)

    def log_obs(self, theta, y, x):
        return -0.5 * (LOG_2PI + x + y * y * np.exp(-x))

    # --- full conditionals of theta given a state path

    def sample_mu(self, x, theta, rng):
        _, rho, s2 = theta
        t = len(x) - 1
        prec = 1.0 / self.mu_prior_sd ** 2 + (1.0 - rho * rho) / s2
        num = (1.0 - rho * rho) * x[0] / s2
        if t > 0:
            z = x[1:] - rho * x[:-1]
            prec += t * (1.0 - rho) ** 2 / s2
            num += (1.0 - rho) * z.sum() / s2
        return num / prec + rng.standard_normal() / math.sqrt(prec)

    def sample_rho(self, x, theta, rng):
        mu, _, s2 = theta
        u = x - mu
        prec = 1.0 + np.dot(u[:-1], u[:-1]) / s2
        mean = (np.dot(u[1:], u[:-1]) / s2) / prec
        return _sample_ar_coefficient(prec, mean, u[0] ** 2 / (2.0 * s2), rng)

    def sample_sigma2(self, x, theta, rng):
        mu, rho, _ = theta
        u = x - mu
        e = u[1:] - rho * u[:-1]
        shape = self.ig_shape + 0.5 * len(x)
        scale = self.ig_scale + 0.5 * (np.dot(e, e) + (1.0 - rho * rho) * u[0] ** 2)
        return scale / rng.gamma(shape)

    def gibbs_theta(self, x_path, data, theta, rng, sweeps=1):
        """Gibbs sweep(s) over mu, rho, sigma2 given the state path.

        ``data`` is unused: y is conditionally independent of theta given x.
        """
        x = np.asarray(x_path, dtype=float)
        th = np.array(theta, dtype=float)
        for _ in range(sweeps):
            th[0] = self.sample_mu(x, th, rng)
            th[1] = self.sample_rho(x, th, rng)
            th[2] = self.sample_sigma2(x, th, rng)
        return th


def sv_spec(**kwargs) -> StochasticVolatility:
    return StochasticVolatility(**kwargs)


class LinearGaussian(StateSpaceModel):
    """x_0 ~ N(0, sx^2/(1-rho^2)), x_t = rho x_{t-1} + sx eps_t, y_t = x_t + sy eta_t.

    The inferred parameter is ``rho`` alone, with a uniform prior on (-1, 1);
    ``sx`` and ``sy`` are fixed at construction.
    """

    name = "lgssm"
    param_names = ("rho",)
    gibbs_capable = True

    def __init__(self, rho: float, sigma_x: float, sigma_y: float):
        if not abs(rho) < 1.0:
            raise ParameterError(f"|rho| must be < 1, got {rho}")
        if sigma_x <= 0 or sigma_y <= 0:
            raise ParameterError("sigma_x and sigma_y must be positive")
        self.rho = float(rho)
        self.sigma_x = float(sigma_x)
        self.sigma_y = float(sigma_y)

    @property
    def theta0(self) -> np.ndarray:
        return np.array([self.rho])

    def in_support(self, theta) -> bool:
        return bool(-1.0 < theta[0] < 1.0)

    def log_prior(self, theta) -> float:
        return -math.log(2.0) if self.in_support(theta) else -np.inf

    def sample_prior(self, rng) -> np.ndarray:
        return np.array([-1.0 + 2.0 * rng.random()])

    def sample_initial(self, theta, n, rng):
        sd = self.sigma_x / math.sqrt(1.0 - theta[0] ** 2)
        return sd * rng.standard_normal(n)

    def sample_transition(self, theta, x_prev, rng):
        return theta[0] * x_prev + self.sigma_x * rng.standard_normal(len(x_prev))

    def sample_obs(self, theta, x, rng):
        return np.asarray(x) + self.sigma_y * rng.standard_normal(len(x))

    def log_initial(self, theta, x):
        return _norm_logpdf(x, 0.0, self.sigma_x ** 2 / (1.0 - theta[0] ** 2))

    def log_transition(self, theta, x_prev, x):
        return _norm_logpdf(x, theta[0] * x_prev, self.sigma_x ** 2)

    def log_obs(self, theta, y, x):
        return _norm_logpdf(y, x, self.sigma_y ** 2)

    def exact_loglik(self, theta, data) -> float:
        return kalman_loglik(self, data, theta)

    def gibbs_theta(self, x_path, data, theta, rng, sweeps=1):
        x = np.asarray(x_path, dtype=float)
        s2 = self.sigma_x ** 2
        c = x[0] ** 2 / (2.0 * s2)
        prec = np.dot(x[:-1], x[:-1]) / s2
        rho = theta[0]
        for _ in range(sweeps):
            if prec > 0.0:
                mean = (np.dot(x[1:], x[:-1]) / s2) / prec
                rho = _sample_ar_coefficient(prec, mean, c, rng)
            else:
                rho = _sample_ar_coefficient(0.0, 0.0, c, rng, uniform_base=True)
        # the uniform prior excludes the (null) boundary
        rho = float(np.clip(rho, np.nextafter(-1.0, 0.0), np.nextafter(1.0, 0.0)))
        return np.array([rho])


def lgssm_spec(rho: float, sigma_x: float, sigma_y: float) -> LinearGaussian:
    return LinearGaussian(rho, sigma_x, sigma_y)


def kalman_filter(model, data, theta=None):
    """Forward recursion for the scalar LGSSM.

    Returns (log_increments, filtered_means, filtered_vars).
    """
    if not isinstance(model, LinearGaussian):
        raise UnsupportedModelError("Kalman recursion requires a linear-Gaussian model")
    rho = model.rho if theta is None else float(np.asarray(theta).ravel()[0])
    sx2, sy2 = model.sigma_x ** 2, model.sigma_y ** 2
    y = np.atleast_1d(np.asarray(data, dtype=float))
    m_pred, p_pred = 0.0, sx2 / (1.0 - rho * rho)
    incs = np.empty(len(y))
    means = np.empty(len(y))
    vars_ = np.empty(len(y))
    for t, yt in enumerate(y):
        if t > 0:
            m_pred = rho * means[t - 1]
            p_pred = rho * rho * vars_[t - 1] + sx2
        s = p_pred + sy2
        incs[t] = -0.5 * (LOG_2PI + math.log(s) + (yt - m_pred) ** 2 / s)
        k = p_pred / s
        means[t] = m_pred + k * (yt - m_pred)
        vars_[t] = (1.0 - k) * p_pred
    return incs, means, vars_


def kalman_loglik(model, data, theta=None) -> float:
    """Exact log p(y_{0:T}) for the linear-Gaussian model."""
    return float(np.sum(kalman_filter(model, data, theta)[0]))
