"""Choosing N_x from the spread of log-likelihood estimates across islands.

The log-likelihood estimates ``R^m`` of the resampled islands vary for two
reasons: the true likelihood changes with theta, and each estimate carries
Monte Carlo noise.  An additive model on the principal components of theta
absorbs the first part; the variance of its residuals estimates the second.
Everything here is deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import brentq

log = logging.getLogger(__name__)


@dataclass
class PcaBasis:
    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray  # columns are the principal directions
    explained_variance: np.ndarray

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        tot = self.explained_variance.sum()
        return self.explained_variance / tot if tot > 0 else np.zeros_like(self.explained_variance)

    def transform(self, thetas) -> np.ndarray:
        Z = (np.atleast_2d(thetas) - self.mean) / self.scale
        return Z @ self.components


def principal_components(thetas):
    """PCA on column-standardized theta rows; returns (basis, covariates)."""
    X = np.atleast_2d(np.asarray(thetas, dtype=float))
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1) if len(X) > 1 else np.ones(X.shape[1])
    # constant columns: std can be rounding noise around the mean
    const = scale <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    scale = np.where(const, 1.0, scale)
    Z = np.where(const, 0.0, (X - mean) / scale)
    C = Z.T @ Z / max(len(X) - 1, 1)
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # sign convention: largest-magnitude loading positive
    flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * np.where(flip == 0, 1.0, flip)
    basis = PcaBasis(mean, scale, evecs, evals)
    return basis, Z @ evecs


# --------------------------------------------------------------------------
# penalized cubic regression spline with a target equivalent df


class SplineSmoother:
    """Cubic B-spline smoother on fixed covariate values with an integrated
    squared second-derivative penalty, tuned so that the trace of the
    smoother matrix equals ``df``.  Linear in the response, so the penalty
    search happens once per covariate.
    """

    def __init__(self, x, df: float = 6.0, n_knots: int = 20):
        x = np.asarray(x, dtype=float)
        self.lo, self.hi = float(x.min()), float(x.max())
        self.constant = not self.hi - self.lo > 1e-12 * max(1.0, abs(self.hi))
        if self.constant:
            self.df = 1.0
            return
        inner = np.unique(np.quantile(x, np.linspace(0, 1, n_knots)))
        self.knots = np.concatenate([[inner[0]] * 3, inner, [inner[-1]] * 3])
        self.B = self._basis(x)
        Omega = _second_derivative_penalty(self.knots)
        BtB = self.B.T @ self.B
        k = self.B.shape[1]
        eye = 1e-12 * np.eye(k)
        # cannot exceed the basis size or the number of distinct points
        df = max(min(df, k - 1e-3, len(np.unique(x)) - 1e-3), 2.0)

        def edf(log_lam):
            return np.trace(np.linalg.solve(BtB + math.exp(log_lam) * Omega + eye, BtB))

        ref = math.log(np.trace(BtB) / max(np.trace(Omega), 1e-300))
        lo, hi = ref - 30.0, ref + 30.0
        if edf(lo) <= df:
            log_lam = lo
        elif edf(hi) >= df:
            log_lam = hi
        else:
            log_lam = brentq(lambda v: edf(v) - df, lo, hi, xtol=1e-8)
        self.lam = math.exp(log_lam)
        self.df = edf(log_lam)
        self._solve = np.linalg.inv(BtB + self.lam * Omega + eye) @ self.B.T

    def _basis(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return BSpline.design_matrix(x, self.knots, 3, extrapolate=False).toarray()

    def fit(self, y) -> "FittedSpline":
        y = np.asarray(y, dtype=float)
        if self.constant:
            return FittedSpline(self, None, float(y.mean()), np.full(len(y), y.mean()))
        coef = self._solve @ y
        return FittedSpline(self, coef, None, self.B @ coef)


@dataclass
class FittedSpline:
    smoother: SplineSmoother
    coef: np.ndarray | None
    constant: float | None
    fitted: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.constant is not None:
            return np.full(x.shape, self.constant)
        sm = self.smoother
        out = sm._basis(x) @ self.coef
        # linear extrapolation outside the training range
        left, right = x < sm.lo, x > sm.hi
        if left.any() or right.any():
            spl = BSpline(sm.knots, self.coef, 3)
            d1 = spl.derivative()
            out[left] = spl(sm.lo) + d1(sm.lo) * (x[left] - sm.lo)
            out[right] = spl(sm.hi) + d1(sm.hi) * (x[right] - sm.hi)
        return out


def _second_derivative_penalty(knots):
    """Gram matrix of B-spline second derivatives, exact by Gauss-Legendre."""
    k = len(knots) - 4
    gx, gw = np.polynomial.legendre.leggauss(3)
    breaks = np.unique(knots)
    pts, wts = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        pts.append(0.5 * (b - a) * gx + 0.5 * (a + b))
        wts.append(0.5 * (b - a) * gw)
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    D = np.empty((len(pts), k))
    for j in range(k):
        c = np.zeros(k)
        c[j] = 1.0
        D[:, j] = BSpline(knots, c, 3).derivative(2)(pts)
    return (D * wts[:, None]).T @ D


# --------------------------------------------------------------------------


@dataclass
class GamFit:
    intercept: float
    smoothers: list
    residual_variance: float
    n_obs: int
    iterations: int = 0
    linear: bool = False
    coef: np.ndarray | None = None
    fitted: np.ndarray | None = None
    residuals: np.ndarray | None = None

    def predict(self, covariates) -> np.ndarray:
        C = np.atleast_2d(np.asarray(covariates, dtype=float))
        if self.linear:
            return self.intercept + C @ self.coef
        out = np.full(len(C), self.intercept)
        for j, (f, shift) in enumerate(self.smoothers):
            out += f(C[:, j]) - shift
        return out


def linear_fit(responses, covariates) -> GamFit:
    """OLS of responses on an intercept and the covariates."""
    R = np.asarray(responses, dtype=float)
    C = np.atleast_2d(np.asarray(covariates, dtype=float)).reshape(len(R), -1)
    X = np.column_stack([np.ones(len(R)), C])
    beta, *_ = np.linalg.lstsq(X, R, rcond=None)
    fitted = X @ beta
    resid = R - fitted
    var = float(np.var(resid, ddof=1)) if len(R) > 1 else 0.0
    return GamFit(float(beta[0]), [], var, len(R), 0, True, beta[1:], fitted, resid)


def backfit_gam(responses, covariates, df: float = 6.0, max_iter: int = 20,
                tol: float = 1e-6) -> GamFit:
    """Additive model R = a + sum_j f_j(C_j) + e fitted by cyclic backfitting.

    Falls back to :func:`linear_fit` when there are fewer than 10 rows
    per covariate.
    """
    R = np.asarray(responses, dtype=float)
    if not np.all(np.isfinite(R)):
        raise ValueError("responses must be finite")
    C = np.atleast_2d(np.asarray(covariates, dtype=float)).reshape(len(R), -1)
    n, d = C.shape
    if n < 10 * d:
        return linear_fit(R, C)
    alpha = R.mean()
    F = np.zeros((n, d))
    ops = [SplineSmoother(C[:, j], df=df) for j in range(d)]
    smoothers = [None] * d
    it = 0
    for it in range(1, max_iter + 1):
        change = 0.0
        for j in range(d):
            partial = R - alpha - F.sum(axis=1) + F[:, j]
            f = ops[j].fit(partial)
            new = f.fitted
            shift = new.mean()
            new = new - shift
            denom = max(np.sqrt(np.mean(F[:, j] ** 2)), 1e-12)
            change = max(change, np.sqrt(np.mean((new - F[:, j]) ** 2)) / denom)
            F[:, j] = new
            smoothers[j] = (f, shift)
        if change < tol:
            break
    fitted = alpha + F.sum(axis=1)
    resid = R - fitted
    return GamFit(float(alpha), smoothers, float(np.var(resid, ddof=1)), n, it,
                  fitted=fitted, residuals=resid)


def estimate_nx(sigma2_hat: float, tau: float, n_min: int, n_max: int) -> int:
    """ceil(tau / sigma2_hat) clamped to [n_min, n_max]; zero variance maps to n_max."""
    if not 2 <= n_min <= n_max:
        raise ValueError("need 2 <= n_min <= n_max")
    if sigma2_hat <= 0.0:
        return int(n_max)
    raw = tau / sigma2_hat
    if raw >= n_max:
        return int(n_max)
    return int(min(max(math.ceil(raw), n_min), n_max))


@dataclass
class Calibration:
    n_x_new: int
    sigma2_hat: float
    explained_variance: np.ndarray
    iterations: int
    fallback: bool
    notes: list = field(default_factory=list)


def winsorize(values, k: float = 5.0) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return v.copy()
    m, s = v.mean(), v.std(ddof=1)
    return np.clip(v, m - k * s, m + k * s)


def calibrate(thetas, responses, tau: float, n_min: int, n_max: int,
              n_x: int | None = None, rule: str = "scaled", df: float = 6.0,
              max_iter: int = 20, tol: float = 1e-6, winsor_k: float = 5.0) -> Calibration:
    """PCA -> backfitted GAM -> N_x for a set of equally weighted islands.

    ``responses`` are the islands' log-likelihood estimates, obtained with
    ``n_x`` particles each.  With ``rule="literal"`` the new size is
    ``tau / sigma2_hat``.  With ``rule="scaled"`` (default) the residual
    variance is first converted to its one-particle equivalent
    ``n_x * sigma2_hat``, giving ``tau * n_x * sigma2_hat``: the size at
    which the log-likelihood variance is about ``1 / tau``.
    """
    X = np.atleast_2d(np.asarray(thetas, dtype=float))
    R = winsorize(np.asarray(responses, dtype=float), winsor_k)
    n, d = X.shape
    notes = []
    n_unique = len(np.unique(X, axis=0))
    if n_unique < d + 1:
        notes.append("degenerate theta cloud; intercept-only fit")
        basis_var = np.zeros(d)
        fit = linear_fit(R, np.zeros((n, 0)))
    else:
        basis, cov = principal_components(X)
        basis_var = basis.explained_variance
        fit = backfit_gam(R, cov, df=df, max_iter=max_iter, tol=tol)
        if fit.linear:
            notes.append(f"n={n} < 10*d; linear fallback")
    for msg in notes:
        log.warning("calibrate: %s", msg)
    s2 = fit.residual_variance
    if rule == "literal":
        n_new = estimate_nx(s2, tau, n_min, n_max)
    elif rule == "scaled":
        if n_x is None:
            raise ValueError("rule='scaled' needs the current n_x")
        per_particle = n_x * s2
        n_new = n_min if per_particle <= 0 else estimate_nx(1.0 / per_particle, tau, n_min, n_max)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return Calibration(n_new, s2, basis_var, fit.iterations, bool(notes), notes)
