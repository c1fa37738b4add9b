"""Stochastic kriging: zero-mean Gaussian-process regression with known
(or fitted homoscedastic) per-site observation noise.

The estimator follows the scikit-learn protocol (``fit``/``predict``,
``get_params``) so it can be dropped into pipelines or grid searches, and
adds the two operations sequential design needs: ``update`` (assimilate one
new observation with a frozen kernel in O(n^2)) and ``posterior_cov``.
"""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

KERNELS = ("sqexp", "matern52", "matern32")
ALIASES = {
    "squared-exponential": "sqexp",
    "gaussian": "sqexp",
    "sqexp": "sqexp",
    "matern-5/2": "matern52",
    "matern52": "matern52",
    "matern-3/2": "matern32",
    "matern32": "matern32",
}
JITTER_START = 1e-8
JITTER_MAX = 1e-4
HOMOSCEDASTIC_BELOW = 20


class FitFailure(RuntimeError):
    """Covariance matrix could not be factorised even with maximal jitter."""


def kernel_family(name: str) -> str:
    try:
        return ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown kernel family {name!r}") from None


def _correlation(family, r2):
    if family == "sqexp":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if family == "matern52":
        s5r = math.sqrt(5.0) * r
        return (1.0 + s5r + 5.0 * r2 / 3.0) * np.exp(-s5r)
    s3r = math.sqrt(3.0) * r
    return (1.0 + s3r) * np.exp(-s3r)


def _correlation_dlog(family, r2):
    """d correlation / d log(theta_j), divided by (dx_j / theta_j)^2."""
    if family == "sqexp":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if family == "matern52":
        return (5.0 / 3.0) * (1.0 + math.sqrt(5.0) * r) * np.exp(-math.sqrt(5.0) * r)
    return 3.0 * np.exp(-math.sqrt(3.0) * r)


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel ``s2 * R(rho)`` with ``rho^2 = sum(((x - x') / theta)^2)``.

    ``lengthscales`` divide coordinate differences, so smaller values give
    rougher functions.
    """

    family: str
    s2: float
    lengthscales: tuple

    def __post_init__(self):
        object.__setattr__(self, "family", kernel_family(self.family))
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not self.s2 > 0:
            raise ValueError("s2 must be positive")
        if any(not v > 0 for v in ls):
            raise ValueError("lengthscales must be positive")

    def __call__(self, x, xp) -> np.ndarray:
        theta = np.asarray(self.lengthscales)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xp = np.atleast_2d(np.asarray(xp, dtype=float))
        r2 = cdist(x / theta, xp / theta, "sqeuclidean")
        return self.s2 * _correlation(self.family, r2)


def kernel_eval(k: KernelSpec, x, xp) -> float:
    return float(k(np.atleast_1d(x).reshape(1, -1), np.atleast_1d(xp).reshape(1, -1))[0, 0])


class StochasticKriging(RegressorMixin, BaseEstimator):
    """Kriging regressor for batch means with heteroskedastic noise.

    Parameters
    ----------
    kernel : str
        ``"matern52"``, ``"sqexp"`` or ``"matern32"`` (long names accepted).
    noise : {"auto", "empirical", "homoscedastic"}
        ``empirical`` uses the ``noise_var`` passed to :meth:`fit` as the
        diagonal of Sigma. ``homoscedastic`` estimates a single nugget by
        maximum likelihood. ``auto`` picks ``empirical`` when noise
        variances are supplied and every batch has at least 20 replicates.
    s2, lengthscales : float, array-like, optional
        Kernel hyperparameters. With ``optimize=False`` these are used as
        given; otherwise they seed the first optimizer start.
    nugget : float, optional
        Homoscedastic noise variance used when ``optimize=False``.
    optimize : bool
        Fit hyperparameters by maximum marginal likelihood.
    n_restarts : int
        Number of optimizer starts (the likelihood is multimodal).
    random_state : int, Generator or None
        Seeds the random optimizer starts.
    """

    def __init__(self, kernel="matern52", noise="auto", s2=None, lengthscales=None,
                 nugget=None, optimize=True, n_restarts=5, random_state=None):
        self.kernel = kernel
        self.noise = noise
        self.s2 = s2
        self.lengthscales = lengthscales
        self.nugget = nugget
        self.optimize = optimize
        self.n_restarts = n_restarts
        self.random_state = random_state

    # ------------------------------------------------------------------ fit
    def fit(self, X, y, noise_var=None, reps=None):
        """Fit to sites ``X`` and batch means ``y``.

        ``noise_var`` is the variance of each observation (batch variance
        divided by batch size); ``reps`` the batch sizes, used only to
        decide the ``auto`` noise mode.
        """
        X = check_array(X, ensure_2d=True, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        if X.shape[0] < 3:
            raise ValueError("kriging fit needs at least 3 sites")
        family = kernel_family(self.kernel)
        mode = self._noise_mode(noise_var, reps)
        n, d = X.shape
        if mode == "empirical":
            nv = np.asarray(noise_var, dtype=float).ravel()
            if nv.shape[0] != n or np.any(~np.isfinite(nv)) or np.any(nv < 0):
                raise ValueError("noise_var must be finite, nonnegative and one per site")
        else:
            nv = np.zeros(n)

        width = np.ptp(X, axis=0)
        width = np.where(width > 0, width, 1.0)
        scale = float(np.mean(y * y)) or 1.0
        self.n_features_in_ = d
        self.noise_mode_ = mode
        self.converged_ = True

        if not self.optimize:
            if self.s2 is None or self.lengthscales is None:
                raise ValueError("optimize=False requires s2 and lengthscales")
            ls = np.broadcast_to(np.asarray(self.lengthscales, dtype=float), (d,))
            kern = KernelSpec(family, float(self.s2), tuple(ls))
            tau2 = 0.0
            if mode == "homoscedastic":
                if self.nugget is None:
                    raise ValueError("optimize=False with homoscedastic noise requires nugget")
                tau2 = float(self.nugget)
            self._set_data(X, y, nv + tau2, kern)
            self.nugget_ = tau2
            self.log_likelihood_ = self._loglik_current()
            return self

        lik = _Likelihood(X, y, nv, family, fit_nugget=(mode == "homoscedastic"))
        lo = [math.log(1e-6 * scale)] + list(np.log(1e-2 * width))
        hi = [math.log(1e2 * scale)] + list(np.log(1e2 * width))
        if lik.fit_nugget:
            lo.append(math.log(1e-10 * scale))
            hi.append(math.log(10.0 * scale))
        bounds = list(zip(lo, hi))
        starts = self._starts(np.asarray(lo), np.asarray(hi), scale, width, lik.fit_nugget)

        best, best_val, any_conv = None, np.inf, False
        for p0 in starts:
            p0 = np.clip(p0, np.asarray(lo), np.asarray(hi))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = minimize(lik.nll_grad, p0, jac=True, method="L-BFGS-B", bounds=bounds)
            if np.isfinite(res.fun) and res.fun < best_val:
                best, best_val = res.x, res.fun
            any_conv |= bool(res.success)
        if best is None:
            raise FitFailure("marginal likelihood could not be evaluated at any start")
        if not any_conv:
            self.converged_ = False
            warnings.warn("kriging MLE did not converge; using best iterate", RuntimeWarning)
        s2 = math.exp(best[0])
        ls = np.exp(best[1:1 + d])
        tau2 = math.exp(best[-1]) if lik.fit_nugget else 0.0
        self.nugget_ = tau2
        self._set_data(X, y, nv + tau2, KernelSpec(family, s2, tuple(ls)))
        self.log_likelihood_ = -best_val
        self.initial_log_likelihood_ = -lik.nll_grad(starts[0])[0]
        return self

    def fit_design(self, design):
        """Fit to a :class:`~krigrmc.design.Design`."""
        return self.fit(design.sites, design.means, noise_var=design.noise, reps=design.reps)

    @classmethod
    def from_prior(cls, kernel: KernelSpec, dim: int):
        """A fitted model with no data: the posterior equals the prior."""
        est = cls(kernel=kernel.family, s2=kernel.s2, lengthscales=kernel.lengthscales, optimize=False)
        est.n_features_in_ = dim
        est.noise_mode_ = "empirical"
        est.nugget_ = 0.0
        est.converged_ = True
        est._set_data(np.empty((0, dim)), np.empty(0), np.empty(0), kernel)
        est.log_likelihood_ = 0.0
        return est

    def _noise_mode(self, noise_var, reps):
        mode = self.noise
        if mode == "auto":
            if noise_var is None:
                return "homoscedastic"
            if reps is not None and np.min(reps) < HOMOSCEDASTIC_BELOW:
                return "homoscedastic"
            return "empirical"
        if mode == "empirical" and noise_var is None:
            raise ValueError("empirical noise mode requires noise_var")
        if mode not in ("empirical", "homoscedastic"):
            raise ValueError(f"unknown noise mode {mode!r}")
        return mode

    def _starts(self, lo, hi, scale, width, fit_nugget):
        rng = check_random_state(self.random_state) if not isinstance(
            self.random_state, np.random.Generator) else self.random_state
        d = width.shape[0]
        first = [math.log(self.s2) if self.s2 is not None else math.log(scale)]
        if self.lengthscales is not None:
            first += list(np.log(np.broadcast_to(np.asarray(self.lengthscales, float), (d,))))
        else:
            first += list(np.log(0.5 * width))
        if fit_nugget:
            first.append(math.log(self.nugget) if self.nugget else math.log(1e-2 * scale))
        starts = [np.asarray(first)]
        # random starts avoid the outer decade of each bound
        mid_lo = lo + 0.25 * (hi - lo)
        mid_hi = hi - 0.25 * (hi - lo)
        for _ in range(max(self.n_restarts, 1) - 1):
            starts.append(mid_lo + rng.random(lo.shape[0]) * (mid_hi - mid_lo))
        return starts

    def _set_data(self, X, y, diag_noise, kern):
        self.X_fit_ = X
        self.y_fit_ = y
        self.noise_ = np.asarray(diag_noise, dtype=float)
        self.kernel_ = kern
        n = X.shape[0]
        if n == 0:
            self.jitter_ = JITTER_START * kern.s2
            self.L_ = np.empty((0, 0))
            self.alpha_ = np.empty(0)
            return
        K = kern(X, X)
        jit = JITTER_START * kern.s2
        while True:
            try:
                L = linalg.cholesky(K + np.diag(self.noise_ + jit), lower=True)
                break
            except linalg.LinAlgError:
                jit *= 10.0
                if jit > JITTER_MAX * kern.s2 * (1 + 1e-9):
                    raise FitFailure("covariance matrix is not positive definite after maximal jitter")
        self.jitter_ = jit
        self.L_ = L
        self.alpha_ = linalg.cho_solve((L, True), y)

    def _loglik_current(self):
        n = self.X_fit_.shape[0]
        return float(-0.5 * self.y_fit_ @ self.alpha_ - np.log(np.diag(self.L_)).sum()
                     - 0.5 * n * math.log(2 * math.pi))

    def log_marginal_likelihood(self, log_params, X=None, y=None, noise_var=None):
        """Log marginal likelihood and its gradient at ``log_params``.

        ``log_params`` is ``[log s2, log theta_1..d]`` plus ``log nugget``
        when the fitted model uses a homoscedastic nugget. Data default to
        the training data.
        """
        check_is_fitted(self)
        X = self.X_fit_ if X is None else np.asarray(X, float)
        y = self.y_fit_ if y is None else np.asarray(y, float)
        if noise_var is None:
            noise_var = self.noise_ - self.nugget_
        lik = _Likelihood(X, y, np.asarray(noise_var, float), self.kernel_.family,
                          fit_nugget=self.noise_mode_ == "homoscedastic")
        val, grad = lik.nll_grad(np.asarray(log_params, float))
        return -val, -grad

    # ------------------------------------------------------------- predict
    def predict(self, X, return_var=False):
        """Posterior mean, and optionally the posterior variance (clamped at 0)."""
        check_is_fitted(self)
        X = check_array(X, ensure_2d=True, dtype=float)
        if self.X_fit_.shape[0] == 0:
            m = np.zeros(X.shape[0])
            return (m, np.full(X.shape[0], self.kernel_.s2)) if return_var else m
        Ks = self.kernel_(X, self.X_fit_)
        m = Ks @ self.alpha_
        if not return_var:
            return m
        w = linalg.solve_triangular(self.L_, Ks.T, lower=True)
        v = self.kernel_.s2 - np.einsum("ij,ij->j", w, w)
        return m, np.maximum(v, 0.0)

    def posterior_cov(self, X1, X2):
        """Posterior covariance matrix between the rows of ``X1`` and ``X2``."""
        check_is_fitted(self)
        X1 = np.atleast_2d(np.asarray(X1, float))
        X2 = np.atleast_2d(np.asarray(X2, float))
        prior = self.kernel_(X1, X2)
        if self.X_fit_.shape[0] == 0:
            return prior
        w1 = linalg.solve_triangular(self.L_, self.kernel_(self.X_fit_, X1), lower=True)
        w2 = linalg.solve_triangular(self.L_, self.kernel_(self.X_fit_, X2), lower=True)
        return prior - w1.T @ w2

    # -------------------------------------------------------------- update
    def update(self, x_new, y_new, noise_new):
        """Return a new model with one observation appended, kernel frozen.

        The Cholesky factor is extended by one row, so the cost is O(n^2).
        """
        check_is_fitted(self)
        if noise_new < 0:
            raise ValueError("noise variance must be nonnegative")
        x_new = np.asarray(x_new, float).reshape(1, -1)
        kxx = self.kernel_.s2 + noise_new + self.jitter_
        n = self.X_fit_.shape[0]
        if n:
            kvec = self.kernel_(self.X_fit_, x_new)[:, 0]
            l = linalg.solve_triangular(self.L_, kvec, lower=True)
            dd = kxx - l @ l
        else:
            l = np.empty(0)
            dd = kxx
        if dd <= 0:
            raise FitFailure("rank-one update lost positive definiteness")
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self.L_
        L[n, :n] = l
        L[n, n] = math.sqrt(dd)
        new = copy.copy(self)
        new.X_fit_ = np.vstack([self.X_fit_, x_new])
        new.y_fit_ = np.append(self.y_fit_, float(y_new))
        new.noise_ = np.append(self.noise_, float(noise_new))
        new.L_ = L
        new.alpha_ = linalg.cho_solve((L, True), new.y_fit_)
        return new

    def variance_reduction(self, x_new, noise_new):
        """Drop in posterior standard deviation at ``x_new`` if it were sampled with ``noise_new``."""
        _, v2 = self.predict(np.asarray(x_new, float).reshape(1, -1), return_var=True)
        v = math.sqrt(v2[0])
        if v == 0:
            return 0.0
        return v * (1.0 - math.sqrt(noise_new) / math.sqrt(noise_new + v * v))

    # --------------------------------------------------------- serialising
    def to_dict(self):
        check_is_fitted(self)
        return {
            "kernel": {"family": self.kernel_.family, "s2": self.kernel_.s2,
                       "lengthscales": list(self.kernel_.lengthscales)},
            "sites": self.X_fit_.tolist(),
            "ybar": self.y_fit_.tolist(),
            "noise": self.noise_.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        k = data["kernel"]
        kern = KernelSpec(k["family"], k["s2"], tuple(k["lengthscales"]))
        X = np.asarray(data["sites"], float).reshape(-1, len(kern.lengthscales))
        est = cls.from_prior(kern, X.shape[1])
        est._set_data(X, np.asarray(data["ybar"], float), np.asarray(data["noise"], float), kern)
        return est


class _Likelihood:
    """Negative log marginal likelihood in log-parameters, with gradient."""

    def __init__(self, X, y, noise, family, fit_nugget):
        self.y = y
        self.noise = noise
        self.family = family
        self.fit_nugget = fit_nugget
        self.n, self.d = X.shape
        self.diff2 = np.stack([(X[:, j, None] - X[None, :, j]) ** 2 for j in range(self.d)])

    def nll_grad(self, p):
        s2 = math.exp(p[0])
        theta = np.exp(p[1:1 + self.d])
        tau2 = math.exp(p[-1]) if self.fit_nugget else 0.0
        scaled = self.diff2 / (theta**2)[:, None, None]
        r2 = scaled.sum(axis=0)
        R = _correlation(self.family, r2)
        K = s2 * R
        diag = self.noise + tau2
        jit = JITTER_START * s2
        while True:
            try:
                L = linalg.cholesky(K + np.diag(diag + jit), lower=True)
                break
            except linalg.LinAlgError:
                jit *= 10.0
                if jit > JITTER_MAX * s2 * (1 + 1e-9):
                    return 1e25, np.zeros_like(p)
        alpha = linalg.cho_solve((L, True), self.y)
        nll = 0.5 * self.y @ alpha + np.log(np.diag(L)).sum() + 0.5 * self.n * math.log(2 * math.pi)
        Cinv = linalg.cho_solve((L, True), np.eye(self.n))
        W = np.outer(alpha, alpha) - Cinv
        grad = np.empty_like(p)
        grad[0] = -0.5 * (np.sum(W * K) + jit * np.trace(W))
        dR = s2 * _correlation_dlog(self.family, r2)
        for j in range(self.d):
            grad[1 + j] = -0.5 * np.sum(W * (dR * scaled[j]))
        if self.fit_nugget:
            grad[-1] = -0.5 * tau2 * np.trace(W)
        return nll, grad
