"""Least-squares Monte Carlo baselines on one global path set.

Two regressors are provided: a global polynomial basis (total degree
``p``) fitted by least squares, and the equi-probable partition scheme
that splits the sample into ``r`` quantile slices per coordinate and fits
an independent hyperplane in every cell.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.preprocessing import PolynomialFeatures
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .engine import DateSurrogate, StoppingPolicy
from .models import simulate_paths

RIDGE = 1e-8


class RankDeficientWarning(UserWarning):
    pass


class PolynomialRegressor(RegressorMixin, BaseEstimator):
    """Least squares on all monomials of total degree <= ``degree``.

    Inputs are standardised with the training mean and scale before the
    basis is built, which keeps the design matrix well conditioned without
    changing the fitted function.
    """

    def __init__(self, degree=3):
        self.degree = degree

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.center_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        self.basis_ = PolynomialFeatures(self.degree, include_bias=True)
        B = self.basis_.fit_transform((X - self.center_) / self.scale_)
        if X.shape[0] < B.shape[1]:
            raise ValueError(f"need at least {B.shape[1]} points for degree {self.degree}, got {X.shape[0]}")
        Q, R = np.linalg.qr(B)
        diag = np.abs(np.diag(R))
        if diag.min() <= 1e-10 * max(diag.max(), 1.0):
            warnings.warn("polynomial design is rank deficient; using ridge penalty 1e-8",
                          RankDeficientWarning)
            self.coef_ = np.linalg.solve(B.T @ B + RIDGE * np.eye(B.shape[1]), B.T @ y)
        else:
            from scipy.linalg import solve_triangular

            self.coef_ = solve_triangular(R, Q.T @ y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        return self.basis_.transform((X - self.center_) / self.scale_) @ self.coef_


class BW11Regressor(RegressorMixin, BaseEstimator):
    """Piecewise-linear regression on ``r**d`` equi-probable rectangular cells.

    The sample is sorted on coordinate 1 and cut into ``r`` slices of equal
    count; each slice is then cut on coordinate 2, and so on. A cell with
    fewer than ``d + 1`` points predicts its mean.
    """

    def __init__(self, cells_per_dim=10):
        self.cells_per_dim = cells_per_dim

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        n, d = X.shape
        r = int(self.cells_per_dim)
        if r < 1:
            raise ValueError("cells_per_dim must be >= 1")
        self.n_features_in_ = d
        self.edges_ = []
        groups = [np.arange(n)]
        for j in range(d):
            edges = np.full((len(groups), max(r - 1, 0)), np.inf)
            new_groups = []
            for g, idx in enumerate(groups):
                order = idx[np.argsort(X[idx, j], kind="stable")]
                parts = np.array_split(order, r)
                for s in range(r - 1):
                    if parts[s].size:
                        edges[g, s] = X[parts[s][-1], j]
                    elif s > 0:
                        edges[g, s] = edges[g, s - 1]
                new_groups.extend(parts)
            self.edges_.append(edges)
            groups = new_groups
        self.cell_index_ = np.empty(n, dtype=int)
        for c, idx in enumerate(groups):
            self.cell_index_[idx] = c
        self.counts_ = np.array([g.size for g in groups])
        self.coef_ = np.zeros((len(groups), d + 1))
        ybar = y.mean()
        for c, idx in enumerate(groups):
            if idx.size >= d + 1:
                A = np.column_stack([np.ones(idx.size), X[idx]])
                self.coef_[c], *_ = np.linalg.lstsq(A, y[idx], rcond=None)
            else:
                self.coef_[c, 0] = y[idx].mean() if idx.size else ybar
        return self

    def cells(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        r = int(self.cells_per_dim)
        cid = np.zeros(X.shape[0], dtype=int)
        for j, edges in enumerate(self.edges_):
            e = edges[cid]
            # ties at an edge stay in the lower slice, matching the sorted split
            s = (X[:, j, None] > e).sum(axis=1) if r > 1 else np.zeros(X.shape[0], dtype=int)
            cid = cid * r + s
        return cid

    def predict(self, X):
        X = check_array(X, dtype=float)
        c = self.cells(X)
        coef = self.coef_[c]
        return coef[:, 0] + np.einsum("ij,ij->i", coef[:, 1:], X)


def ols_fit(x, y, degree, itm_only=False, contract=None, t=None):
    """Fit a polynomial regressor, optionally on in-the-money points only."""
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float)
    if itm_only:
        keep = contract.itm(t, x)
        x, y = x[keep], y[keep]
    return PolynomialRegressor(degree).fit(x, y)


def bw11_fit(x, y, cells_per_dim):
    return BW11Regressor(cells_per_dim).fit(np.atleast_2d(x), y)


@dataclass(frozen=True)
class BasisSpec:
    """``kind`` is ``"poly"`` (uses ``degree``) or ``"bw11"`` (uses ``cells``)."""

    kind: str
    degree: int = 3
    cells: int = 10

    def __post_init__(self):
        if self.kind not in ("poly", "bw11"):
            raise ValueError("basis kind must be 'poly' or 'bw11'")
        if self.kind == "poly" and self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.kind == "bw11" and self.cells < 1:
            raise ValueError("cells must be >= 1")

    def make(self):
        return PolynomialRegressor(self.degree) if self.kind == "poly" else BW11Regressor(self.cells)


def lsmc_backward(model, contract, grid, n_paths, basis: BasisSpec, rng, itm_only=None):
    """Classical backward regression on a single global set of paths.

    Returns ``(policy, n_transitions)``. By default the polynomial basis
    regresses in-the-money paths only and the partition scheme uses all paths.
    """
    if itm_only is None:
        itm_only = basis.kind == "poly"
    paths = simulate_paths(model, grid, 0, model.x0, n_paths, rng)
    n = grid.n_exercise
    H = contract.payoff(grid.time(n), paths[:, n])
    policy = StoppingPolicy(grid, contract)
    for k in range(n - 1, 0, -1):
        t = grid.time(k)
        x = paths[:, k]
        h = contract.payoff(t, x)
        itm = h > 0
        fit_mask = itm if itm_only else np.ones(n_paths, dtype=bool)
        if itm.sum() == 0:
            continue
        try:
            reg = basis.make().fit(x[fit_mask], H[fit_mask])
        except ValueError:
            continue
        sur = DateSurrogate(reg, t, contract, "continuation")
        policy.surrogates[k] = sur
        stop = policy.stop(k, x)
        H = np.where(stop, h, H)
    n_trans = n_paths * n * model.steps_per_interval(grid)
    return policy, n_trans
