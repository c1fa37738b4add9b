"""Estimator-style front doors for the two pricing methods.

Both follow the scikit-learn conventions: hyperparameters are constructor
arguments stored verbatim (so ``get_params``/``set_params``/``clone`` work),
``fit`` learns an exercise policy for a :class:`Problem`, and fitted state
carries a trailing underscore.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .design import DesignDomain, mean_below
from .engine import DesignConfig, RegressionConfig, backward_induction, out_of_sample_value
from .lsmc import BasisSpec, lsmc_backward
from .rng import stream
from .sequential import SequentialConfig


@dataclass(frozen=True)
class Problem:
    """A model, a contract and its exercise grid."""

    model: object
    contract: object
    grid: object


class _Pricer(BaseEstimator):
    def value(self, n_out=100_000, oos_seed=0, x0=None):
        """Out-of-sample value of the fitted policy: ``(V, SE)``."""
        check_is_fitted(self, "policy_")
        v, se, n = out_of_sample_value(self.policy_, self.problem_.model, x0=x0, n_out=n_out,
                                       rng=stream(oos_seed, "oos"))
        self.n_valuation_sims_ = n
        return v, se

    def exercise(self, t, x):
        """Boolean exercise decision of the fitted policy at date ``t``."""
        check_is_fitted(self, "policy_")
        return self.policy_.in_stopping_set(t, x)


class KrigingRMC(_Pricer):
    """Regression Monte Carlo with a stochastic-kriging surrogate per date.

    Parameters
    ----------
    design : {"lhs", "sobol", "halton", "grid", "probabilistic", "sequential"}
    n_sim, reps : total simulation budget per date and batch size.
    lower, upper : bounds of the design box.
    mean_cap : if given, restrict the box to points whose coordinate mean
        is at most this level.
    kernel, optimize, s2, lengthscales, noise, n_restarts, target :
        forwarded to the kriging fit.
    n0, n_candidates, acquisition, refit_every : sequential design only.
    seed : master seed for all simulation streams.
    """

    def __init__(self, design="lhs", n_sim=3000, reps=100, lower=None, upper=None, mean_cap=None,
                 itm_only=True, kernel="matern52", optimize=True, s2=None, lengthscales=None,
                 noise="auto", n_restarts=5, target="timing", n0=10, n_candidates=None,
                 acquisition="zc-sur", refit_every=10, adaptive_target_var=None,
                 adaptive_max_reps=1000, seed=0):
        self.design = design
        self.n_sim = n_sim
        self.reps = reps
        self.lower = lower
        self.upper = upper
        self.mean_cap = mean_cap
        self.itm_only = itm_only
        self.kernel = kernel
        self.optimize = optimize
        self.s2 = s2
        self.lengthscales = lengthscales
        self.noise = noise
        self.n_restarts = n_restarts
        self.target = target
        self.n0 = n0
        self.n_candidates = n_candidates
        self.acquisition = acquisition
        self.refit_every = refit_every
        self.adaptive_target_var = adaptive_target_var
        self.adaptive_max_reps = adaptive_max_reps
        self.seed = seed

    def _configs(self):
        dom = None
        if self.lower is not None:
            cons = mean_below(self.mean_cap) if self.mean_cap is not None else None
            dom = DesignDomain(self.lower, self.upper, cons)
            if cons is not None:
                dom.check_feasible()
        elif self.design != "probabilistic":
            raise ValueError(f"design {self.design!r} needs lower/upper bounds")
        seq = None
        if self.design == "sequential":
            seq = SequentialConfig(self.n0, None, self.n_candidates, self.acquisition,
                                   self.refit_every)
        dc = DesignConfig(self.design, self.n_sim, self.reps, dom, self.itm_only,
                          self.adaptive_target_var, self.adaptive_max_reps, seq)
        ls = None if self.lengthscales is None else tuple(np.atleast_1d(self.lengthscales))
        rc = RegressionConfig(self.kernel, self.optimize, self.s2, ls, self.noise,
                              self.n_restarts, self.target)
        return dc, rc

    def fit(self, problem: Problem, k_min=1):
        """Learn the policy; ``k_min > 1`` stops after that date (diagnostics only)."""
        dc, rc = self._configs()
        if self.reps < 1 or self.n_sim < self.reps:
            raise ValueError("need reps >= 1 and n_sim >= reps")
        res = backward_induction(problem.model, problem.contract, problem.grid, dc, rc, self.seed,
                                 k_min=k_min)
        self.problem_ = problem
        self.policy_ = res.policy
        self.result_ = res
        self.reports_ = res.reports
        self.n_sims_ = res.n_sims
        return self


class LSMCPricer(_Pricer):
    """Least-squares Monte Carlo on one global path set.

    ``basis="poly"`` uses a total-degree polynomial (``degree``);
    ``basis="bw11"`` uses ``cells`` equi-probable slices per coordinate.
    """

    def __init__(self, basis="poly", degree=3, cells=10, n_paths=50_000, itm_only=None, seed=0):
        self.basis = basis
        self.degree = degree
        self.cells = cells
        self.n_paths = n_paths
        self.itm_only = itm_only
        self.seed = seed

    def fit(self, problem: Problem):
        spec = BasisSpec(self.basis, self.degree, self.cells)
        policy, n = lsmc_backward(problem.model, problem.contract, problem.grid, self.n_paths,
                                  spec, stream(self.seed, "global"), itm_only=self.itm_only)
        self.problem_ = problem
        self.policy_ = policy
        self.n_sims_ = n
        return self
