"""Regression Monte Carlo for Bermudan exercise with kriging surrogates.

Backward over the exercise dates, each date gets its own macro-design. The
sites are replicated, the replicates are pushed forward under the policy
already learned for later dates, and a kriging surrogate of the
continuation value is fitted to the batch means. The resulting stopping
policy is then valued on fresh out-of-sample paths.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from . import design as doe
from .kriging import StochasticKriging
from .rng import stream

log = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)


def local_loss(m, v, h):
    """Posterior expected cost of a wrong exercise decision.

    ``m`` and ``v`` are the surrogate mean and standard deviation of the
    continuation value, ``h`` the immediate payoff.
    """
    m, v, h = np.broadcast_arrays(np.asarray(m, float), np.asarray(v, float), np.asarray(h, float))
    d = np.abs(m - h)
    pos = v > 0
    vs = np.where(pos, v, 1.0)
    with np.errstate(over="ignore"):
        z = -d / vs
        out = vs * norm.pdf(z) - d * norm.cdf(z)
    out = np.where(pos, np.maximum(out, 0.0), 0.0)
    return out if out.ndim else float(out)


@dataclass
class DateSurrogate:
    """Continuation-value surrogate for one exercise date.

    With ``target="timing"`` the regressor was trained on ``C - h`` and the
    payoff is added back on prediction.
    """

    regressor: object
    t: float
    contract: object
    target: str = "continuation"

    def mean(self, x):
        m = self.regressor.predict(x)
        if self.target == "timing":
            m = m + self.contract.payoff(self.t, x)
        return m

    def mean_var(self, x):
        m, v2 = self.regressor.predict(x, return_var=True)
        if self.target == "timing":
            m = m + self.contract.payoff(self.t, x)
        return m, v2


@dataclass
class StoppingPolicy:
    """Estimated stopping regions, one surrogate per interior exercise date.

    Dates without a surrogate never stop; maturity always stops.
    """

    grid: object
    contract: object
    surrogates: dict = field(default_factory=dict)

    def stop(self, k: int, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        if k == self.grid.n_exercise:
            return np.ones(x.shape[0], dtype=bool)
        out = np.zeros(x.shape[0], dtype=bool)
        sur = self.surrogates.get(k)
        if sur is None or x.shape[0] == 0:
            return out
        t = self.grid.time(k)
        h = self.contract.payoff(t, x)
        itm = np.nonzero(h > 0)[0]
        if itm.size:
            out[itm] = sur.mean(x[itm]) <= h[itm]
        return out

    def in_stopping_set(self, t: float, x) -> np.ndarray:
        return self.stop(self.grid.index_of(t), x)


def pathwise_payoffs(policy: StoppingPolicy, model, k: int, x_start, rng):
    """Pathwise payoffs H_k for trajectories started at date index ``k``.

    Exercise at ``k`` itself is not allowed. Every path is advanced to
    maturity so random-number consumption does not depend on the policy.
    Returns ``(H, n_transitions)``.
    """
    grid = policy.grid
    x = np.array(np.atleast_2d(x_start), dtype=float)
    n = x.shape[0]
    H = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for s in range(k + 1, grid.n_exercise + 1):
        x = model.advance(x, grid.dt, rng)
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            continue
        hit = policy.stop(s, x[idx])
        stopped = idx[hit]
        H[stopped] = policy.contract.payoff(grid.time(s), x[stopped])
        alive[stopped] = False
    n_trans = n * (grid.n_exercise - k) * model.steps_per_interval(grid)
    return H, n_trans


def pathwise_payoff(policy: StoppingPolicy, t: float, path) -> float:
    """H_t along one pre-simulated path; ``path[j]`` is the state at date ``t + j dt``."""
    grid = policy.grid
    k = grid.index_of(t)
    path = np.atleast_2d(np.asarray(path, float))
    if path.shape[0] != grid.n_exercise - k + 1:
        raise ValueError("path must contain every exercise date from t to maturity")
    for j in range(1, path.shape[0]):
        if policy.stop(k + j, path[j:j + 1])[0]:
            return float(policy.contract.payoff(grid.time(k + j), path[j:j + 1])[0])
    raise AssertionError("maturity always stops")


def out_of_sample_value(policy: StoppingPolicy, model, x0=None, n_out=100_000, rng=None):
    """Low-biased value estimate ``max(h(0, X0), mean H_0)`` and its standard error."""
    if n_out < 1:
        raise ValueError("n_out must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    x0 = np.asarray(model.x0 if x0 is None else x0, float).reshape(1, -1)
    H, n_trans = pathwise_payoffs(policy, model, 0, np.repeat(x0, n_out, axis=0), rng)
    se = float(H.std(ddof=1) / math.sqrt(n_out)) if n_out > 1 else float("nan")
    v = max(float(policy.contract.payoff(0.0, x0)[0]), float(H.mean()))
    return v, se, n_trans


@dataclass
class DateReport:
    """Per-date diagnostics: batched design, surrogate and local loss at each site."""

    t: float
    sites: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    reps: np.ndarray
    m: np.ndarray
    v: np.ndarray
    h: np.ndarray
    loss: np.ndarray
    weight: np.ndarray
    L_hat: float
    trace: Optional[list] = None


def integrated_loss(surrogate: DateSurrogate, model, sites):
    """Density-weighted average of the local loss over design sites.

    Returns ``(L_hat, m, v, h, loss, weight)``.
    """
    sites = np.atleast_2d(sites)
    m, v2 = surrogate.mean_var(sites)
    v = np.sqrt(v2)
    h = surrogate.contract.payoff(surrogate.t, sites)
    loss = np.atleast_1d(local_loss(m, v, h))
    weight = model.transition_density(surrogate.t, sites)
    return float(np.mean(loss * weight)), m, v, h, loss, weight


@dataclass
class DesignConfig:
    """How to build the per-date macro-design.

    ``kind`` is one of lhs, sobol, halton, grid, probabilistic or
    sequential; ``n_sim`` is the total budget N per date and ``reps`` the
    batch size M, so there are ``n_sim // reps`` distinct sites.
    """

    kind: str = "lhs"
    n_sim: int = 3000
    reps: int = 100
    domain: Optional[doe.DesignDomain] = None
    itm_only: bool = True
    adaptive_target_var: Optional[float] = None
    adaptive_max_reps: int = 1000
    sequential: Optional[object] = None

    @property
    def n_sites(self) -> int:
        return self.n_sim // self.reps


@dataclass
class RegressionConfig:
    kernel: str = "matern52"
    optimize: bool = True
    s2: Optional[float] = None
    lengthscales: Optional[tuple] = None
    noise: str = "auto"
    n_restarts: int = 5
    target: str = "timing"

    def make(self, seed_rng=None) -> StochasticKriging:
        return StochasticKriging(kernel=self.kernel, noise=self.noise, s2=self.s2,
                                 lengthscales=self.lengthscales, optimize=self.optimize,
                                 n_restarts=self.n_restarts, random_state=seed_rng)


@dataclass
class RMCResult:
    policy: StoppingPolicy
    reports: list
    n_sims: int

    def loss_series(self):
        return {f"{r.t:.10g}": r.L_hat for r in self.reports}

    def write_diagnostics(self, path):
        """One row per (date, site): coordinates, batch stats, surrogate, payoff, loss."""
        d = self.reports[0].sites.shape[1] if self.reports else 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j + 1}" for j in range(d)]
                       + ["ybar", "var", "M", "m", "v", "h", "loss", "weight"])
            for r in sorted(self.reports, key=lambda r: r.t):
                for i in range(r.sites.shape[0]):
                    w.writerow([f"{r.t:.10g}"] + [repr(float(c)) for c in r.sites[i]]
                               + [repr(float(r.means[i])), repr(float(r.variances[i])), int(r.reps[i]),
                                  repr(float(r.m[i])), repr(float(r.v[i])), repr(float(r.h[i])),
                                  repr(float(r.loss[i])), repr(float(r.weight[i]))])


def make_sites(cfg: DesignConfig, model, grid, contract, k, rng, n=None):
    n = cfg.n_sites if n is None else n
    kind = cfg.kind
    if kind in ("lhs", "sequential"):
        return doe.lhs(n, cfg.domain, rng)
    if kind == "sobol":
        return doe.sobol(n, cfg.domain)
    if kind == "halton":
        return doe.halton(n, cfg.domain)
    if kind == "grid":
        return doe.grid(n, cfg.domain)
    if kind == "probabilistic":
        return doe.probabilistic(n, model, grid, k, rng, itm_filter=contract if cfg.itm_only else None)
    raise ValueError(f"unknown design kind {kind!r}")


def sample_batches(policy, model, k, sites, reps, rng):
    """Simulate ``reps`` pathwise payoffs at every site; returns (mean, var, reps, n_trans)."""
    sites = np.atleast_2d(sites)
    H, n_trans = pathwise_payoffs(policy, model, k, np.repeat(sites, reps, axis=0), rng)
    mean, var = doe.batch_stats(H.reshape(sites.shape[0], reps))
    return mean, var, np.full(sites.shape[0], reps), n_trans


def _adaptive_batches(policy, model, k, sites, cfg, rng):
    pilot = 10
    mean, var, _, n_trans = sample_batches(policy, model, k, sites, pilot, rng)
    target = np.ceil(var / cfg.adaptive_target_var).astype(int)
    reps = np.clip(target, pilot, cfg.adaptive_max_reps)
    means, variances = np.empty(len(sites)), np.empty(len(sites))
    for i, x in enumerate(sites):
        extra = reps[i] - pilot
        if extra <= 0:
            means[i], variances[i] = mean[i], var[i]
            continue
        H, nt = pathwise_payoffs(policy, model, k, np.repeat(x[None], extra, axis=0), rng)
        n_trans += nt
        # pool the pilot batch with the top-up batch
        tot = pilot + extra
        mu = (pilot * mean[i] + extra * H.mean()) / tot
        ss = (pilot - 1) * var[i] + pilot * (mean[i] - mu) ** 2 + ((H - mu) ** 2).sum()
        means[i], variances[i] = mu, ss / (tot - 1)
    return means, variances, reps, n_trans


def backward_induction(model, contract, grid, design_cfg: DesignConfig,
                       regression_cfg: RegressionConfig, seed: int = 0, k_min: int = 1) -> RMCResult:
    """Fit one continuation surrogate per interior exercise date, last date first.

    ``k_min`` stops the recursion early (after date index ``k_min``), which is
    all that is needed to inspect the design at a single date.
    """
    if not 1 <= k_min <= grid.n_exercise - 1 and grid.n_exercise > 1:
        raise ValueError("k_min must index an interior exercise date")
    policy = StoppingPolicy(grid, contract)
    reports = []
    n_sims = 0
    for k in range(grid.n_exercise - 1, k_min - 1, -1):
        t = grid.time(k)
        if design_cfg.kind == "sequential":
            from .sequential import grow_design

            sur, rep, nt = grow_design(policy, model, contract, grid, k, design_cfg,
                                       regression_cfg, seed)
            n_sims += nt
        else:
            sites = make_sites(design_cfg, model, grid, contract, k, stream(seed, "design", k))
            prng = stream(seed, "payoff", k)
            if design_cfg.adaptive_target_var:
                mean, var, reps, nt = _adaptive_batches(policy, model, k, sites, design_cfg, prng)
            else:
                mean, var, reps, nt = sample_batches(policy, model, k, sites, design_cfg.reps, prng)
            n_sims += nt
            sur = fit_surrogate(sites, mean, var, reps, t, contract, regression_cfg,
                                stream(seed, "mle", k))
            L_hat, m, v, h, loss, weight = integrated_loss(sur, model, sites)
            rep = DateReport(t, sites, mean, var, reps, m, v, h, loss, weight, L_hat)
        policy.surrogates[k] = sur
        reports.append(rep)
        log.debug("t=%.4f  sites=%d  L_hat=%.3e", t, rep.sites.shape[0], rep.L_hat)
    return RMCResult(policy, reports, n_sims)


def fit_surrogate(sites, mean, var, reps, t, contract, regression_cfg, rng):
    y = mean - contract.payoff(t, sites) if regression_cfg.target == "timing" else mean
    noise_var = var / reps if np.all(np.isfinite(var)) else None
    reg = regression_cfg.make(rng).fit(sites, y, noise_var=noise_var, reps=reps)
    return DateSurrogate(reg, t, contract, regression_cfg.target)
