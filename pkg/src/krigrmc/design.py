"""Experimental designs: where to place the macro-sites at each date.

Space-filling designs (Latin hypercube, Sobol, Halton, lattice) live on a
user-chosen box, optionally cut down by a predicate; probabilistic designs
draw from the law of X_t itself. ``batch_stats`` turns replicated outputs
into the (mean, variance) pairs that the kriging fit consumes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

PILOT_DRAWS = 10_000
MIN_ACCEPTANCE = 1e-3


class DomainInfeasibleError(ValueError):
    """Raised when a constrained domain accepts (almost) no points."""


@dataclass(frozen=True)
class DesignDomain:
    """Axis-aligned box, optionally intersected with ``constraint(x) -> bool``."""

    lower: tuple
    upper: tuple
    constraint: Optional[Callable] = None
    label: str = ""

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("lower and upper bounds differ in length")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError("each lower bound must be below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def width(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def scale(self, u) -> np.ndarray:
        """Affine map from the unit cube onto the box."""
        return np.asarray(self.lower) + np.asarray(u) * self.width

    def accepts(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = np.all((x >= np.asarray(self.lower)) & (x <= np.asarray(self.upper)), axis=1)
        if self.constraint is not None:
            ok &= np.asarray(self.constraint(x), dtype=bool)
        return ok

    def check_feasible(self, rng=None):
        if self.constraint is None:
            return
        rng = np.random.default_rng(0) if rng is None else rng
        rate = self.accepts(self.scale(rng.random((PILOT_DRAWS, self.dim)))).mean()
        if rate < MIN_ACCEPTANCE:
            raise DomainInfeasibleError(f"constraint acceptance rate {rate:.2e} is below {MIN_ACCEPTANCE}")


def mean_below(level: float) -> Callable:
    """Predicate ``mean(x) <= level``; e.g. the in-the-money set of a basket put."""

    def pred(x):
        return np.asarray(x).mean(axis=-1) <= level

    return pred


@dataclass
class Design:
    """Macro-sites with per-site batch mean, batch variance and replicate count."""

    sites: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    reps: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @property
    def noise(self) -> np.ndarray:
        """Variance of each batch mean."""
        return self.variances / self.reps

    def to_csv(self, path):
        write_design_csv(path, self.sites, self.means, self.variances, self.reps)


def write_design_csv(path, sites, means=None, variances=None, reps=None):
    sites = np.atleast_2d(sites)
    n, d = sites.shape
    cols = [f"x{j + 1}" for j in range(d)] + ["ybar", "var", "M"]
    blank = np.full(n, np.nan)
    means = blank if means is None else means
    variances = blank if variances is None else variances
    reps = np.zeros(n, dtype=int) if reps is None else reps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(n):
            w.writerow([repr(float(v)) for v in sites[i]]
                       + [repr(float(means[i])), repr(float(variances[i])), int(reps[i])])


def _lhs_unit(n, d, rng):
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    return (strata + rng.random((n, d))) / n


def lhs(n: int, dom: DesignDomain, rng) -> np.ndarray:
    """Latin hypercube design of ``n`` sites in ``dom``.

    On a plain box every coordinate has exactly one point per stratum.
    Constrained domains keep the accepted points of the first hypercube and
    top up from fresh hypercubes until ``n`` points are accepted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if dom.constraint is None:
        return dom.scale(_lhs_unit(n, dom.dim, rng))
    dom.check_feasible()
    out = []
    have = 0
    while have < n:
        x = dom.scale(_lhs_unit(n, dom.dim, rng))
        x = x[dom.accepts(x)][: n - have]
        out.append(x)
        have += x.shape[0]
    return np.concatenate(out)


def _qmc_sites(engine, n, dom):
    engine.fast_forward(1)  # skip the all-zeros point
    if dom.constraint is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return dom.scale(engine.random(n))
    dom.check_feasible()
    out, have = [], 0
    chunk = max(2 * n, 64)
    while have < n:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            x = dom.scale(engine.random(chunk))
        x = x[dom.accepts(x)][: n - have]
        out.append(x)
        have += x.shape[0]
    return np.concatenate(out)


def sobol(n: int, dom: DesignDomain) -> np.ndarray:
    """First ``n`` points (from index 1) of the unscrambled Sobol sequence."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _qmc_sites(qmc.Sobol(dom.dim, scramble=False), n, dom)


def halton(n: int, dom: DesignDomain) -> np.ndarray:
    """First ``n`` points (from index 1) of the prime-base Halton sequence."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _qmc_sites(qmc.Halton(dom.dim, scramble=False), n, dom)


def grid(n: int, dom: DesignDomain) -> np.ndarray:
    """Cell-centred lattice with ``ceil(n ** (1/d))`` nodes per axis, truncated to ``n`` accepted sites."""
    if n < 1:
        raise ValueError("n must be >= 1")
    per = int(np.ceil(n ** (1.0 / dom.dim) - 1e-9))
    while True:
        axes = [(np.arange(per) + 0.5) / per] * dom.dim
        u = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.dim)
        x = dom.scale(u)
        x = x[dom.accepts(x)]
        if x.shape[0] >= n:
            return x[:n]
        per += 1


def probabilistic(n: int, model, grid_, k: int, rng, itm_filter=None) -> np.ndarray:
    """Draw ``n`` sites from the law of X at date index ``k`` given X_0.

    With ``itm_filter`` (a contract), only in-the-money draws are kept.
    """
    from .models import simulate_paths

    if k < 1:
        raise ValueError("probabilistic designs need t > 0")
    if n == 0:
        return np.empty((0, model.dim))
    t = grid_.time(k)
    out, have, drawn = [], 0, 0
    batch = n
    while have < n:
        x = simulate_paths(model, _prefix_grid(grid_, k), 0, model.x0, batch, rng)[:, -1]
        drawn += batch
        if itm_filter is not None:
            x = x[itm_filter.itm(t, x)]
        out.append(x[: n - have])
        have += out[-1].shape[0]
        if drawn >= PILOT_DRAWS and have / drawn < MIN_ACCEPTANCE:
            raise DomainInfeasibleError("in-the-money acceptance rate is below 1e-3")
        if have < n:
            rate = max(have / drawn, MIN_ACCEPTANCE)
            batch = int(min(max((n - have) / rate * 1.2, 64), 10 * PILOT_DRAWS))
    return np.concatenate(out)


def _prefix_grid(grid_, k):
    from .models import TimeGrid

    return TimeGrid(grid_.time(k), k)


def batch_stats(y):
    """Batch mean and unbiased batch variance along the last axis.

    With a single replicate the variance is undefined and returned as NaN.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0 or y.shape[-1] == 0:
        raise ValueError("batch_stats needs at least one replicate")
    mean = y.mean(axis=-1)
    if y.shape[-1] < 2:
        var = np.full(mean.shape, np.nan)
    else:
        var = y.var(axis=-1, ddof=1)
    return mean, var
