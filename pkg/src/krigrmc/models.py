"""Asset dynamics: exact multi-asset GBM and an Euler-discretised
mean-reverting stochastic volatility model.

States are always handled as 2-D arrays of shape ``(n, dim)``; a single
state may be passed as a 1-D vector and is broadcast where that makes sense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PRICE_FLOOR = 1e-8


def _as_states(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == dim else x.reshape(-1, 1)
    if x.shape[-1] != dim:
        raise ValueError(f"state has {x.shape[-1]} coordinates, model expects {dim}")
    return x


@dataclass(frozen=True)
class TimeGrid:
    """Equally spaced exercise dates ``0, dt, 2 dt, ..., T``."""

    maturity: float
    n_exercise: int

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")
        if int(self.n_exercise) != self.n_exercise or self.n_exercise < 1:
            raise ValueError("n_exercise must be a positive integer")

    @property
    def dt(self) -> float:
        return self.maturity / self.n_exercise

    @property
    def dates(self) -> np.ndarray:
        return np.arange(self.n_exercise + 1) * self.dt

    def time(self, k: int) -> float:
        return k * self.dt

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_exercise or not math.isclose(k * self.dt, t, abs_tol=1e-9):
            raise ValueError(f"t={t} is not an exercise date of this grid")
        return k


def gbm_step(x, params: "GbmModel", dt: float, z) -> np.ndarray:
    """One exact log-normal step of length ``dt`` driven by standard normals ``z``."""
    x = np.asarray(x, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if np.any(x <= 0):
        raise ValueError("GBM states must be strictly positive")
    sig = params.sigma_array
    drift = (params.r - params.delta - 0.5 * sig**2) * dt
    return x * np.exp(drift + sig * math.sqrt(dt) * np.asarray(z, dtype=float))


def sv_step(x, params: "SvModel", z) -> tuple[np.ndarray, int]:
    """One Euler step of length ``params.euler_dt``.

    ``z`` holds *correlated* normal pairs in its last axis. Returns the new
    state and the number of prices that had to be clamped at the floor.
    """
    dt = params.euler_dt
    if dt <= 0:
        raise ValueError("euler_dt must be positive")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    price, logvol = x[..., 0], x[..., 1]
    sq = math.sqrt(dt)
    new_price = price * (1.0 + params.r * dt + np.exp(logvol) * sq * z[..., 0])
    new_logvol = logvol + params.a * (params.m1 - logvol) * dt + params.nu * sq * z[..., 1]
    bad = new_price <= 0
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        new_price = np.where(bad, PRICE_FLOOR, new_price)
    return np.stack([new_price, new_logvol], axis=-1), n_bad


def correlated_pair(z1, zeta, rho):
    return np.stack([z1, rho * z1 + math.sqrt(1.0 - rho * rho) * zeta], axis=-1)


@dataclass(frozen=True)
class GbmModel:
    """Independent geometric Brownian motions sharing ``r`` and ``delta``."""

    r: float
    delta: float
    sigma: tuple
    x0: tuple

    def __post_init__(self):
        sigma = tuple(float(s) for s in np.atleast_1d(self.sigma))
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        if len(sigma) == 1 and len(x0) > 1:
            sigma = sigma * len(x0)
        if len(sigma) != len(x0) or not x0:
            raise ValueError("sigma and x0 must have the same length")
        if any(s < 0 for s in sigma):
            raise ValueError("sigma must be nonnegative")
        if any(v <= 0 for v in x0):
            raise ValueError("x0 must be strictly positive")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return len(self.x0)

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma)

    def steps_per_interval(self, grid: TimeGrid) -> int:
        return 1

    def advance(self, x, dt, rng):
        z = rng.standard_normal(np.shape(x))
        return gbm_step(x, self, dt, z)

    def transition_density(self, t: float, x) -> np.ndarray:
        """Closed-form density of X_t given X_0 = x0 (product of lognormals)."""
        if t <= 0:
            raise ValueError("t must be positive")
        x = _as_states(x, self.dim)
        out = np.ones(x.shape[0])
        pos = np.all(x > 0, axis=1)
        xs = np.where(x > 0, x, 1.0)
        for j in range(self.dim):
            s = self.sigma[j] * math.sqrt(t)
            mu = math.log(self.x0[j]) + (self.r - self.delta - 0.5 * self.sigma[j] ** 2) * t
            lx = np.log(xs[:, j])
            out *= np.exp(-0.5 * ((lx - mu) / s) ** 2) / (xs[:, j] * s * math.sqrt(2 * math.pi))
        return np.where(pos, out, 0.0)


@dataclass
class ClampCounter:
    n: int = 0


@dataclass(frozen=True)
class SvModel:
    """Price with log-volatility following an Ornstein-Uhlenbeck process."""

    r: float
    a: float
    m1: float
    nu: float
    rho: float
    x0: tuple
    euler_dt: float
    kde_pilot: int = 10_000
    kde_seed: int = 12345
    clamps: ClampCounter = field(default_factory=ClampCounter, compare=False, repr=False)
    _kde_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        x0 = tuple(float(v) for v in self.x0)
        if len(x0) != 2:
            raise ValueError("SV state is (price, log-vol)")
        if x0[0] <= 0:
            raise ValueError("initial price must be positive")
        if self.a < 0:
            raise ValueError("a must be nonnegative")
        if abs(self.rho) > 1:
            raise ValueError("|rho| must be <= 1")
        if not self.euler_dt > 0:
            raise ValueError("euler_dt must be positive")
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return 2

    def steps_per_interval(self, grid: TimeGrid) -> int:
        ratio = grid.dt / self.euler_dt
        n = int(round(ratio))
        if n < 1 or not math.isclose(n, ratio, rel_tol=1e-9):
            raise ValueError("exercise spacing must be a positive integer multiple of euler_dt")
        return n

    def advance(self, x, dt, rng):
        ratio = dt / self.euler_dt
        n_sub = int(round(ratio))
        if n_sub < 1 or not math.isclose(n_sub, ratio, rel_tol=1e-9):
            raise ValueError("interval must be an integer number of Euler steps")
        x = np.asarray(x, dtype=float)
        for _ in range(n_sub):
            z = rng.standard_normal(x.shape)
            x, bad = sv_step(x, self, correlated_pair(z[..., 0], z[..., 1], self.rho))
            self.clamps.n += bad
        return x

    def transition_density(self, t: float, x) -> np.ndarray:
        """Gaussian product-kernel density estimate of X_t from pilot paths."""
        if t <= 0:
            raise ValueError("t must be positive")
        x = _as_states(x, 2)
        pilot, bw = self._pilot(t)
        out = np.empty(x.shape[0])
        norm = 1.0 / (pilot.shape[0] * 2 * math.pi * bw[0] * bw[1])
        for lo in range(0, x.shape[0], 2048):
            u = (x[lo:lo + 2048, None, :] - pilot[None, :, :]) / bw
            out[lo:lo + 2048] = norm * np.exp(-0.5 * np.sum(u * u, axis=2)).sum(axis=1)
        return out

    def _pilot(self, t):
        key = ("kde", round(t, 12))
        if key not in self._kde_cache:
            x = self._pilot_state(int(round(t / self.euler_dt)))
            n = x.shape[0]
            # Silverman's rule for a product kernel in d dimensions
            d = 2
            factor = (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))
            bw = np.maximum(x.std(axis=0, ddof=1) * factor, 1e-12)
            self._kde_cache[key] = (x, bw)
        return self._kde_cache[key]

    def _pilot_state(self, n_sub):
        # each Euler sub-step has its own seed, so the pilot cloud at a given
        # time does not depend on the order in which times are requested
        done = [k[1] for k in self._kde_cache if k[0] == "state" and k[1] <= n_sub]
        start = max(done, default=0)
        x = self._kde_cache[("state", start)] if start else np.tile(np.asarray(self.x0), (self.kde_pilot, 1))
        for i in range(start, n_sub):
            z = np.random.default_rng([self.kde_seed, i]).standard_normal(x.shape)
            x, _ = sv_step(x, self, correlated_pair(z[:, 0], z[:, 1], self.rho))
        if n_sub:
            self._kde_cache[("state", n_sub)] = x
        return x


def simulate_paths(model, grid: TimeGrid, k0: int, x0, n: int, rng) -> np.ndarray:
    """Simulate ``n`` trajectories observed at exercise dates ``k0, ..., n_exercise``.

    Returns an array of shape ``(n, n_exercise - k0 + 1, dim)``; index 0
    along the second axis is the starting state.
    """
    if not 0 <= k0 <= grid.n_exercise:
        raise ValueError("k0 is not on the grid")
    n_dates = grid.n_exercise - k0 + 1
    if n == 0:
        return np.empty((0, n_dates, model.dim))
    x = np.asarray(x0, dtype=float)
    x = np.broadcast_to(x.reshape(-1, model.dim), (n, model.dim)).copy()
    out = np.empty((n, n_dates, model.dim))
    out[:, 0] = x
    for j in range(1, n_dates):
        x = model.advance(x, grid.dt, rng)
        out[:, j] = x
    return out


def transition_density(model, t: float, x) -> np.ndarray:
    return model.transition_density(t, x)
