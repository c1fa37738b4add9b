"""Adaptive design growth at a single exercise date.

Starting from a small Latin hypercube, sites are added one batch at a time
at the candidate that maximises an acquisition score aimed at the
exercise boundary ``{C = h}``. The kernel stays frozen between periodic
refits, so each augmentation is a rank-one update.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import design as doe
from .engine import DateReport, fit_surrogate, integrated_loss, local_loss, sample_batches
from .rng import stream


@dataclass(frozen=True)
class SequentialConfig:
    """``n0`` initial sites grown to ``n_final``; ``n_candidates`` defaults to 100 per dimension.

    ``refit_every`` re-estimates the kernel after that many augmentations;
    0 keeps it frozen for the whole loop.
    """

    n0: int = 10
    n_final: Optional[int] = None
    n_candidates: Optional[int] = None
    acquisition: str = "zc-sur"
    refit_every: int = 10

    def __post_init__(self):
        if self.n0 < 3:
            raise ValueError("n0 must be >= 3")
        if self.n_final is not None and self.n_final < self.n0:
            raise ValueError("n_final must be >= n0")
        if self.n_candidates is not None and self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.acquisition not in ("zc", "zc-sur"):
            raise ValueError("acquisition must be 'zc' or 'zc-sur'")


def ei_zc(surrogate, x, h_val, weight):
    """Density-weighted local loss at the candidates ``x``."""
    m, v2 = surrogate.mean_var(np.atleast_2d(x))
    return np.atleast_1d(local_loss(m, np.sqrt(v2), h_val)) * weight


def ei_zcsur(surrogate, x, h_val, sigma2, weight):
    """Expected one-step drop in local loss if a candidate were sampled with noise ``sigma2``."""
    m, v2 = surrogate.mean_var(np.atleast_2d(x))
    sigma2 = np.broadcast_to(np.asarray(sigma2, float), v2.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        v2_next = np.where(np.isinf(sigma2), v2, v2 * sigma2 / (sigma2 + v2))
    v2_next = np.where(sigma2 + v2 > 0, v2_next, 0.0)
    gain = local_loss(m, np.sqrt(v2), h_val) - local_loss(m, np.sqrt(v2_next), h_val)
    return np.maximum(np.atleast_1d(gain), 0.0) * weight


def _noise_of(reg, noise):
    return reg.nugget_ if getattr(reg, "noise_mode_", "empirical") == "homoscedastic" else noise


def grow_design(policy, model, contract, grid, k, design_cfg, regression_cfg, seed):
    """Run the augmentation loop at date index ``k``.

    Returns ``(surrogate, report, n_transitions)``; ``report.trace`` holds
    one row ``(size, site, score, L_hat)`` per design size.
    """
    cfg = design_cfg.sequential or SequentialConfig()
    dom = design_cfg.domain
    M = design_cfg.reps
    n_final = cfg.n_final or design_cfg.n_sites
    n_cand = cfg.n_candidates or 100 * dom.dim
    t = grid.time(k)

    sites = doe.lhs(cfg.n0, dom, stream(seed, "design", k))
    prng = stream(seed, "payoff", k)
    mean, var, reps, n_trans = sample_batches(policy, model, k, sites, M, prng)
    mle_rng = stream(seed, "mle", k)
    sur = fit_surrogate(sites, mean, var, reps, t, contract, regression_cfg, mle_rng)
    L_hat = integrated_loss(sur, model, sites)[0]
    trace = [(sites.shape[0], None, np.nan, L_hat)]

    cand_rng = stream(seed, "candidates", k)
    aug_rng = stream(seed, "augment", k)
    for it in range(n_final - cfg.n0):
        cand = doe.lhs(n_cand, dom, cand_rng)
        h = contract.payoff(t, cand)
        w = model.transition_density(t, cand)
        if cfg.acquisition == "zc":
            score = ei_zc(sur, cand, h, w)
        else:
            # noise at an unsampled site is proxied by its nearest design site
            _, near = cKDTree(sites).query(cand)
            sig2 = _noise_of(sur.regressor, var[near] / reps[near])
            score = ei_zcsur(sur, cand, h, sig2, w)
        best = int(np.argmax(score))
        x_new = cand[best:best + 1]
        ym, yv, yr, nt = sample_batches(policy, model, k, x_new, M, aug_rng)
        n_trans += nt
        sites = np.vstack([sites, x_new])
        mean = np.append(mean, ym)
        var = np.append(var, yv)
        reps = np.append(reps, yr)
        if cfg.refit_every and (it + 1) % cfg.refit_every == 0:
            sur = fit_surrogate(sites, mean, var, reps, t, contract, regression_cfg, mle_rng)
        else:
            y_new = ym[0] - contract.payoff(t, x_new)[0] if sur.target == "timing" else ym[0]
            noise = _noise_of(sur.regressor, yv[0] / M)
            sur.regressor = sur.regressor.update(x_new[0], y_new, noise)
        L_hat = integrated_loss(sur, model, sites)[0]
        trace.append((sites.shape[0], x_new[0].copy(), float(score[best]), L_hat))

    L_hat, m, v, h, loss, weight = integrated_loss(sur, model, sites)
    report = DateReport(t, sites, mean, var, reps, m, v, h, loss, weight, L_hat, trace=trace)
    return sur, report, n_trans


def write_trace(path, reports):
    """Per-iteration CSV: date, design size, chosen site, acquisition value, L_hat."""
    d = reports[0].sites.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "k"] + [f"x{j + 1}" for j in range(d)] + ["score", "L_hat"])
        for r in sorted(reports, key=lambda r: r.t):
            for size, site, score, L in r.trace or []:
                coords = [""] * d if site is None else [repr(float(c)) for c in site]
                w.writerow([f"{r.t:.10g}", size] + coords + [repr(float(score)), repr(float(L))])
