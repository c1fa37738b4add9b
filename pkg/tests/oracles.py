"""Reference implementations the package is checked against.

Each one is written from first principles with plain loops or a different
numerical route than the code under test.
"""

import math

import numpy as np
from scipy import integrate
from scipy.stats import norm


def bermudan_put_binomial(s0, strike, r, sigma, maturity, steps, n_exercise):
    """Cox-Ross-Rubinstein tree; exercise allowed every ``steps / n_exercise`` steps."""
    if steps % n_exercise:
        raise ValueError("steps must be a multiple of n_exercise")
    dt = maturity / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    p = (math.exp(r * dt) - d) / (u - d)
    disc = math.exp(-r * dt)
    every = steps // n_exercise
    value = np.maximum(strike - s0 * u ** (steps - 2.0 * np.arange(steps + 1)), 0.0)
    for i in range(steps - 1, -1, -1):
        value = disc * (p * value[:-1] + (1 - p) * value[1:])
        if i > 0 and i % every == 0:
            spot = s0 * u ** (i - 2.0 * np.arange(i + 1))
            value = np.maximum(value, strike - spot)
    return float(value[0])


def black_scholes(s0, strike, r, sigma, maturity, delta=0.0, kind="put"):
    sq = sigma * math.sqrt(maturity)
    d1 = (math.log(s0 / strike) + (r - delta + 0.5 * sigma**2) * maturity) / sq
    d2 = d1 - sq
    fwd = s0 * math.exp(-delta * maturity)
    df = math.exp(-r * maturity)
    if kind == "call":
        return fwd * norm.cdf(d1) - strike * df * norm.cdf(d2)
    return strike * df * norm.cdf(-d2) - fwd * norm.cdf(-d1)


def local_loss_quadrature(m, v, h):
    """E[(Z - h)^- ] or E[(Z - h)^+] for Z ~ N(m, v^2), whichever side is the wrong decision.

    The loss of acting on the sign of ``m - h`` when the truth is Z is the
    expected overshoot on the other side of ``h``.
    """
    if v == 0:
        return 0.0
    d = abs(m - h)
    f = lambda z: z * norm.pdf(z, loc=d, scale=v)
    val, _ = integrate.quad(f, -np.inf, 0.0, epsabs=1e-13, epsrel=1e-12)
    return -val


def sqexp_cov(x, xp, s2, theta):
    out = np.empty((len(x), len(xp)))
    for i, a in enumerate(x):
        for j, b in enumerate(xp):
            out[i, j] = s2 * math.exp(-0.5 * sum(((ai - bi) / t) ** 2 for ai, bi, t in zip(a, b, theta)))
    return out


def matern52_cov(x, xp, s2, theta):
    out = np.empty((len(x), len(xp)))
    for i, a in enumerate(x):
        for j, b in enumerate(xp):
            rho = math.sqrt(sum(((ai - bi) / t) ** 2 for ai, bi, t in zip(a, b, theta)))
            q = math.sqrt(5.0) * rho
            out[i, j] = s2 * (1 + q + q * q / 3.0) * math.exp(-q)
    return out


def kriging_dense(cov, X, y, noise, Xs):
    """Posterior mean and variance by explicit inversion, no factorisations."""
    K = cov(X, X) + np.diag(noise)
    Kinv = np.linalg.inv(K)
    ks = cov(Xs, X)
    mean = ks @ Kinv @ y
    var = np.diag(cov(Xs, Xs)) - np.einsum("ij,jk,ik->i", ks, Kinv, ks)
    return mean, var


def two_pass_stats(rows):
    """Mean and unbiased variance per row with compensated sums."""
    means, variances = [], []
    for row in rows:
        row = [float(v) for v in row]
        mu = math.fsum(row) / len(row)
        means.append(mu)
        variances.append(math.fsum((v - mu) ** 2 for v in row) / (len(row) - 1))
    return np.array(means), np.array(variances)


def van_der_corput(i, base):
    out, f = 0.0, 1.0 / base
    while i:
        i, digit = divmod(i, base)
        out += digit * f
        f /= base
    return out


def halton_points(n, bases, start=1):
    return np.array([[van_der_corput(i, b) for b in bases] for i in range(start, start + n)])


# Direction numbers for the first three Sobol coordinates: (degree s,
# polynomial coefficients a, initial m values).
_SOBOL_DIRS = [None, (1, 0, [1]), (2, 1, [1, 3])]


def sobol_points(n, dim, bits=30, start=1):
    """Gray-code Sobol construction: XOR of the direction numbers selected by gray(i)."""
    v = np.zeros((dim, bits), dtype=np.int64)
    for j in range(dim):
        if j == 0:
            m = [1] * bits
        else:
            s, a, m = _SOBOL_DIRS[j]
            m = list(m)
            for k in range(s, bits):
                new = m[k - s] ^ (m[k - s] << s)
                for q in range(1, s):
                    if (a >> (s - 1 - q)) & 1:
                        new ^= m[k - q] << q
                m.append(new)
        for k in range(bits):
            v[j, k] = m[k] << (bits - 1 - k)
    out = np.empty((n, dim))
    for row, i in enumerate(range(start, start + n)):
        for j in range(dim):
            x, k, ii = 0, 0, i ^ (i >> 1)
            while ii:
                if ii & 1:
                    x ^= int(v[j, k])
                ii >>= 1
                k += 1
            out[row, j] = x / 2.0**bits
    return out
