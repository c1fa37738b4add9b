"""Discounted exercise payoffs ``h(t, x) = exp(-r t) * intrinsic(x)^+``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("put", "basket-put", "max-call")


@dataclass(frozen=True)
class ContractSpec:
    """Payoff family, strike and discount rate.

    ``put`` reads only the first state coordinate (the asset price), so it
    also serves two-factor models whose second coordinate is a volatility
    factor. ``dim`` optionally pins the expected state dimension.
    """

    family: str
    strike: float
    rate: float
    dim: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown contract family {self.family!r}; expected one of {FAMILIES}")
        if not self.strike > 0:
            raise ValueError("strike must be positive")

    def intrinsic(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim is not None and x.shape[-1] != self.dim:
            raise ValueError(f"{self.family} expects {self.dim} coordinates, got {x.shape[-1]}")
        if self.family == "put":
            v = self.strike - x[..., 0]
        elif self.family == "basket-put":
            v = self.strike - x.mean(axis=-1)
        else:
            v = x.max(axis=-1) - self.strike
        return np.maximum(v, 0.0)

    def payoff(self, t, x) -> np.ndarray:
        return np.exp(-self.rate * np.asarray(t, dtype=float)) * self.intrinsic(x)

    def itm(self, t, x) -> np.ndarray:
        return self.payoff(t, x) > 0


def payoff(c: ContractSpec, t, x):
    return c.payoff(t, x)


def itm_indicator(c: ContractSpec, t, x):
    return c.itm(t, x)
