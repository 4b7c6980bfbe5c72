"""Static-arbitrage penalties on implied-volatility surfaces.

Surfaces are converted to Black-Scholes call prices divided by spot,
``c(m, tau)``, and three hinge penalties are summed over the grid:

* ``p1`` calendar spread: call price falling with tenor,
* ``p2`` call spread: call price rising with moneyness,
* ``p3`` butterfly: loss of convexity in moneyness.

:func:`penalty_loops` is the direct nested-loop reference.  :func:`penalty_conv`
computes the same quantities with fixed difference kernels through
:mod:`voldiff.gridmath`, so it can sit inside a differentiable loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import ndtr

from . import gridmath as gm
from .errors import DomainError
from .grid import DEFAULT_GRID, GridSpec

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TINY_STD = 1e-12


@dataclass(frozen=True)
class PricingContext:
    rate: float = 0.02
    dividend: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.rate) and math.isfinite(self.dividend)):
            raise ValueError("pricing context must be finite")


@dataclass(frozen=True)
class PenaltyBreakdown:
    """p1 (calendar), p2 (call spread), p3 (butterfly).

    Fields are floats from :func:`penalty_loops`; from :func:`penalty_conv`
    they are :class:`gridmath.Array` values (one entry per surface).
    """

    p1: Any
    p2: Any
    p3: Any

    @property
    def total(self):
        return self.p1 + self.p2 + self.p3

    def values(self) -> tuple[float, float, float, float]:
        def f(x):
            return float(x.item() if isinstance(x, gm.Array) else x)

        return f(self.p1), f(self.p2), f(self.p3), f(self.total)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def bs_relative_call(m: float, tau: float, sigma: float, ctx: PricingContext = PricingContext()) -> float:
    """Black-Scholes call price over spot at moneyness ``m = K/S``."""
    if not (m > 0 and tau > 0 and sigma > 0):
        raise DomainError(f"bs_relative_call needs positive inputs, got m={m}, tau={tau}, sigma={sigma}")
    disc_q = math.exp(-ctx.dividend * tau)
    disc_r = math.exp(-ctx.rate * tau)
    std = sigma * math.sqrt(tau)
    if std < _TINY_STD:
        return max(0.0, disc_q - m * disc_r)
    d1 = (-math.log(m) + (ctx.rate - ctx.dividend + 0.5 * sigma * sigma) * tau) / std
    d2 = d1 - std
    return disc_q * normal_cdf(d1) - m * disc_r * normal_cdf(d2)


def _check_positive(iv: np.ndarray) -> None:
    bad = np.argwhere(~(iv > 0))
    if bad.size:
        raise DomainError(f"implied volatility must be positive; offending cell {tuple(bad[0])}")


def relative_call_surface(iv, grid: GridSpec = DEFAULT_GRID, ctx: PricingContext = PricingContext()) -> np.ndarray:
    """Vectorized relative call prices for surfaces shaped (..., 9, 9)."""
    return _price_and_vega(np.asarray(iv, dtype=np.float64), grid, ctx)[0]


def _price_and_vega(iv: np.ndarray, grid: GridSpec, ctx: PricingContext):
    _check_positive(iv)
    m, tau = grid.mesh()
    disc_q = np.exp(-ctx.dividend * tau)
    disc_r = np.exp(-ctx.rate * tau)
    std = iv * np.sqrt(tau)
    tiny = std < _TINY_STD
    safe = np.where(tiny, 1.0, std)
    d1 = (-np.log(m) + (ctx.rate - ctx.dividend + 0.5 * iv * iv) * tau) / safe
    d2 = d1 - safe
    price = disc_q * ndtr(d1) - m * disc_r * ndtr(d2)
    price = np.where(tiny, np.maximum(0.0, disc_q - m * disc_r), price)
    vega = np.where(tiny, 0.0, disc_q * _INV_SQRT_2PI * np.exp(-0.5 * d1 * d1) * np.sqrt(tau))
    return price, vega


def relative_call(iv, grid: GridSpec = DEFAULT_GRID, ctx: PricingContext = PricingContext()) -> gm.Array:
    """Differentiable version of :func:`relative_call_surface`."""
    iv = gm.as_array(iv)
    price, vega = _price_and_vega(iv.data, grid, ctx)
    return gm.primitive(price, (iv,), lambda g: (g * vega,))


def penalty_loops_prices(c, grid: GridSpec = DEFAULT_GRID) -> PenaltyBreakdown:
    """Reference penalties from a 9x9 call-price surface, written as plain loops."""
    c = [[float(v) for v in row] for row in np.asarray(c)]
    m = [float(v) for v in grid.moneyness]
    tau = [float(v) for v in grid.tenors]
    n_m, n_t = len(m), len(tau)

    def pos(x):
        return x if x > 0.0 else 0.0

    p1 = 0.0
    for i in range(n_m):
        for j in range(n_t - 1):
            p1 += pos((c[i][j] - c[i][j + 1]) / (tau[j + 1] - tau[j]))
    p2 = 0.0
    for i in range(n_m - 1):
        for j in range(n_t):
            p2 += pos((c[i + 1][j] - c[i][j]) / (m[i + 1] - m[i]))
    p3 = 0.0
    for i in range(1, n_m - 1):
        for j in range(n_t):
            left = (c[i][j] - c[i - 1][j]) / (m[i] - m[i - 1])
            right = (c[i + 1][j] - c[i][j]) / (m[i + 1] - m[i])
            p3 += pos(left - right)
    return PenaltyBreakdown(p1, p2, p3)


def penalty_loops(iv, grid: GridSpec = DEFAULT_GRID, ctx: PricingContext = PricingContext()) -> PenaltyBreakdown:
    iv = np.asarray(iv, dtype=np.float64)
    _check_positive(iv)
    c = [
        [bs_relative_call(grid.moneyness[i], grid.tenors[j], float(iv[i, j]), ctx) for j in range(iv.shape[1])]
        for i in range(iv.shape[0])
    ]
    return penalty_loops_prices(c, grid)


# integer-valued difference kernels, laid out as (out, in, kh, kw)
CALENDAR_KERNEL = np.array([[[[1.0, -1.0]]]])  # c[i, j] - c[i, j+1]
MONEYNESS_DIFF_KERNEL = np.array([[[[-1.0], [1.0]]]])  # c[i+1, j] - c[i, j]
SLOPE_DROP_KERNEL = np.array([[[[1.0], [-1.0]]]])  # s[i-1, j] - s[i, j]


def penalty_conv_prices(c, grid: GridSpec = DEFAULT_GRID) -> PenaltyBreakdown:
    """Convolutional penalties from call prices shaped (9,9) or (N,9,9)."""
    c = gm.as_array(c)
    single = c.ndim == 2
    x = gm.reshape(c, (1 if single else c.shape[0], 1) + c.shape[-2:])
    dtau = np.diff(grid.tau)[None, None, None, :]
    dm = np.diff(grid.m)[None, None, :, None]

    cal = gm.conv2d(x, CALENDAR_KERNEL) / dtau
    slope = gm.conv2d(x, MONEYNESS_DIFF_KERNEL) / dm
    fly = gm.conv2d(slope, SLOPE_DROP_KERNEL)

    def total(t):
        s = gm.asum(gm.relu(t), axis=(1, 2, 3))
        return gm.reshape(s, ()) if single else s

    return PenaltyBreakdown(total(cal), total(slope), total(fly))


def penalty_conv(iv, grid: GridSpec = DEFAULT_GRID, ctx: PricingContext = PricingContext()) -> PenaltyBreakdown:
    """Differentiable penalties from IV surfaces shaped (9,9) or (N,9,9)."""
    return penalty_conv_prices(relative_call(iv, grid, ctx), grid)


def total_penalty(iv, grid: GridSpec = DEFAULT_GRID, ctx: PricingContext = PricingContext()) -> np.ndarray:
    """Plain-numpy total penalty per surface, for metrics and audits."""
    return np.asarray(penalty_conv(np.asarray(iv, dtype=np.float64), grid, ctx).total.data)
