"""Variance-preserving DDPM mathematics on normalized surfaces.

Steps are 1-based: ``t = 1..n``.  Index 0 of the schedule arrays holds the
``alpha_bar_0 = 1`` boundary so ``schedule.alpha_bar[t]`` reads naturally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gridmath as gm
from .errors import ContractError

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
SNR_EPS = 1e-8
CLIP_RANGE = 5.0
SURFACE_DIM = 81


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    n: int
    beta: np.ndarray  # length n + 1, beta[0] = 0
    alpha_bar: np.ndarray  # length n + 1, alpha_bar[0] = 1

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    def check_step(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any((t < 1) | (t > self.n)):
            raise IndexError(f"diffusion step out of range 1..{self.n}: {t}")
        return t

    def posterior_variance(self, t) -> np.ndarray:
        """beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t."""
        t = self.check_step(t)
        return (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, NoiseSchedule)
            and self.n == other.n
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.alpha_bar, other.alpha_bar)
        )


def _cosine_f(t: np.ndarray, n: int, s: float) -> np.ndarray:
    return np.cos((t / n + s) / (1.0 + s) * math.pi / 2.0) ** 2


def build_cosine_schedule(n: int = 500, s: float = COSINE_OFFSET) -> NoiseSchedule:
    if n < 2:
        raise ValueError("schedule needs at least 2 steps")
    steps = np.arange(n + 1, dtype=np.float64)
    f = _cosine_f(steps, n, s)
    abar_raw = f / f[0]
    beta = np.empty(n + 1)
    beta[0] = 0.0
    beta[1:] = np.minimum(1.0 - abar_raw[1:] / abar_raw[:-1], MAX_BETA)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(n=n, beta=beta, alpha_bar=alpha_bar)


def _bcast(v: np.ndarray, like_ndim: int) -> np.ndarray:
    """Reshape per-sample coefficients (N,) to broadcast against (N, ...)."""
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (like_ndim - v.ndim))


def forward_sample(x0, t, eps, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` scalar or per-sample."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {x0.shape}")
    t = schedule.check_step(t)
    abar = _bcast(schedule.alpha_bar[t], x0.ndim)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def snr_weight(t, schedule: NoiseSchedule, eps_stab: float = SNR_EPS):
    t = schedule.check_step(t)
    abar = schedule.alpha_bar[t]
    return abar / (1.0 - abar + eps_stab)


def denoised_estimate(x_t, eps_hat, t, schedule: NoiseSchedule, clip: float | None = CLIP_RANGE):
    """Recover x0 from a noise prediction, clipped to ``[-clip, clip]``.

    ``eps_hat`` may be a :class:`gridmath.Array`, in which case the result is
    differentiable with respect to it.
    """
    t = schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    abar = _bcast(schedule.alpha_bar[t], x_t.ndim)
    if isinstance(eps_hat, gm.Array):
        x0 = (x_t - eps_hat * np.sqrt(1.0 - abar)) / np.sqrt(abar)
        return x0 if clip is None else gm.clip(x0, -clip, clip)
    x0 = (x_t - np.sqrt(1.0 - abar) * np.asarray(eps_hat)) / np.sqrt(abar)
    return x0 if clip is None else np.clip(x0, -clip, clip)


def reverse_mean(x_t, eps_hat, t, schedule: NoiseSchedule) -> np.ndarray:
    t = schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    alpha = _bcast(schedule.alpha[t], x_t.ndim)
    beta = _bcast(schedule.beta[t], x_t.ndim)
    abar = _bcast(schedule.alpha_bar[t], x_t.ndim)
    return (x_t - beta / np.sqrt(1.0 - abar) * np.asarray(eps_hat)) / np.sqrt(alpha)


def reverse_step(x_t, eps_hat, t: int, z, schedule: NoiseSchedule, clip: float | None = CLIP_RANGE) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} with a clipped mean."""
    t = int(schedule.check_step(t))
    z = np.asarray(z, dtype=np.float64)
    if t == 1 and np.any(z != 0):
        raise ContractError("the final reverse step (t=1) must use z = 0")
    mu = reverse_mean(x_t, eps_hat, t, schedule)
    if clip is not None:
        mu = np.clip(mu, -clip, clip)
    return mu + math.sqrt(float(schedule.posterior_variance(t))) * z


def oracle_noise(x_t, x0, t, schedule: NoiseSchedule) -> np.ndarray:
    """The exact noise that maps ``x0`` to ``x_t`` at step ``t``."""
    t = schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    abar = _bcast(schedule.alpha_bar[t], x_t.ndim)
    return (x_t - np.sqrt(abar) * np.asarray(x0)) / np.sqrt(1.0 - abar)


def terminal_diagnostic(x0_batch, schedule: NoiseSchedule, dim: int = SURFACE_DIM) -> tuple[float, float]:
    """Expected KL(q(x_n | x0) || N(0, I)) over the batch, and its Pinsker TV bound."""
    x0 = np.asarray(x0_batch, dtype=np.float64)
    if x0.size == 0:
        raise ValueError("terminal diagnostic needs a non-empty batch")
    x0 = x0.reshape(x0.shape[0], -1) if x0.ndim > 1 else x0.reshape(1, -1)
    mean_sq = float(np.mean(np.sum(x0 * x0, axis=1)))
    return terminal_kl(float(schedule.alpha_bar[schedule.n]), mean_sq, dim)


def terminal_kl(abar_n: float, mean_sq_norm: float, dim: int = SURFACE_DIM) -> tuple[float, float]:
    kl = 0.5 * dim * (-math.log1p(-abar_n) - abar_n) + 0.5 * abar_n * mean_sq_norm
    return kl, math.sqrt(kl / 2.0)
