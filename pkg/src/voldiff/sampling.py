"""Conditional ancestral sampling of implied-volatility surfaces.

Each chain owns a counter-based generator derived from ``(seed, stream,
chain index)``, so a chain's random draws do not depend on how many other
chains run beside it or in which order batches are processed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_text, fmt
from .arbitrage import total_penalty
from .dataprep import SURFACE_COLUMNS, ConditioningBundle, denormalize
from .diffusion import reverse_step
from .errors import DomainError, SamplingDivergenceError
from .grid import DEFAULT_GRID, GridSpec
from .model import unet_infer
from .training import Checkpoint


@dataclass
class SampleBatch:
    date: str
    bundle: ConditioningBundle
    surfaces: np.ndarray  # (k, 9, 9) implied volatilities
    phi: np.ndarray  # (k,) total arbitrage penalty per surface
    seed: int

    def __post_init__(self):
        if self.surfaces.ndim != 3 or self.surfaces.shape[0] < 1:
            raise ValueError("a sample batch needs at least one surface")
        if np.any(~(self.surfaces > 0)):
            raise DomainError("generated surfaces must be strictly positive")

    @property
    def k(self) -> int:
        return self.surfaces.shape[0]

    def mean_surface(self) -> np.ndarray:
        return self.surfaces.mean(axis=0)


def chain_generators(seed: int, k: int, stream: int = 0) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, i]))) for i in range(k)]


def run_chains(
    bundle: ConditioningBundle,
    checkpoint: Checkpoint,
    gens: Sequence[np.random.Generator],
    use_live_weights: bool = False,
    noise_fn: Callable[[np.ndarray, int], np.ndarray] | None = None,
    zero_noise: bool = False,
    x_init: np.ndarray | None = None,
) -> np.ndarray:
    """Reverse chains t = n..1; returns normalized surfaces shaped (k, 9, 9).

    ``noise_fn(net_input, t)`` substitutes the network and ``zero_noise``
    drops the stochastic term at every step; both exist for diagnostics.
    """
    schedule = checkpoint.schedule
    params = checkpoint.params.params if use_live_weights else checkpoint.params.ema
    k = len(gens)
    if x_init is None:
        x = np.stack([g.standard_normal((9, 9)) for g in gens])
    else:
        x = np.array(x_init, dtype=np.float64).reshape(k, 9, 9)
    context = np.broadcast_to(bundle.channels[:3], (k, 3, 9, 9))
    scalars = np.broadcast_to(bundle.scalars, (k, bundle.scalars.shape[0]))
    for t in range(schedule.n, 0, -1):
        net_in = np.concatenate([context, x[:, None]], axis=1)
        if noise_fn is None:
            eps_hat = unet_infer(net_in, t, scalars, params, checkpoint.model_cfg)[:, 0]
        else:
            eps_hat = np.asarray(noise_fn(net_in, t), dtype=np.float64).reshape(k, 9, 9)
        if t > 1 and not zero_noise:
            z = np.stack([g.standard_normal((9, 9)) for g in gens])
        else:
            z = np.zeros_like(x)
        x = reverse_step(x, eps_hat, t, z, schedule)
        if not np.all(np.isfinite(x)):
            raise SamplingDivergenceError(t)
    return x


def sample_batch(
    bundle: ConditioningBundle,
    checkpoint: Checkpoint,
    k: int = 100,
    seed: int = 0,
    stream: int = 0,
    date: str | None = None,
    grid: GridSpec = DEFAULT_GRID,
    use_live_weights: bool = False,
) -> SampleBatch:
    """``k`` independent conditional surfaces in volatility units."""
    if k < 1:
        raise ValueError("k must be at least 1")
    z = run_chains(bundle, checkpoint, chain_generators(seed, k, stream), use_live_weights)
    surfaces = denormalize(z, checkpoint.stats)
    phi = total_penalty(surfaces, grid, checkpoint.pricing)
    return SampleBatch(bundle.date if date is None else date, bundle, surfaces, np.atleast_1d(phi), seed)


def sample_one(bundle: ConditioningBundle, checkpoint: Checkpoint, seed: int = 0, stream: int = 0, **kw) -> np.ndarray:
    return sample_batch(bundle, checkpoint, 1, seed, stream, **kw).surfaces[0]


SAMPLE_COLUMNS = ["date", "sample_id"] + SURFACE_COLUMNS


def format_samples(batches: Sequence[SampleBatch]) -> str:
    lines = [",".join(SAMPLE_COLUMNS)]
    for b in batches:
        for i, s in enumerate(b.surfaces):
            lines.append(",".join([b.date, str(i)] + [fmt(v) for v in s.reshape(-1)]))
    return "\n".join(lines) + "\n"


def write_samples_csv(path, batches: Sequence[SampleBatch]) -> None:
    atomic_write_text(path, format_samples(batches))
