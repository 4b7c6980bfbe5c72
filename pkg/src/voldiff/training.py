"""Training loop for the conditional denoiser.

One optimisation step draws a diffusion step and a noise field per sample,
scores the noise prediction (plain MSE) and adds an SNR-weighted arbitrage
penalty evaluated on the denoised surface mapped back to volatility space.
Gradients are clipped by global norm, AdamW updates the live weights and the
EMA copy follows.  :func:`fit` runs epochs with plateau learning-rate decay,
early stopping and best-on-validation checkpointing.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import gridmath as gm
from ._io import atomic_write_text, fmt
from .arbitrage import PricingContext, penalty_conv
from .dataprep import ConditioningConfig, NormalizationStats, PreparedData, ScalarStats, denormalize
from .diffusion import COSINE_OFFSET, NoiseSchedule, build_cosine_schedule, denoised_estimate, forward_sample, snr_weight
from .errors import ConfigError, TrainingDivergenceError
from .grid import DEFAULT_GRID, GridSpec
from .model import ParamStore, UNetConfig, param_init, unet_forward, unet_infer

CHECKPOINT_VERSION = 1
LOSS_CURVE_COLUMNS = ("epoch", "train_loss", "train_mse", "train_arb", "val_loss", "lr")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.01
    lam_cal: Optional[float] = None  # per-penalty weights; None means "use lam"
    lam_spread: Optional[float] = None
    lam_fly: Optional[float] = None
    epochs: int = 2000
    batch: int = 64
    n_steps: int = 500
    lr0: float = 3e-4
    plateau_factor: float = 0.8
    plateau_patience: int = 300
    lr_min: float = 1e-6
    grad_clip: float = 0.15
    ema_decay: float = 0.995
    early_stop_patience: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lam", "lam_cal", "lam_spread", "lam_fly", "weight_decay"):
            v = getattr(self, name)
            if v is not None and not (v >= 0):
                raise ConfigError(f"{name} must be non-negative")
        if not 0 < self.ema_decay < 1:
            raise ConfigError("ema_decay must lie strictly between 0 and 1")
        if not 0 < self.lr_min <= self.lr0:
            raise ConfigError("need 0 < lr_min <= lr0")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        for name in ("epochs", "batch", "n_steps", "plateau_patience", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive")

    @property
    def penalty_weights(self) -> tuple[float, float, float]:
        def pick(v):
            return self.lam if v is None else v

        return pick(self.lam_cal), pick(self.lam_spread), pick(self.lam_fly)


# ------------------------------------------------------------------- optimizer


class AdamW:
    """Adam with decoupled weight decay, keyed by parameter name."""

    def __init__(self, shapes: Mapping[str, tuple], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = OrderedDict((k, np.zeros(s)) for k, s in shapes.items())
        self.v = OrderedDict((k, np.zeros(s)) for k, s in shapes.items())
        self.step_count = 0

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], cfg: TrainConfig) -> "AdamW":
        return cls({k: v.shape for k, v in params.items()}, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)

    def update(self, params: "OrderedDict[str, np.ndarray]", grads: Mapping[str, np.ndarray], lr: float) -> None:
        """Apply one step in place."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple["OrderedDict[str, np.ndarray]", float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns (grads, norm before)."""
    norm = gm.global_norm(grads.values())
    if not math.isfinite(norm):
        raise TrainingDivergenceError("gradient", norm)
    scale = max_norm / norm if norm > max_norm else 1.0
    return OrderedDict((k, g * scale) for k, g in grads.items()), norm


def ema_update(ema: Mapping[str, np.ndarray], params: Mapping[str, np.ndarray], decay: float) -> "OrderedDict[str, np.ndarray]":
    """decay * ema + (1 - decay) * params, per tensor."""
    out = OrderedDict()
    for k, p in params.items():
        if ema[k].shape != p.shape:
            raise ValueError(f"EMA shape mismatch for {k}")
        out[k] = decay * ema[k] + (1.0 - decay) * p
    return out


def lr_plateau(history: Sequence[float], lr: float, cfg: TrainConfig = TrainConfig()) -> float:
    """Learning rate after the latest validation loss in ``history``.

    Epochs without a strict improvement on the best value so far are counted;
    every ``plateau_patience`` of them multiplies the rate by
    ``plateau_factor`` (the count restarts after each reduction), never going
    below ``lr_min``.
    """
    if len(history) == 0:
        raise ValueError("lr_plateau needs at least one validation loss")
    best_idx = 0
    for i, v in enumerate(history):
        if v < history[best_idx]:
            best_idx = i
    stale = len(history) - 1 - best_idx
    if stale > 0 and stale % cfg.plateau_patience == 0:
        return max(lr * cfg.plateau_factor, cfg.lr_min)
    return lr


# ------------------------------------------------------------------------ loss


@dataclass
class Batch:
    """Training targets with their conditioning, already normalized."""

    x0: np.ndarray  # (B, 9, 9)
    context: np.ndarray  # (B, 3, 9, 9)
    scalars: np.ndarray  # (B, 5)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.context = np.asarray(self.context, dtype=np.float64)
        self.scalars = np.asarray(self.scalars, dtype=np.float64)
        if self.x0.shape[0] == 0:
            raise ValueError("empty batch")
        if not (self.x0.shape[0] == self.context.shape[0] == self.scalars.shape[0]):
            raise ValueError("batch components disagree on batch size")

    def __len__(self) -> int:
        return self.x0.shape[0]

    @classmethod
    def from_data(cls, data: PreparedData, targets) -> "Batch":
        return cls(*data.training_arrays(targets))

    def network_input(self, x_t: np.ndarray) -> np.ndarray:
        return np.concatenate([self.context, x_t[:, None]], axis=1)


@dataclass(frozen=True)
class LossParts:
    loss: float
    mse: float
    arb: float  # batch mean of w_SNR * Phi, before the lambda weights


def draw_noise(rng: np.random.Generator, size: int, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample steps t ~ U{1..n} and noise fields eps ~ N(0, I)."""
    t = rng.integers(1, n_steps + 1, size=size)
    eps = rng.standard_normal((size, 9, 9))
    return t, eps


def composite_loss(
    batch: Batch,
    params: Mapping,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    stats: NormalizationStats,
    t: np.ndarray,
    eps: np.ndarray,
    model_cfg: UNetConfig = UNetConfig(),
    grid: GridSpec = DEFAULT_GRID,
    pricing: PricingContext = PricingContext(),
    noise_fn: Callable | None = None,
) -> tuple[gm.Array, LossParts]:
    """Noise MSE plus lambda-weighted, SNR-weighted arbitrage penalty.

    ``params`` should be tracked arrays when called under a tape.
    ``noise_fn(net_input, t)`` replaces the network (used by tests).
    """
    t = np.asarray(t)
    x_t = forward_sample(batch.x0, t, eps, schedule)
    net_in = batch.network_input(x_t)
    if noise_fn is None:
        eps_hat = unet_forward(net_in, t, batch.scalars, params, model_cfg)
    else:
        eps_hat = gm.as_array(noise_fn(net_in, t))
    eps_hat = gm.reshape(eps_hat, (len(batch), 9, 9))

    diff = eps_hat - eps
    mse = gm.mean(gm.asum(gm.square(diff), axis=(1, 2)))
    if not math.isfinite(mse.item()):
        raise TrainingDivergenceError("mse", mse.item())

    w = snr_weight(t, schedule)
    lam_c, lam_s, lam_f = cfg.penalty_weights
    if lam_c == lam_s == lam_f == 0.0:
        arb_value = 0.0
        loss = mse
    else:
        x0_hat = denoised_estimate(x_t, eps_hat, t, schedule)
        pen = penalty_conv(denormalize(x0_hat, stats), grid, pricing)
        phi = pen.p1 + pen.p2 + pen.p3
        arb_value = float(np.mean(w * phi.data))
        weighted = gm.mean(w * (pen.p1 * lam_c + pen.p2 * lam_s + pen.p3 * lam_f))
        if not math.isfinite(weighted.item()):
            raise TrainingDivergenceError("arbitrage", weighted.item())
        loss = mse + weighted
    return loss, LossParts(loss.item(), mse.item(), arb_value)


@dataclass(frozen=True)
class StepRecord:
    loss: float
    mse: float
    arb: float
    grad_norm: float


def train_step(
    batch: Batch,
    store: ParamStore,
    opt: AdamW,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    rng: np.random.Generator,
    stats: NormalizationStats,
    lr: float,
    model_cfg: UNetConfig = UNetConfig(),
    grid: GridSpec = DEFAULT_GRID,
    pricing: PricingContext = PricingContext(),
) -> StepRecord:
    """Loss, gradients, clipping, optimizer update, then EMA update (in place)."""
    t, eps = draw_noise(rng, len(batch), schedule.n)
    tracked = store.tracked()
    with gm.Tape() as tape:
        loss, parts = composite_loss(batch, tracked, schedule, cfg, stats, t, eps, model_cfg, grid, pricing)
    grads = gm.backward(tape, loss)
    raw = OrderedDict((k, grads[a]) for k, a in tracked.items())
    clipped, norm = clip_gradients(raw, cfg.grad_clip)
    opt.update(store.params, clipped, lr)
    store.ema = ema_update(store.ema, store.params, cfg.ema_decay)
    return StepRecord(parts.loss, parts.mse, parts.arb, norm)


def validation_loss(
    batch: Batch,
    params: Mapping[str, np.ndarray],
    schedule: NoiseSchedule,
    t: np.ndarray,
    eps: np.ndarray,
    model_cfg: UNetConfig = UNetConfig(),
) -> float:
    """Noise MSE only, evaluated without a tape."""
    x_t = forward_sample(batch.x0, t, eps, schedule)
    eps_hat = unet_infer(batch.network_input(x_t), t, batch.scalars, params, model_cfg)[:, 0]
    return float(np.mean(np.sum((eps_hat - eps) ** 2, axis=(1, 2))))


# ------------------------------------------------------------------ checkpoint


@dataclass
class Checkpoint:
    train_cfg: TrainConfig
    model_cfg: UNetConfig
    stats: NormalizationStats
    scalar_stats: ScalarStats
    conditioning: ConditioningConfig
    pricing: PricingContext
    params: ParamStore
    epoch: int
    best_val: float
    schedule_offset: float = COSINE_OFFSET

    @property
    def schedule(self) -> NoiseSchedule:
        return build_cosine_schedule(self.train_cfg.n_steps, self.schedule_offset)

    def to_dict(self) -> dict:
        def tensors(d):
            return {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()} for k, v in d.items()}

        return {
            "version": CHECKPOINT_VERSION,
            "cfg": {
                "train": asdict(self.train_cfg),
                "model": asdict(self.model_cfg),
                "conditioning": asdict(self.conditioning),
                "pricing": asdict(self.pricing),
            },
            "schedule": {"kind": "cosine", "n": self.train_cfg.n_steps, "offset": self.schedule_offset},
            "stats": self.stats.to_dict(),
            "scalar_stats": self.scalar_stats.to_dict(),
            "params": tensors(self.params.params),
            "ema_params": tensors(self.params.ema),
            "epoch": self.epoch,
            "best_val": self.best_val if math.isfinite(self.best_val) else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")

        def tensors(src):
            return OrderedDict(
                (k, np.array(v["values"], dtype=np.float64).reshape(v["shape"])) for k, v in src.items()
            )

        cfg = d["cfg"]
        model_cfg = UNetConfig(**cfg["model"])
        if d["schedule"].get("kind") != "cosine":
            raise ValueError("only the cosine schedule is supported")
        best = d["best_val"]
        return cls(
            train_cfg=TrainConfig(**cfg["train"]),
            model_cfg=model_cfg,
            stats=NormalizationStats.from_dict(d["stats"]),
            scalar_stats=ScalarStats.from_dict(d["scalar_stats"]),
            conditioning=ConditioningConfig(**cfg["conditioning"]),
            pricing=PricingContext(**cfg["pricing"]),
            params=ParamStore(tensors(d["params"]), tensors(d["ema_params"])),
            epoch=int(d["epoch"]),
            best_val=math.inf if best is None else float(best),
            schedule_offset=float(d["schedule"]["offset"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.dumps())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------------- fit


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_mse: float
    train_arb: float
    val_loss: float
    lr: float


@dataclass
class FitResult:
    checkpoint: Checkpoint  # best validation EMA weights
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False


def write_loss_curve(path, history: Sequence[EpochRecord]) -> None:
    lines = [",".join(LOSS_CURVE_COLUMNS)]
    for r in history:
        lines.append(
            ",".join([str(r.epoch), fmt(r.train_loss), fmt(r.train_mse), fmt(r.train_arb), fmt(r.val_loss), fmt(r.lr)])
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def fit(
    data: PreparedData,
    cfg: TrainConfig = TrainConfig(),
    model_cfg: UNetConfig = UNetConfig(),
    pricing: PricingContext = PricingContext(),
    grid: GridSpec = DEFAULT_GRID,
    init: ParamStore | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> FitResult:
    """Train on the training split, select on validation MSE of the EMA weights.

    On divergence the raised :class:`TrainingDivergenceError` carries the best
    checkpoint seen so far as ``err.checkpoint``.
    """
    train_idx = data.targets("train")
    val_idx = data.targets("validation")
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("training and validation splits must both contain warmed-up targets")

    schedule = build_cosine_schedule(cfg.n_steps)
    store = init.copy() if init is not None else param_init(model_cfg, cfg.seed)
    opt = AdamW.for_params(store.params, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    val_batch = Batch.from_data(data, val_idx)
    val_t, val_eps = draw_noise(np.random.default_rng([cfg.seed, 2]), len(val_batch), schedule.n)

    def snapshot(epoch, best_val):
        return Checkpoint(cfg, model_cfg, data.stats, data.scalar_stats, data.conditioning, pricing,
                          store.copy(), epoch, best_val)

    best = snapshot(0, math.inf)
    history: list[EpochRecord] = []
    val_history: list[float] = []
    lr = cfg.lr0
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        tot = np.zeros(3)
        try:
            for start in range(0, order.size, cfg.batch):
                chunk = order[start : start + cfg.batch]
                rec = train_step(Batch.from_data(data, chunk), store, opt, schedule, cfg, rng,
                                 data.stats, lr, model_cfg, grid, pricing)
                tot += len(chunk) * np.array([rec.loss, rec.mse, rec.arb])
            val = validation_loss(val_batch, store.ema, schedule, val_t, val_eps, model_cfg)
            if not math.isfinite(val):
                raise TrainingDivergenceError("validation", val)
        except TrainingDivergenceError as err:
            err.checkpoint = best
            err.history = history
            raise
        tot /= order.size
        record = EpochRecord(epoch, tot[0], tot[1], tot[2], val, lr)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if val < best.best_val:
            best = snapshot(epoch, val)
            since_best = 0
        else:
            since_best += 1
        val_history.append(val)
        lr = lr_plateau(val_history, lr, cfg)
        if since_best >= cfg.early_stop_patience:
            return FitResult(best, history, stopped_early=True)
    return FitResult(best, history)
