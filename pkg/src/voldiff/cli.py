"""Command-line entry point: ``voldiff <command> [options]``.

Commands
    gen-data    synthetic surfaces and market series
    preprocess  smoothed/normalized data store with conditioning features
    train       fit the denoiser, write checkpoint and loss curve
    sample      draw conditional surfaces for chosen target dates
    evaluate    score sample files against true surfaces
    arb-audit   per-surface static-arbitrage penalties

Exit status: 0 success, 1 internal error (including numerical divergence),
2 invalid input or configuration.

A JSON run configuration can be given with ``--config`` or through the
``VOLDIFF_CONFIG`` environment variable; explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataprep as dp
from ._io import atomic_write_text, fmt
from .arbitrage import PricingContext, penalty_loops
from .errors import ConfigError, SamplingDivergenceError, TrainingDivergenceError, VolDiffError
from .evaluation import default_slices, evaluate, read_samples_csv, write_report
from .model import UNetConfig
from .sampling import sample_batch, write_samples_csv
from .training import Checkpoint, TrainConfig, fit, write_loss_curve

log = logging.getLogger("voldiff")
CONFIG_ENV = "VOLDIFF_CONFIG"


class UsageError(VolDiffError, ValueError):
    """Bad command-line input (exit status 2)."""


# ---------------------------------------------------------------------- config


@dataclass(frozen=True)
class SamplingSection:
    k: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("sampling.k must be at least 1")


@dataclass(frozen=True)
class EvaluationSection:
    level: float = 0.90
    atm_index: int = 4
    otm_index: int = 6
    itm_index: int = 2
    tenor_indices: dict = field(default_factory=lambda: {"1-Day": 0, "1-Week": 1, "1-Month": 3, "3-Month": 5})

    def slices(self):
        return default_slices(self.atm_index, self.otm_index, self.itm_index, dict(self.tenor_indices))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    model: UNetConfig = field(default_factory=UNetConfig)
    smoothing: dp.SmoothingConfig = field(default_factory=dp.SmoothingConfig)
    conditioning: dp.ConditioningConfig = field(default_factory=dp.ConditioningConfig)
    split: dp.SplitSpec = field(default_factory=dp.SplitSpec)
    pricing: PricingContext = field(default_factory=PricingContext)
    synthetic: dp.SyntheticConfig = field(default_factory=dp.SyntheticConfig)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run configuration must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        kwargs: dict[str, Any] = {}
        for name, value in d.items():
            if name in ("seed",):
                kwargs[name] = int(value)
            elif name == "paths":
                if not isinstance(value, dict):
                    raise ConfigError("paths must be an object")
                kwargs[name] = {str(k): str(v) for k, v in value.items()}
            else:
                section_type = type(known[name].default_factory())
                if name == "train" and "seed" in value:
                    raise ConfigError("set the seed at the top level, not inside 'train'")
                kwargs[name] = _section(section_type, value, name)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"].pop("seed")
        return d


def _section(cls, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}")
    try:
        return cls(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from None


def resolve_config(path: str | None) -> RunConfig:
    """Flag path, else the environment override, else built-in defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    return RunConfig.load(path) if path else RunConfig()


def _seed(args, cfg: RunConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _threads(args) -> int:
    return max(1, args.threads or os.cpu_count() or 1)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


# -------------------------------------------------------------------- commands


def cmd_gen_data(args, cfg: RunConfig) -> None:
    if args.days < 50:
        raise UsageError(f"--days must be at least 50, got {args.days}")
    days = dp.synthetic_generate(args.days, _seed(args, cfg), cfg=cfg.synthetic)
    out = Path(args.out)
    dates = [d.date for d in days]
    dp.write_surface_csv(out / "surfaces.csv", dates, np.stack([d.surface for d in days]))
    dp.write_market_csv(out / "market.csv", dates, [d.underlying_return for d in days], [d.vix_return for d in days])
    log.info("wrote %d synthetic days to %s", len(days), out)


def cmd_preprocess(args, cfg: RunConfig) -> None:
    market = _require_file(args.market, "market CSV")
    if args.quotes:
        quotes = dp.read_quotes_csv(_require_file(args.quotes, "quotes CSV"))
        dates, surfaces = dp.smooth_all(quotes, cfg=cfg.smoothing, threads=_threads(args))
    else:
        dates, surfaces = dp.read_surface_csv(_require_file(args.surfaces, "surface CSV"))
    m_dates, returns, vix = dp.read_market_csv(market)
    if dates != m_dates:
        missing = sorted(set(dates) ^ set(m_dates))
        raise UsageError(f"surface and market dates differ (e.g. {missing[:5]})")
    data = dp.PreparedData.build(dates, surfaces, returns, vix, cfg.conditioning, cfg.split)
    data.save(args.out)
    log.info("prepared %d days (train/validation/test = %d/%d/%d)", len(dates), *(len(r) for r in data.split))


def _train_config(args, cfg: RunConfig) -> TrainConfig:
    over = {"seed": _seed(args, cfg)}
    for flag, name in (("epochs", "epochs"), ("lam", "lam"), ("batch", "batch"), ("lr", "lr0")):
        v = getattr(args, flag)
        if v is not None:
            over[name] = v
    try:
        return replace(cfg.train, **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args, cfg: RunConfig) -> None:
    data = dp.PreparedData.load(_require_file(args.data, "data store"))
    tcfg = _train_config(args, cfg)
    init = None
    if args.resume:
        prev = Checkpoint.load(_require_file(args.resume, "checkpoint"))
        if prev.stats != data.stats or prev.scalar_stats != data.scalar_stats:
            raise UsageError("checkpoint normalization statistics do not match the data store")
        if prev.model_cfg != cfg.model:
            raise UsageError("checkpoint model configuration differs from the run configuration")
        init = prev.params
    out = Path(args.out)

    def progress(r):
        log.info("epoch %d  train %.6g  val %.6g  lr %.3g", r.epoch, r.train_loss, r.val_loss, r.lr)

    try:
        result = fit(data, tcfg, cfg.model, cfg.pricing, init=init, on_epoch=progress)
    except TrainingDivergenceError as err:
        err.checkpoint.save(out / "checkpoint.json")
        write_loss_curve(out / "loss_curve.csv", err.history)
        raise
    result.checkpoint.save(out / "checkpoint.json")
    write_loss_curve(out / "loss_curve.csv", result.history)
    log.info("best validation loss %.6g at epoch %d", result.checkpoint.best_val, result.checkpoint.epoch)


def _target_indices(selection: str | None, data: dp.PreparedData) -> list[int]:
    if selection is None or selection in ("test", "validation", "train"):
        return [int(j) for j in data.targets(selection or "test")]
    idx = []
    for d in selection.split(","):
        d = d.strip()
        try:
            j = data.index_of(dp._iso(d))
        except (KeyError, ValueError):
            raise UsageError(f"unknown date {d!r}") from None
        if j - 1 < data.conditioning.warmup:
            raise UsageError(f"date {d} has no warmed-up conditioning day")
        idx.append(j)
    return idx


def cmd_sample(args, cfg: RunConfig) -> None:
    ckpt = Checkpoint.load(_require_file(args.checkpoint, "checkpoint"))
    data = dp.PreparedData.load(_require_file(args.data, "data store"))
    if ckpt.stats != data.stats or ckpt.scalar_stats != data.scalar_stats:
        raise UsageError("checkpoint normalization statistics do not match the data store")
    targets = _target_indices(args.dates, data)
    if not targets:
        raise UsageError("no target dates selected")
    k = args.k if args.k is not None else cfg.sampling.k
    if k < 1:
        raise UsageError("--k must be at least 1")
    seed = _seed(args, cfg)

    def one(j):
        return sample_batch(data.bundle_for_target(j), ckpt, k, seed, stream=j, date=data.dates[j],
                            use_live_weights=args.live_weights)

    with ThreadPoolExecutor(_threads(args)) as pool:
        batches = list(pool.map(one, targets))
    write_samples_csv(args.out, batches)
    log.info("wrote %d x %d samples to %s", len(batches), k, args.out)


def cmd_evaluate(args, cfg: RunConfig) -> None:
    dates, surfaces = dp.read_surface_csv(_require_file(args.truth, "truth CSV"))
    samples = read_samples_csv(_require_file(args.samples, "sample CSV"))
    level = args.level if args.level is not None else cfg.evaluation.level
    report = evaluate(dict(zip(dates, surfaces)), samples, cfg.evaluation.slices(), cfg.pricing, level=level)
    write_report(report, args.out)
    log.info("overall MAPE %.4f%% over %d days", report.overall_mape_pct, len(report.daily))


def cmd_arb_audit(args, cfg: RunConfig) -> None:
    dates, surfaces = dp.read_surface_csv(_require_file(args.surfaces, "surface CSV"))
    rate = cfg.pricing.rate if args.rate is None else args.rate
    ctx = replace(cfg.pricing, rate=rate)
    lines = ["date,p1,p2,p3,total"]
    for d, s in zip(dates, surfaces):
        lines.append(",".join([d] + [fmt(v) for v in penalty_loops(s, ctx=ctx).values()]))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    log.info("audited %d surfaces", len(dates))


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voldiff", description="Conditional diffusion model for implied-volatility surfaces.")
    parser.add_argument("--config", help=f"JSON run configuration (default: ${CONFIG_ENV} if set)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: all available)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress messages")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")

    p = sub.add_parser("gen-data", help="generate synthetic surfaces and market series")
    common(p)
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory (surfaces.csv, market.csv)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", help="build the normalized data store")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--quotes", help="raw quote CSV (date,moneyness,tenor_years,implied_vol,vega)")
    src.add_argument("--surfaces", help="gridded surface CSV (date,c00..c88)")
    p.add_argument("--market", required=True, help="market CSV (date,underlying_return,vix_return)")
    p.add_argument("--out", required=True, help="output data store (JSON)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the denoiser")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory (checkpoint.json, loss_curve.csv)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lam", type=float, help="arbitrage penalty weight")
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--resume", help="initialise from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate conditional surfaces")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dates", help="comma-separated target dates, or train/validation/test (default: test)")
    p.add_argument("--k", type=int, help="samples per date (default 100)")
    p.add_argument("--out", required=True, help="output sample CSV")
    p.add_argument("--live-weights", action="store_true", help="debug: sample with live instead of EMA weights")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="score samples against true surfaces")
    common(p)
    p.add_argument("--truth", required=True, help="surface CSV with the true surfaces")
    p.add_argument("--samples", required=True, help="sample CSV (date,sample_id,c00..c88)")
    p.add_argument("--level", type=float, help="confidence level (default 0.90)")
    p.add_argument("--out", required=True, help="output directory for the report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("arb-audit", help="static-arbitrage penalties per surface")
    common(p)
    p.add_argument("--surfaces", required=True)
    p.add_argument("--rate", type=float, help="risk-free rate (default from config, 0.02)")
    p.add_argument("--out", required=True, help="output penalty CSV")
    p.set_defaults(func=cmd_arb_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = resolve_config(args.config)
        # numerical kernels run single-threaded; --threads sizes the worker pool
        with threadpool_limits(limits=1):
            args.func(args, cfg)
    except (TrainingDivergenceError, SamplingDivergenceError) as exc:
        print(f"voldiff: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:  # package validation errors derive from ValueError
        print(f"voldiff: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report anything unexpected as an internal error
        print(f"voldiff: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
