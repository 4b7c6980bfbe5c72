"""From quotes (or synthetic data) to normalized surfaces and conditioning.

Pipeline: vega-weighted Nadaraya-Watson smoothing onto the grid, log
transform, per-cell standardization with training-only statistics, EWMA
conditioning features, chronological train/validation/test split.

File formats (all with a header row):

* quotes CSV   ``date,moneyness,tenor_years,implied_vol,vega``
* surface CSV  ``date,c00,...,c80``; 81 cells row-major, rows are moneyness
  ascending and columns tenor ascending
* market CSV   ``date,underlying_return,vix_return``
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._io import atomic_write_text, fmt
from .arbitrage import PricingContext, penalty_loops
from .errors import DegenerateInputError, DomainError, EmptyInputError, SizeError, WarmupError
from .grid import DEFAULT_GRID, GridSpec

__all__ = [
    "GridSpec",
    "QuoteRecord",
    "SmoothingConfig",
    "NormalizationStats",
    "ScalarStats",
    "ConditioningConfig",
    "ConditioningBundle",
    "SplitSpec",
    "smooth_surface",
    "normalize",
    "denormalize",
    "ewma",
    "span_to_alpha",
    "build_conditioning",
    "chronological_split",
    "synthetic_generate",
    "PreparedData",
]

N_CELLS = 81
MIN_WEIGHT = 1e-300
SURFACE_COLUMNS = [f"c{i}{j}" for i in range(9) for j in range(9)]


@dataclass(frozen=True)
class QuoteRecord:
    date: str
    moneyness: float
    tenor: float
    implied_vol: float
    vega: float

    def __post_init__(self):
        if not self.implied_vol > 0:
            raise DomainError(f"quote implied vol must be positive: {self}")
        if not self.vega >= 0:
            raise DomainError(f"quote vega must be non-negative: {self}")
        if not self.tenor > 0:
            raise DomainError(f"quote tenor must be positive: {self}")


@dataclass(frozen=True)
class SmoothingConfig:
    # h1 is tiny next to the 0.1 moneyness spacing; kept at the published value.
    h1: float = 0.002
    h2: float = 0.046

    def __post_init__(self):
        if not (self.h1 > 0 and self.h2 > 0):
            raise ValueError("smoothing bandwidths must be positive")


def smooth_surface(quotes: Sequence[QuoteRecord], grid: GridSpec = DEFAULT_GRID, cfg: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    """Vega-weighted Gaussian-kernel average of quote vols at every grid cell."""
    quotes = [q for q in quotes if q.vega > 0]
    if not quotes:
        raise DegenerateInputError("no quote with positive vega")
    qm = np.array([q.moneyness for q in quotes])
    qt = np.array([q.tenor for q in quotes])
    qs = np.array([q.implied_vol for q in quotes])
    qv = np.array([q.vega for q in quotes])
    m, tau = grid.mesh()
    dx = qm[None, None, :] - m[..., None]
    dy = qt[None, None, :] - tau[..., None]
    k = np.exp(-dx * dx / (2.0 * cfg.h1) - dy * dy / (2.0 * cfg.h2)) / (2.0 * math.pi)
    w = qv * k
    den = w.sum(axis=-1)
    bad = np.argwhere(den < MIN_WEIGHT)
    if bad.size:
        i, j = bad[0]
        raise DegenerateInputError(
            f"kernel weights vanish at cell (m={grid.moneyness[i]}, tau={grid.tenors[j]:.6g})"
        )
    return (w * qs).sum(axis=-1) / den


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    """Per-cell mean and standard deviation of training log-vols."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(~(self.std > 0)):
            raise DomainError("normalization std must be positive at every cell")

    @classmethod
    def from_surfaces(cls, raw: np.ndarray) -> "NormalizationStats":
        logs = np.log(np.asarray(raw, dtype=np.float64))
        return cls(mean=logs.mean(axis=0), std=logs.std(axis=0))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, NormalizationStats)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def to_dict(self) -> dict:
        return {"mean": self.mean.reshape(-1).tolist(), "std": self.std.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["mean"]).reshape(9, 9), np.array(d["std"]).reshape(9, 9))


def normalize(raw, stats: NormalizationStats) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(~(raw > 0)):
        raise DomainError("cannot normalize non-positive implied volatility")
    return (np.log(raw) - stats.mean) / stats.std


def denormalize(z, stats: NormalizationStats):
    """exp(z * std + mean); accepts ndarrays or differentiable arrays."""
    from . import gridmath as gm

    if isinstance(z, gm.Array):
        return gm.exp(z * stats.std + stats.mean)
    return np.exp(np.asarray(z) * stats.std + stats.mean)


# ---------------------------------------------------------------- conditioning


@dataclass(frozen=True)
class ConditioningConfig:
    alpha_trend_short: float = 0.156
    alpha_trend_long: float = 0.118
    alpha_vol_short: float = 0.3
    alpha_vol_long: float = 0.15
    surface_span_short: int = 5
    surface_span_long: int = 20

    def __post_init__(self):
        for name in ("alpha_trend_short", "alpha_trend_long", "alpha_vol_short", "alpha_vol_long"):
            a = getattr(self, name)
            if not 0 < a < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {a}")

    @property
    def warmup(self) -> int:
        return max(self.surface_span_short, self.surface_span_long)


def span_to_alpha(span: int) -> float:
    return 2.0 / (span + 1.0)


def ewma(series, alpha: float) -> np.ndarray:
    """Recursive EWMA along axis 0, seeded with the first observation."""
    y = np.asarray(series, dtype=np.float64)
    if y.shape[0] == 0:
        raise EmptyInputError("ewma of an empty series")
    if not 0 < alpha <= 1:
        raise ValueError(f"ewma smoothing factor must lie in (0, 1], got {alpha}")
    out = np.empty_like(y)
    out[0] = y[0]
    for k in range(1, y.shape[0]):
        out[k] = alpha * y[k] + (1.0 - alpha) * out[k - 1]
    return out


@dataclass(frozen=True, eq=False)
class ScalarStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "ScalarStats":
        feats = np.asarray(feats, dtype=np.float64)
        std = feats.std(axis=0)
        return cls(mean=feats.mean(axis=0), std=np.where(std > 0, std, 1.0))

    def apply(self, feats) -> np.ndarray:
        return (np.asarray(feats) - self.mean) / self.std

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ScalarStats)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class ConditioningBundle:
    """Inputs for forecasting the surface that follows ``date``.

    ``channels`` holds the day's normalized surface, its 5- and 20-day EWMAs
    and a zero slot that the sampler or trainer fills with the noisy target.
    """

    channels: np.ndarray  # (4, 9, 9)
    scalars: np.ndarray  # (5,)
    date: str = ""


def raw_scalar_features(returns, vix_returns, cfg: ConditioningConfig = ConditioningConfig()) -> np.ndarray:
    """Unstandardized scalar conditioning for every day: shape (n, 5)."""
    r = np.asarray(returns, dtype=np.float64)
    v = np.asarray(vix_returns, dtype=np.float64)
    return np.stack(
        [
            ewma(r, cfg.alpha_trend_short),
            ewma(r, cfg.alpha_trend_long),
            ewma(r * r, cfg.alpha_vol_short),
            ewma(r * r, cfg.alpha_vol_long),
            v,
        ],
        axis=1,
    )


def surface_features(normalized, cfg: ConditioningConfig = ConditioningConfig()) -> np.ndarray:
    """Day surface plus its short/long EWMAs for every day: shape (n, 3, 9, 9)."""
    z = np.asarray(normalized, dtype=np.float64)
    return np.stack(
        [
            z,
            ewma(z, span_to_alpha(cfg.surface_span_short)),
            ewma(z, span_to_alpha(cfg.surface_span_long)),
        ],
        axis=1,
    )


def build_conditioning(
    date_index: int,
    normalized,
    returns,
    vix_returns,
    cfg: ConditioningConfig = ConditioningConfig(),
    scalar_stats: ScalarStats | None = None,
    date: str = "",
) -> ConditioningBundle:
    """Bundle for day ``date_index`` using only history up to and including it."""
    if date_index < cfg.warmup:
        raise WarmupError(
            f"day {date_index} has only {date_index} prior observations; "
            f"{cfg.warmup} are needed to seed the surface EWMAs"
        )
    k = date_index + 1
    surf = surface_features(np.asarray(normalized)[:k], cfg)[-1]
    scal = raw_scalar_features(np.asarray(returns)[:k], np.asarray(vix_returns)[:k], cfg)[-1]
    if scalar_stats is not None:
        scal = scalar_stats.apply(scal)
    channels = np.concatenate([surf, np.zeros((1, 9, 9))], axis=0)
    return ConditioningBundle(channels=channels, scalars=scal, date=date)


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    validation: float = 0.1
    test: float = 0.1

    def __post_init__(self):
        if abs(self.train + self.validation + self.test - 1.0) > 1e-12:
            raise ValueError("split fractions must sum to 1")


def chronological_split(dates: Sequence, spec: SplitSpec = SplitSpec()) -> tuple[range, range, range]:
    n = len(dates)
    if n < 3:
        raise SizeError(f"need at least 3 dates to split, got {n}")
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise ValueError("dates must be strictly increasing")
    a = int(math.floor(spec.train * n))
    b = int(math.floor((spec.train + spec.validation) * n))
    return range(0, a), range(a, b), range(b, n)


# ---------------------------------------------------------------- synthetic data


class SyntheticDay(NamedTuple):
    date: str
    surface: np.ndarray
    underlying_return: float
    vix_return: float


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameter dynamics for the synthetic smile/term-structure family."""

    level_mean: float = math.log(0.2)
    level_phi: float = 0.97
    level_vol: float = 0.035
    leverage: float = -0.7
    term_mean: float = 0.1
    term_phi: float = 0.95
    term_vol: float = 0.03
    term_beta: float = 1.5  # term-structure response to level shocks
    skew_mean: float = -0.6
    skew_phi: float = 0.95
    skew_vol: float = 0.03
    curv_mean: float = 0.8
    curv_phi: float = 0.95
    curv_vol: float = 0.03
    term_decay: float = 0.15  # years
    noise: float = 0.005  # per-cell multiplicative observation noise
    vix_noise: float = 0.01
    phi_threshold: float = 1e-3
    rate: float = 0.02


def parametric_surface(level: float, term: float, skew: float, curv: float, grid: GridSpec = DEFAULT_GRID, term_decay: float = 0.15) -> np.ndarray:
    """Quadratic smile in log-moneyness on a saturating-exponential term structure."""
    m, tau = grid.mesh()
    k = np.log(m)
    atm = level * (1.0 + term * np.exp(-tau / term_decay))
    skew_tau = skew * np.minimum((0.25 / tau) ** 0.25, 2.0)
    return atm * (1.0 + skew_tau * k + curv * k * k)


def _business_days(n: int, start: dt.date = dt.date(2010, 1, 4)) -> list[str]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += dt.timedelta(days=1)
    return out


def synthetic_generate(n_days: int, seed: int, grid: GridSpec = DEFAULT_GRID, cfg: SyntheticConfig = SyntheticConfig()) -> list[SyntheticDay]:
    """Seeded daily surfaces, underlying returns and VIX-proxy returns."""
    if n_days < 50:
        raise SizeError(f"synthetic generation needs at least 50 days, got {n_days}")
    rng = np.random.default_rng(seed)
    ctx = PricingContext(rate=cfg.rate)
    dates = _business_days(n_days)
    lvl, term, skew, curv = cfg.level_mean, cfg.term_mean, cfg.skew_mean, cfg.curv_mean
    days: list[SyntheticDay] = []
    prev_atm = None
    one_month = grid.index_of_tenor(1 / 12)
    atm_row = grid.index_of_moneyness(1.0)
    for d in range(n_days):
        z_ret, z_lvl, z_term, z_skew, z_curv, z_vix = rng.standard_normal(6)
        noise = rng.standard_normal(grid.shape)
        vol_today = math.exp(lvl) * (1.0 + term * math.exp(-(1 / 12) / cfg.term_decay))
        ret = vol_today / math.sqrt(252.0) * z_ret
        shock = cfg.leverage * z_ret + math.sqrt(1.0 - cfg.leverage**2) * z_lvl
        lvl = cfg.level_mean + cfg.level_phi * (lvl - cfg.level_mean) + cfg.level_vol * shock
        lvl = float(np.clip(lvl, math.log(0.05), math.log(0.9)))
        term = cfg.term_mean + cfg.term_phi * (term - cfg.term_mean) + cfg.term_vol * z_term + cfg.term_beta * cfg.level_vol * shock * 0.5
        term = float(np.clip(term, -0.3, 0.8))
        skew = cfg.skew_mean + cfg.skew_phi * (skew - cfg.skew_mean) + cfg.skew_vol * z_skew
        skew = float(np.clip(skew, -1.2, -0.1))
        curv = cfg.curv_mean + cfg.curv_phi * (curv - cfg.curv_mean) + cfg.curv_vol * z_curv
        curv = float(np.clip(curv, 0.2, 2.0))

        clean = parametric_surface(math.exp(lvl), term, skew, curv, grid, cfg.term_decay)
        clean = _limit_penalty(clean, cfg.phi_threshold, grid, ctx)
        surface = np.clip(clean * np.exp(cfg.noise * noise), 0.011, 1.99)
        scale = 1.0
        while penalty_loops(surface, grid, ctx).total > cfg.phi_threshold:
            scale *= 0.5
            surface = np.clip(clean * np.exp(cfg.noise * scale * noise), 0.011, 1.99)
        atm = float(surface[atm_row, one_month])
        vix_ret = 0.0 if prev_atm is None else atm / prev_atm - 1.0 + cfg.vix_noise * z_vix
        prev_atm = atm
        days.append(SyntheticDay(dates[d], surface, float(ret), float(vix_ret)))
    return days


def _limit_penalty(surface: np.ndarray, threshold: float, grid: GridSpec, ctx: PricingContext) -> np.ndarray:
    """Blend toward a flat surface until the total penalty drops below threshold."""
    flat = np.full_like(surface, float(np.mean(surface)))
    w = 0.0
    out = np.clip(surface, 0.011, 1.99)
    while penalty_loops(out, grid, ctx).total > threshold and w < 1.0:
        w = min(1.0, w + 0.1)
        out = np.clip((1.0 - w) * surface + w * flat, 0.011, 1.99)
    return out


# ---------------------------------------------------------------- file formats


def read_quotes_csv(path) -> "OrderedDict[str, list[QuoteRecord]]":
    by_date: "OrderedDict[str, list[QuoteRecord]]" = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, ["date", "moneyness", "tenor_years", "implied_vol", "vega"], path)
        for row in reader:
            q = QuoteRecord(
                date=_iso(row["date"]),
                moneyness=float(row["moneyness"]),
                tenor=float(row["tenor_years"]),
                implied_vol=float(row["implied_vol"]),
                vega=float(row["vega"]),
            )
            by_date.setdefault(q.date, []).append(q)
    if not by_date:
        raise EmptyInputError(f"{path}: no quotes")
    return OrderedDict(sorted(by_date.items()))


def write_quotes_csv(path, quotes: Iterable[QuoteRecord]) -> None:
    lines = ["date,moneyness,tenor_years,implied_vol,vega"]
    lines += [
        f"{q.date},{fmt(q.moneyness)},{fmt(q.tenor)},{fmt(q.implied_vol)},{fmt(q.vega)}"
        for q in quotes
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_surface_csv(path) -> tuple[list[str], np.ndarray]:
    dates, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "date" or len(header) != 1 + N_CELLS:
            raise EmptyInputError(f"{path}: expected header 'date' + 81 cell columns")
        for row in reader:
            if not row:
                continue
            if len(row) != 1 + N_CELLS:
                raise ValueError(f"{path}: row for {row[0]} has {len(row) - 1} cells, expected 81")
            dates.append(_iso(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not dates:
        raise EmptyInputError(f"{path}: no surfaces")
    return dates, np.array(rows).reshape(-1, 9, 9)


def write_surface_csv(path, dates: Sequence[str], surfaces) -> None:
    surfaces = np.asarray(surfaces).reshape(len(dates), N_CELLS)
    lines = [",".join(["date"] + SURFACE_COLUMNS)]
    lines += [d + "," + ",".join(fmt(v) for v in row) for d, row in zip(dates, surfaces)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_market_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    dates, ret, vix = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, ["date", "underlying_return", "vix_return"], path)
        for row in reader:
            dates.append(_iso(row["date"]))
            ret.append(float(row["underlying_return"]))
            vix.append(float(row["vix_return"]))
    if not dates:
        raise EmptyInputError(f"{path}: no market rows")
    return dates, np.array(ret), np.array(vix)


def write_market_csv(path, dates: Sequence[str], returns, vix_returns) -> None:
    lines = ["date,underlying_return,vix_return"]
    lines += [f"{d},{fmt(r)},{fmt(v)}" for d, r, v in zip(dates, returns, vix_returns)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _require_columns(found, needed, path) -> None:
    missing = [c for c in needed if c not in (found or [])]
    if missing:
        raise EmptyInputError(f"{path}: missing columns {missing}")


def _iso(s: str) -> str:
    return dt.date.fromisoformat(s.strip()).isoformat()


def smooth_all(quotes_by_date, grid: GridSpec = DEFAULT_GRID, cfg: SmoothingConfig = SmoothingConfig(), threads: int = 1) -> tuple[list[str], np.ndarray]:
    dates = list(quotes_by_date)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            surfaces = list(pool.map(lambda d: smooth_surface(quotes_by_date[d], grid, cfg), dates))
    else:
        surfaces = [smooth_surface(quotes_by_date[d], grid, cfg) for d in dates]
    return dates, np.stack(surfaces)


# ---------------------------------------------------------------- prepared store


STORE_VERSION = 1


@dataclass(eq=False)
class PreparedData:
    """Everything training and sampling need, aligned by date."""

    dates: list[str]
    raw: np.ndarray  # (n, 9, 9) implied vols
    returns: np.ndarray
    vix_returns: np.ndarray
    stats: NormalizationStats
    scalar_stats: ScalarStats
    split: tuple[range, range, range]
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    normalized: np.ndarray = field(init=False)
    surface_feats: np.ndarray = field(init=False)
    scalar_feats: np.ndarray = field(init=False)

    def __post_init__(self):
        self.normalized = normalize(self.raw, self.stats)
        self.surface_feats = surface_features(self.normalized, self.conditioning)
        self.scalar_feats = self.scalar_stats.apply(
            raw_scalar_features(self.returns, self.vix_returns, self.conditioning)
        )

    @classmethod
    def build(
        cls,
        dates: Sequence[str],
        raw,
        returns,
        vix_returns,
        conditioning: ConditioningConfig = ConditioningConfig(),
        split_spec: SplitSpec = SplitSpec(),
    ) -> "PreparedData":
        dates = list(dates)
        raw = np.asarray(raw, dtype=np.float64)
        split = chronological_split(dates, split_spec)
        train = split[0]
        stats = NormalizationStats.from_surfaces(raw[train.start : train.stop])
        feats = raw_scalar_features(returns, vix_returns, conditioning)
        usable = [k for k in train if k >= conditioning.warmup]
        if not usable:
            raise WarmupError(f"training split has no day past the {conditioning.warmup}-day warm-up")
        scalar_stats = ScalarStats.from_features(feats[usable])
        return cls(
            dates=dates,
            raw=raw,
            returns=np.asarray(returns, dtype=np.float64),
            vix_returns=np.asarray(vix_returns, dtype=np.float64),
            stats=stats,
            scalar_stats=scalar_stats,
            split=split,
            conditioning=conditioning,
        )

    def targets(self, part: str) -> np.ndarray:
        """Indices of forecast targets in a split whose conditioning day is warmed up."""
        rng = {"train": self.split[0], "validation": self.split[1], "test": self.split[2]}[part]
        return np.array([j for j in rng if j - 1 >= self.conditioning.warmup], dtype=int)

    def bundle(self, date_index: int) -> ConditioningBundle:
        if date_index < self.conditioning.warmup:
            raise WarmupError(
                f"day {date_index} precedes the {self.conditioning.warmup}-day warm-up"
            )
        channels = np.concatenate([self.surface_feats[date_index], np.zeros((1, 9, 9))], axis=0)
        return ConditioningBundle(channels, self.scalar_feats[date_index].copy(), self.dates[date_index])

    def bundle_for_target(self, target_index: int) -> ConditioningBundle:
        return self.bundle(target_index - 1)

    def training_arrays(self, targets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x0, context channels, scalars) for the given target indices."""
        targets = np.asarray(targets, dtype=int)
        return (
            self.normalized[targets],
            self.surface_feats[targets - 1],
            self.scalar_feats[targets - 1],
        )

    def index_of(self, date: str) -> int:
        try:
            return self.dates.index(date)
        except ValueError:
            raise KeyError(date) from None

    def to_dict(self) -> dict:
        return {
            "version": STORE_VERSION,
            "conditioning": asdict(self.conditioning),
            "split": [[r.start, r.stop] for r in self.split],
            "stats": self.stats.to_dict(),
            "scalar_stats": self.scalar_stats.to_dict(),
            "dates": self.dates,
            "raw": self.raw.reshape(len(self.dates), N_CELLS).tolist(),
            "returns": self.returns.tolist(),
            "vix_returns": self.vix_returns.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreparedData":
        if d.get("version") != STORE_VERSION:
            raise ValueError(f"unsupported data store version {d.get('version')!r}")
        return cls(
            dates=list(d["dates"]),
            raw=np.array(d["raw"], dtype=np.float64).reshape(-1, 9, 9),
            returns=np.array(d["returns"], dtype=np.float64),
            vix_returns=np.array(d["vix_returns"], dtype=np.float64),
            stats=NormalizationStats.from_dict(d["stats"]),
            scalar_stats=ScalarStats.from_dict(d["scalar_stats"]),
            split=tuple(range(a, b) for a, b in d["split"]),
            conditioning=ConditioningConfig(**d["conditioning"]),
        )

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "PreparedData":
        return cls.from_dict(json.loads(Path(path).read_text()))
