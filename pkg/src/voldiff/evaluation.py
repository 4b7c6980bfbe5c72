"""Forecast-quality metrics for batches of generated surfaces.

Everything here is plain aggregation over (truth, samples) pairs: percentage
errors of the per-cell sample mean, empirical confidence intervals at chosen
(moneyness, tenor) slices, distribution moments and per-day arbitrage levels.
"""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from ._io import atomic_write_text, fmt
from .arbitrage import PricingContext, total_penalty
from .dataprep import SURFACE_COLUMNS
from .errors import AlignmentError, DegenerateDistributionError, DomainError, SizeError
from .grid import DEFAULT_GRID, GridSpec

MIN_CI_SAMPLES = 20


@dataclass(frozen=True)
class SliceSpec:
    label: str
    m_index: int
    tau_index: int

    def __post_init__(self):
        if not (0 <= self.m_index <= 8 and 0 <= self.tau_index <= 8):
            raise ValueError(f"slice indices must lie in 0..8, got ({self.m_index}, {self.tau_index})")


def default_slices(atm: int = 4, otm: int = 6, itm: int = 2, tenors: Mapping[str, int] | None = None) -> list[SliceSpec]:
    """ATM/OTM/ITM rows crossed with the 1-day, 1-week, 1-month and 3-month tenors."""
    tenors = tenors or OrderedDict([("1-Day", 0), ("1-Week", 1), ("1-Month", 3), ("3-Month", 5)])
    return [
        SliceSpec(f"{name} {tl}", mi, ti)
        for name, mi in (("ATM", atm), ("OTM", otm), ("ITM", itm))
        for tl, ti in tenors.items()
    ]


# --------------------------------------------------------------------- metrics


def surface_mape(truth, pred) -> float:
    """Mean absolute relative error over all cells, as a fraction."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {pred.shape}")
    if np.any(~(truth > 0)):
        raise DomainError("truth surface must be strictly positive")
    return float(np.mean(np.abs((pred - truth) / truth)))


@dataclass(frozen=True)
class CIStats:
    mean_width: float
    std_width: float
    breach_pct: float


def interval(samples, level: float = 0.90, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Central empirical interval with linear interpolation between order statistics."""
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    lo_q, hi_q = 50.0 * (1.0 - level), 50.0 * (1.0 + level)
    lo, hi = np.percentile(np.asarray(samples), [lo_q, hi_q], axis=axis, method="linear")
    return lo, hi


def ci_stats(truths, batches: Sequence, slc: SliceSpec, level: float = 0.90) -> CIStats:
    """Width and breach rate of the per-day sample interval at one grid cell."""
    truths = np.asarray(truths, dtype=np.float64)
    if len(truths) != len(batches) or len(batches) == 0:
        raise ValueError("need one non-empty sample batch per truth surface")
    widths = np.empty(len(batches))
    breach = np.empty(len(batches), dtype=bool)
    for d, (truth, batch) in enumerate(zip(truths, batches)):
        batch = np.asarray(batch)
        if batch.shape[0] < MIN_CI_SAMPLES:
            raise SizeError(f"confidence intervals need at least {MIN_CI_SAMPLES} samples, got {batch.shape[0]}")
        lo, hi = interval(batch[:, slc.m_index, slc.tau_index], level)
        widths[d] = hi - lo
        x = truth[slc.m_index, slc.tau_index]
        breach[d] = x < lo or x > hi
    return CIStats(float(widths.mean()), float(widths.std()), float(100.0 * breach.mean()))


@dataclass(frozen=True)
class Moments:
    mean: float
    std: float
    skewness: float
    kurtosis: float  # excess (normal = 0)


def moments(values) -> Moments:
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size < 4:
        raise SizeError("moments need at least 4 values")
    std = float(x.std())
    if not std > 0 or np.all(x == x[0]):
        raise DegenerateDistributionError("zero variance: skewness and kurtosis are undefined")
    return Moments(float(x.mean()), std, float(sps.skew(x)), float(sps.kurtosis(x, fisher=True)))


# ---------------------------------------------------------------------- report


@dataclass(frozen=True)
class SliceMetrics:
    mape_pct: float
    ape_std_pct: float
    ci_mean_width: float
    ci_std_width: float
    breach_pct: float


@dataclass(frozen=True)
class DailyRecord:
    date: str
    surface_mape: float  # fraction, MAPE of the sample-mean surface
    mean_phi: float
    truth_phi: float
    ci_lower: float  # interval of per-sample surface MAPEs
    ci_upper: float


@dataclass
class MetricsReport:
    slices: "OrderedDict[str, SliceMetrics]"
    overall_mape_pct: float
    daily: list[DailyRecord]
    moments: "OrderedDict[tuple[str, str], Moments]" = field(default_factory=OrderedDict)
    level: float = 0.90
    k: int = 0

    def summary(self) -> dict:
        return {
            "overall_mape_pct": self.overall_mape_pct,
            "days": len(self.daily),
            "samples_per_day": self.k,
            "level": self.level,
            "mean_generated_phi": float(np.mean([d.mean_phi for d in self.daily])),
            "mean_truth_phi": float(np.mean([d.truth_phi for d in self.daily])),
            "slices": {k: asdict(v) for k, v in self.slices.items()},
        }


def _sample_mean(s: np.ndarray) -> np.ndarray:
    """Per-cell mean shifted by the first sample: exact when all samples coincide."""
    return s[0] + (s - s[0]).mean(axis=0)


def evaluate(
    truth: Mapping[str, np.ndarray],
    batches: Mapping[str, np.ndarray],
    slices: Sequence[SliceSpec] | None = None,
    ctx: PricingContext = PricingContext(),
    grid: GridSpec = DEFAULT_GRID,
    level: float = 0.90,
) -> MetricsReport:
    """Score sample batches (date -> (k,9,9)) against true surfaces (date -> (9,9)).

    Every batch date must be present in ``truth``; extra truth dates are ignored.
    """
    slices = default_slices() if slices is None else list(slices)
    offenders = [d for d in batches if d not in truth]
    if offenders:
        raise AlignmentError(offenders)
    if not batches:
        raise ValueError("no sample batches to evaluate")
    dates = list(batches)
    truths = np.stack([np.asarray(truth[d], dtype=np.float64) for d in dates])
    samples = [np.asarray(batches[d], dtype=np.float64) for d in dates]
    ks = {s.shape[0] for s in samples}
    means = np.stack([_sample_mean(s) for s in samples])

    daily = []
    for d, t, s, m in zip(dates, truths, samples, means):
        per_sample = np.mean(np.abs((s - t) / t), axis=(1, 2))
        lo, hi = interval(per_sample, level) if s.shape[0] >= 2 else (per_sample[0], per_sample[0])
        daily.append(
            DailyRecord(
                d,
                surface_mape(t, m),
                float(np.mean(total_penalty(s, grid, ctx))),
                float(total_penalty(t, grid, ctx)),
                float(lo),
                float(hi),
            )
        )

    out = OrderedDict()
    mom = OrderedDict()
    for slc in slices:
        i, j = slc.m_index, slc.tau_index
        ape = 100.0 * np.abs((means[:, i, j] - truths[:, i, j]) / truths[:, i, j])
        ci = ci_stats(truths, samples, slc, level)
        out[slc.label] = SliceMetrics(float(ape.mean()), float(ape.std()), ci.mean_width, ci.std_width, ci.breach_pct)
        pooled = np.concatenate([s[:, i, j] for s in samples])
        for source, vals in (("generated", pooled), ("truth", truths[:, i, j])):
            try:
                mom[(slc.label, source)] = moments(vals)
            except (SizeError, DegenerateDistributionError):
                continue
    overall = 100.0 * float(np.mean([r.surface_mape for r in daily]))
    return MetricsReport(out, overall, daily, mom, level, min(ks))


def write_report(report: MetricsReport, out_dir) -> None:
    out_dir = Path(out_dir)
    rows = ["slice,mape_pct,ape_std_pct,ci_mean_width,ci_std_width,breach_pct"]
    for label, m in report.slices.items():
        rows.append(",".join([label] + [fmt(v) for v in asdict(m).values()]))
    rows.append(f"Overall,{fmt(report.overall_mape_pct)},,,,")
    atomic_write_text(out_dir / "metrics.csv", "\n".join(rows) + "\n")

    rows = ["date,surface_mape,mean_phi,ci_lower,ci_upper,truth_phi"]
    for r in report.daily:
        rows.append(",".join([r.date, fmt(r.surface_mape), fmt(r.mean_phi), fmt(r.ci_lower), fmt(r.ci_upper), fmt(r.truth_phi)]))
    atomic_write_text(out_dir / "daily.csv", "\n".join(rows) + "\n")

    rows = ["slice,source,mean,std,skewness,kurtosis"]
    for (label, source), m in report.moments.items():
        rows.append(",".join([label, source] + [fmt(v) for v in asdict(m).values()]))
    atomic_write_text(out_dir / "moments.csv", "\n".join(rows) + "\n")

    atomic_write_text(out_dir / "summary.json", json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")


def read_samples_csv(path) -> "OrderedDict[str, np.ndarray]":
    """Sample file (``date,sample_id,c00..c88``) -> date -> (k, 9, 9), ordered by sample_id."""
    rows: "OrderedDict[str, list[tuple[int, list[float]]]]" = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = ["date", "sample_id"] + SURFACE_COLUMNS
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing[:3]}{'...' if len(missing) > 3 else ''}")
        for row in reader:
            rows.setdefault(row["date"], []).append(
                (int(row["sample_id"]), [float(row[c]) for c in SURFACE_COLUMNS])
            )
    if not rows:
        raise ValueError(f"{path}: no samples")
    return OrderedDict(
        (d, np.array([v for _, v in sorted(r, key=lambda x: x[0])]).reshape(-1, 9, 9)) for d, r in rows.items()
    )
