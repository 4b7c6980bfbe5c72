import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from helpers import synthetic_store
from voldiff import arbitrage as arb
from voldiff import dataprep as dp
from voldiff.errors import DegenerateInputError, DomainError, EmptyInputError, SizeError, WarmupError
from voldiff.grid import DEFAULT_GRID, GridSpec


def quote(m, tau, sigma, vega=1.0, date="2020-01-02"):
    return dp.QuoteRecord(date, m, tau, sigma, vega)


# ---------------------------------------------------------------- grid


def test_default_grid_axes():
    np.testing.assert_allclose(DEFAULT_GRID.m, np.linspace(0.6, 1.4, 9))
    np.testing.assert_allclose(DEFAULT_GRID.tau, [1 / 252, 1 / 52, 2 / 52, 1 / 12, 1 / 6, 1 / 4, 1 / 2, 3 / 4, 1])
    assert DEFAULT_GRID.shape == (9, 9)


def test_grid_must_increase():
    with pytest.raises(ValueError):
        GridSpec(moneyness=(0.6,) * 9)


# ---------------------------------------------------------------- smoothing


def test_single_quote_gives_constant_surface():
    s = dp.smooth_surface([quote(1.0, 0.25, 0.2)], cfg=dp.SmoothingConfig(h1=0.5, h2=0.5))
    np.testing.assert_allclose(s, 0.2, rtol=1e-15)


def test_zero_vega_quote_is_ignored():
    cfg = dp.SmoothingConfig(h1=0.5, h2=0.5)
    s = dp.smooth_surface([quote(1.0, 0.25, 0.2, 1.0), quote(0.9, 0.5, 0.7, 0.0)], cfg=cfg)
    np.testing.assert_allclose(s, 0.2, rtol=1e-15)


def test_flat_kernel_gives_vega_weighted_mean():
    qs = [quote(0.8, 0.1, 0.3, 2.0), quote(1.0, 0.5, 0.2, 1.0), quote(1.2, 1.0, 0.25, 5.0)]
    s = dp.smooth_surface(qs, cfg=dp.SmoothingConfig(h1=10.0, h2=10.0))
    # the kernel is nearly flat over the grid; exact kernel weights give the oracle
    m, tau = DEFAULT_GRID.mesh()
    w = np.stack([q.vega * np.exp(-(q.moneyness - m) ** 2 / 20 - (q.tenor - tau) ** 2 / 20) for q in qs])
    ref = np.tensordot([q.implied_vol for q in qs], w, axes=1) / w.sum(axis=0)
    np.testing.assert_allclose(s, ref, rtol=1e-14)
    vw = (2 * 0.3 + 0.2 + 5 * 0.25) / 8
    np.testing.assert_allclose(s, vw, atol=5e-3)


@given(st.floats(1e-3, 1e3))
def test_smoothing_invariant_to_vega_scale(c):
    qs = [quote(0.8, 0.1, 0.3, 2.0), quote(1.0, 0.5, 0.2, 1.0), quote(1.2, 1.0, 0.25, 5.0)]
    scaled = [dp.QuoteRecord(q.date, q.moneyness, q.tenor, q.implied_vol, q.vega * c) for q in qs]
    cfg = dp.SmoothingConfig(h1=0.05, h2=0.3)
    np.testing.assert_allclose(dp.smooth_surface(scaled, cfg=cfg), dp.smooth_surface(qs, cfg=cfg), rtol=1e-13)


def test_vanishing_weights_raise_naming_cell():
    with pytest.raises(DegenerateInputError, match="m=0.6"):
        dp.smooth_surface([quote(3.0, 1.0, 0.2)])


def test_all_zero_vega_raises():
    with pytest.raises(DegenerateInputError):
        dp.smooth_surface([quote(1.0, 0.25, 0.2, 0.0)])


def test_quote_validation():
    with pytest.raises(DomainError):
        quote(1.0, 0.25, 0.0)
    with pytest.raises(DomainError):
        quote(1.0, 0.25, 0.2, -1.0)
    with pytest.raises(DomainError):
        quote(1.0, 0.0, 0.2)


def test_bandwidths_must_be_positive():
    with pytest.raises(ValueError):
        dp.SmoothingConfig(h1=0.0)


# ---------------------------------------------------------------- normalization


@pytest.fixture
def stats(rng):
    return dp.NormalizationStats(mean=rng.normal(-1.5, 0.2, (9, 9)), std=rng.uniform(0.05, 0.3, (9, 9)))


def test_exp_mean_normalizes_to_zero(stats):
    np.testing.assert_allclose(dp.normalize(np.exp(stats.mean), stats), 0.0, atol=1e-15)


@given(hnp.arrays(np.float64, (9, 9), elements=st.floats(0.01, 2.0)))
def test_normalize_roundtrip(raw):
    stats = dp.NormalizationStats(mean=np.full((9, 9), -1.6), std=np.full((9, 9), 0.2))
    np.testing.assert_allclose(dp.denormalize(dp.normalize(raw, stats), stats), raw, rtol=1e-12)


def test_denormalize_unit_cell(stats):
    z = np.zeros((9, 9))
    z[3, 4] = 1.0
    out = dp.denormalize(z, stats)
    assert out[3, 4] == pytest.approx(math.exp(stats.mean[3, 4] + stats.std[3, 4]), rel=1e-15)
    np.testing.assert_allclose(np.delete(out.ravel(), 3 * 9 + 4), np.delete(np.exp(stats.mean).ravel(), 3 * 9 + 4))


def test_normalize_rejects_nonpositive(stats):
    raw = np.full((9, 9), 0.2)
    raw[0, 0] = -0.1
    with pytest.raises(DomainError):
        dp.normalize(raw, stats)


def test_training_stats_standardize_training_set(small_store):
    tr = small_store.split[0]
    z = small_store.normalized[tr.start : tr.stop]
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-10)


def test_stats_ignore_test_period():
    days = dp.synthetic_generate(100, 4)
    dates = [d.date for d in days]
    raw = np.stack([d.surface for d in days])
    ret = np.array([d.underlying_return for d in days])
    vix = np.array([d.vix_return for d in days])
    a = dp.PreparedData.build(dates, raw, ret, vix)
    raw2 = raw.copy()
    raw2[a.split[2].start :] *= 3.0
    b = dp.PreparedData.build(dates, raw2, ret, vix)
    assert a.stats == b.stats and a.scalar_stats == b.scalar_stats


def test_stats_require_positive_std():
    with pytest.raises(DomainError):
        dp.NormalizationStats(mean=np.zeros((9, 9)), std=np.zeros((9, 9)))


# ---------------------------------------------------------------- EWMA


def test_ewma_constant_series():
    np.testing.assert_array_equal(dp.ewma([2.5, 2.5, 2.5], 0.4), [2.5, 2.5, 2.5])


def test_ewma_one_step():
    np.testing.assert_allclose(dp.ewma([1.0, 2.0], 0.3), [1.0, 1.3], rtol=1e-15)


def test_ewma_alpha_one_is_identity(rng):
    y = rng.standard_normal(20)
    np.testing.assert_array_equal(dp.ewma(y, 1.0), y)


def test_ewma_empty_raises():
    with pytest.raises(EmptyInputError):
        dp.ewma([], 0.3)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(0.01, 1.0))
def test_ewma_is_bounded_by_series(series, alpha):
    out = dp.ewma(series, alpha)
    lo, hi = min(series), max(series)
    assert np.all(out >= lo - 1e-9 * (1 + abs(lo))) and np.all(out <= hi + 1e-9 * (1 + abs(hi)))


def test_ewma_works_on_surfaces(rng):
    z = rng.standard_normal((6, 9, 9))
    out = dp.ewma(z, 0.5)
    for i in range(9):
        for j in range(9):
            np.testing.assert_allclose(out[:, i, j], dp.ewma(z[:, i, j], 0.5))


def test_span_conversion():
    assert dp.span_to_alpha(5) == pytest.approx(1 / 3)
    assert dp.span_to_alpha(20) == pytest.approx(2 / 21)


# ---------------------------------------------------------------- conditioning


def test_constant_returns_give_constant_trend_features():
    n = 30
    r = np.full(n, 0.004)
    b = dp.build_conditioning(25, np.zeros((n, 9, 9)), r, np.zeros(n))
    assert b.scalars[0] == pytest.approx(0.004, rel=1e-14)
    assert b.scalars[1] == pytest.approx(0.004, rel=1e-14)
    assert b.scalars[2] == pytest.approx(0.004**2, rel=1e-14)


def test_channel_zero_is_day_surface(rng):
    n = 30
    z = rng.standard_normal((n, 9, 9))
    b = dp.build_conditioning(22, z, rng.standard_normal(n), rng.standard_normal(n))
    assert np.array_equal(b.channels[0], z[22])
    assert np.array_equal(b.channels[3], np.zeros((9, 9)))
    assert b.channels.shape == (4, 9, 9) and b.scalars.shape == (5,)


def test_constant_surface_history_gives_constant_ewmas(rng):
    s = rng.standard_normal((9, 9))
    z = np.broadcast_to(s, (30, 9, 9))
    b = dp.build_conditioning(29, z, np.zeros(30), np.zeros(30))
    np.testing.assert_allclose(b.channels[1], s, rtol=1e-14)
    np.testing.assert_allclose(b.channels[2], s, rtol=1e-14)


def test_conditioning_uses_only_past(rng):
    z = rng.standard_normal((40, 9, 9))
    r, v = rng.standard_normal(40), rng.standard_normal(40)
    a = dp.build_conditioning(25, z, r, v)
    z2, r2, v2 = z.copy(), r.copy(), v.copy()
    z2[26:] += 10
    r2[26:] += 10
    v2[26:] += 10
    b = dp.build_conditioning(25, z2, r2, v2)
    assert np.array_equal(a.channels, b.channels) and np.array_equal(a.scalars, b.scalars)


def test_warmup_error_names_depth():
    with pytest.raises(WarmupError, match="20"):
        dp.build_conditioning(10, np.zeros((30, 9, 9)), np.zeros(30), np.zeros(30))


def test_conditioning_alpha_validation():
    with pytest.raises(ValueError):
        dp.ConditioningConfig(alpha_vol_short=1.0)


def test_store_bundle_matches_direct_build(small_store):
    k = 50
    direct = dp.build_conditioning(
        k, small_store.normalized, small_store.returns, small_store.vix_returns, scalar_stats=small_store.scalar_stats
    )
    got = small_store.bundle(k)
    np.testing.assert_allclose(got.channels, direct.channels, rtol=1e-14)
    np.testing.assert_allclose(got.scalars, direct.scalars, rtol=1e-12)
    assert got.date == small_store.dates[k]


def test_training_scalars_are_standardized(small_store):
    tr = [k for k in small_store.split[0] if k >= small_store.conditioning.warmup]
    s = small_store.scalar_feats[tr]
    np.testing.assert_allclose(s.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(s.std(axis=0), 1.0, atol=1e-10)


def test_training_arrays_pair_target_with_previous_day(small_store):
    targets = small_store.targets("train")[:5]
    x0, feats, scal = small_store.training_arrays(targets)
    for n, j in enumerate(targets):
        assert np.array_equal(x0[n], small_store.normalized[j])
        b = small_store.bundle_for_target(j)
        assert np.array_equal(feats[n], b.channels[:3])
        assert np.array_equal(scal[n], b.scalars)


def test_targets_skip_warmup(small_store):
    t = small_store.targets("train")
    assert t[0] == small_store.conditioning.warmup + 1
    assert list(small_store.targets("test")) == list(small_store.split[2])


# ---------------------------------------------------------------- splitting


def test_split_ten_dates():
    tr, va, te = dp.chronological_split(list(range(10)))
    assert (tr, va, te) == (range(0, 8), range(8, 9), range(9, 10))


def test_split_is_exhaustive_at_scale():
    n = 6958
    tr, va, te = dp.chronological_split(list(range(n)))
    assert tr.stop == va.start and va.stop == te.start and te.stop == n
    assert len(tr) + len(va) + len(te) == n
    assert tr.stop == math.floor(0.8 * n)


@given(st.integers(3, 3000))
def test_split_is_ordered(n):
    tr, va, te = dp.chronological_split(list(range(n)))
    assert tr.start == 0 and te.stop == n
    assert all(b.start == a.stop for a, b in [(tr, va), (va, te)])


def test_split_too_small():
    with pytest.raises(SizeError):
        dp.chronological_split([1, 2])


def test_split_requires_increasing_dates():
    with pytest.raises(ValueError):
        dp.chronological_split(["2020-01-03", "2020-01-02", "2020-01-04"])


def test_split_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        dp.SplitSpec(0.7, 0.1, 0.1)


# ---------------------------------------------------------------- synthetic data


def test_synthetic_is_deterministic():
    a = dp.synthetic_generate(60, 11)
    b = dp.synthetic_generate(60, 11)
    for x, y in zip(a, b):
        assert x.date == y.date and np.array_equal(x.surface, y.surface)
        assert x.underlying_return == y.underlying_return and x.vix_return == y.vix_return


def test_synthetic_seed_matters():
    a = dp.synthetic_generate(60, 11)
    b = dp.synthetic_generate(60, 12)
    assert not np.array_equal(a[-1].surface, b[-1].surface)


def test_synthetic_values_in_range_and_low_arbitrage():
    days = dp.synthetic_generate(200, 0)
    s = np.stack([d.surface for d in days])
    assert np.all((s > 0.01) & (s < 2.0))
    ctx = arb.PricingContext(rate=dp.SyntheticConfig().rate)
    phi = [arb.penalty_loops(x, ctx=ctx).total for x in s]
    assert np.mean(phi) < 1e-3
    assert max(phi) <= dp.SyntheticConfig().phi_threshold


def test_synthetic_dates_are_business_days():
    import datetime as dt

    days = dp.synthetic_generate(50, 1)
    ds = [dt.date.fromisoformat(d.date) for d in days]
    assert all(d.weekday() < 5 for d in ds) and ds == sorted(ds)


def test_synthetic_needs_fifty_days():
    with pytest.raises(SizeError):
        dp.synthetic_generate(49, 0)


def test_synthetic_first_frozen_surface():
    # frozen regression value for seed 0 (guards the generator's bit-level output)
    s = dp.synthetic_generate(50, 0)[0].surface
    assert s[4, 3] == pytest.approx(0.21144236683515497, rel=1e-12)


# ---------------------------------------------------------------- files and store


def test_surface_csv_roundtrip(tmp_path, rng):
    s = rng.uniform(0.05, 1, (3, 9, 9))
    dates = ["2020-01-02", "2020-01-03", "2020-01-06"]
    dp.write_surface_csv(tmp_path / "s.csv", dates, s)
    d2, s2 = dp.read_surface_csv(tmp_path / "s.csv")
    assert d2 == dates and np.array_equal(s2, s)
    header = (tmp_path / "s.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["date", "c00", "c01"] and header[-1] == "c88"


def test_surface_csv_is_row_major_moneyness_by_tenor(tmp_path):
    s = np.arange(81, dtype=float).reshape(1, 9, 9) + 1
    dp.write_surface_csv(tmp_path / "s.csv", ["2020-01-02"], s)
    row = (tmp_path / "s.csv").read_text().splitlines()[1].split(",")
    assert float(row[1 + 9 * 2 + 5]) == s[0, 2, 5]


def test_surface_csv_bad_row(tmp_path):
    (tmp_path / "s.csv").write_text(",".join(["date"] + dp.SURFACE_COLUMNS) + "\n2020-01-02,0.2\n")
    with pytest.raises(ValueError):
        dp.read_surface_csv(tmp_path / "s.csv")


def test_quotes_csv_roundtrip(tmp_path):
    qs = [quote(1.0, 0.25, 0.2, 3.0, "2020-01-03"), quote(0.9, 0.5, 0.25, 1.0, "2020-01-02")]
    dp.write_quotes_csv(tmp_path / "q.csv", qs)
    back = dp.read_quotes_csv(tmp_path / "q.csv")
    assert list(back) == ["2020-01-02", "2020-01-03"]
    assert back["2020-01-03"][0] == qs[0]


def test_quotes_csv_missing_column(tmp_path):
    (tmp_path / "q.csv").write_text("date,moneyness,tenor_years,implied_vol\n2020-01-02,1,0.2,0.2\n")
    with pytest.raises(EmptyInputError, match="vega"):
        dp.read_quotes_csv(tmp_path / "q.csv")


def test_market_csv_roundtrip(tmp_path):
    dp.write_market_csv(tmp_path / "m.csv", ["2020-01-02"], [0.01], [-0.02])
    d, r, v = dp.read_market_csv(tmp_path / "m.csv")
    assert d == ["2020-01-02"] and r[0] == 0.01 and v[0] == -0.02


def test_smooth_all_threads_agree():
    qs = {
        f"2020-01-0{k}": [quote(0.8 + 0.1 * i, 0.1 * (i + 1), 0.2 + 0.01 * k, 1.0, f"2020-01-0{k}") for i in range(5)]
        for k in range(2, 8)
    }
    cfg = dp.SmoothingConfig(h1=0.05, h2=0.3)
    a = dp.smooth_all(qs, cfg=cfg, threads=1)
    b = dp.smooth_all(qs, cfg=cfg, threads=3)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_store_roundtrip(tmp_path, small_store):
    small_store.save(tmp_path / "store.json")
    back = dp.PreparedData.load(tmp_path / "store.json")
    assert back.dates == small_store.dates
    assert np.array_equal(back.raw, small_store.raw)
    assert back.stats == small_store.stats and back.scalar_stats == small_store.scalar_stats
    assert back.split == small_store.split
    assert np.array_equal(back.normalized, small_store.normalized)


def test_store_index_of(small_store):
    assert small_store.index_of(small_store.dates[7]) == 7
    with pytest.raises(KeyError):
        small_store.index_of("1999-01-01")


def test_store_needs_warmed_up_training_days():
    days = dp.synthetic_generate(50, 0)
    with pytest.raises(WarmupError):
        synthetic_store_from(days, dp.SplitSpec(0.3, 0.35, 0.35))


def synthetic_store_from(days, split):
    return dp.PreparedData.build(
        [d.date for d in days],
        np.stack([d.surface for d in days]),
        [d.underlying_return for d in days],
        [d.vix_return for d in days],
        split_spec=split,
    )


def test_helper_store_has_all_splits():
    store = synthetic_store(80, seed=1)
    assert all(len(store.targets(p)) > 0 for p in ("train", "validation", "test"))
