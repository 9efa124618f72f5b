import numpy as np
import pytest
from hypothesis import given, strategies as st

from exchangecast.errors import ConfigurationError
from exchangecast.harness.data import (ForecastData, Split, check_no_leakage, chronological_split, split_anchors,
                                       warmup_anchors)


def test_split_boundaries_floor():
    train, val, test = chronological_split(4032, (0.7, 0.1, 0.2))
    assert (train.lo, train.hi, val.hi, test.hi) == (0, 2822, 3225, 4032)


def test_split_validation():
    with pytest.raises(ConfigurationError):
        chronological_split(100, (0.5, 0.5, 0.0))
    with pytest.raises(ConfigurationError):
        chronological_split(100, (0.5, 0.2, 0.2))
    with pytest.raises(ConfigurationError):
        split_anchors(Split("val", 2822, 3225), 336, 336, 12)


@given(st.integers(1500, 20000), st.floats(0.3, 0.8), st.floats(0.05, 0.15),
       st.sampled_from([336, 1344]), st.integers(1, 48))
def test_anchors_never_straddle(n_bins, f_train, f_val, horizon, stride):
    parts = chronological_split(n_bins, (f_train, f_val, 1 - f_train - f_val))
    for a, b in zip(parts, parts[1:]):
        assert a.hi == b.lo
    for part in parts:
        try:
            anchors = split_anchors(part, 336, horizon, stride)
        except ConfigurationError:
            continue
        assert np.all(anchors - 335 >= part.lo) and np.all(anchors + horizon <= part.hi - 1)
        for a in anchors[[0, -1]]:
            check_no_leakage(part, int(a), 336, horizon)


def test_leakage_assertion():
    part = Split("test", 1000, 2000)
    with pytest.raises(AssertionError, match="leaks"):
        check_no_leakage(part, 1200, 336, 336)
    with pytest.raises(AssertionError):
        check_no_leakage(part, 1700, 336, 336)


def test_warmup_anchors_precede_and_share_grid():
    w = warmup_anchors(335, 336, 12)
    assert w[0] >= 0 and w[-1] == 323 and np.all(np.diff(w) == 12)
    assert warmup_anchors(10, 336, 12).size == 0


def test_targets_and_windows_match_brute_force(small_ds):
    data = ForecastData(small_ds, 336, 336)
    rows = np.array([0, 5, 17])
    anchors = np.array([400, 500, 335])
    batch = data.batch(rows, anchors)
    for i, (r, a) in enumerate(zip(rows, anchors)):
        o, p = data.streams[r]
        y = (small_ds.y[o, p, a + 1:a + 337] * small_ds.mask[p]).sum(0)
        assert np.array_equal(batch["y"][i].numpy(), y)
        assert batch["n"][i] == small_ds.n[o, p, a + 1:a + 337].sum()
        assert np.allclose(batch["window"][i, :, 4].numpy(), np.log1p(small_ds.n[o, p, a - 335:a + 1]))
        assert np.isclose(batch["volume_scale"][i], max(small_ds.n[o, p, a - 335:a + 1].sum(), 1.0))


def test_context_carries_no_counts(small_ds):
    ctx = ForecastData(small_ds, 336, 336).context(np.arange(4), 400)
    assert set(ctx) == {"rows", "o", "p", "c", "t"}
