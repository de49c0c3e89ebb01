"""Core types, vectorization convention, and panel round trips."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from windfuse.core import (BoxCoxSpec, DayBlock, Panel, PanelFormatError,
                           StationMeta, block_slice, complete_block_indices,
                           devectorize, read_panel, vectorize, write_panel)

UTC = timezone.utc


def _stations(n):
    return [StationMeta(f"s{i}", 44.0 + 0.1 * i, -88.0 - 0.1 * i,
                        land_use=1 + i % 2) for i in range(n)]


def _blocks(k, h=4):
    t0 = datetime(2012, 1, 1, tzinfo=UTC)
    return [DayBlock(i + 1, t0 + timedelta(hours=h * i), h) for i in range(k)]


def _panel(k=3, h=4, j=2, seed=0, masked=()):
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.5, 9.0, size=(k, h, j))
    mask = np.ones((k, h, j), dtype=bool)
    for pos in masked:
        mask[pos] = False
    return Panel("obs", _stations(j), _blocks(k, h), values, mask)


def test_vectorize_is_station_major_hour_fastest():
    block = np.array([[1.0, 2.0],
                      [3.0, 4.0]])  # rows = hours, cols = stations
    assert vectorize(block).tolist() == [1.0, 3.0, 2.0, 4.0]


def test_devectorize_inverts_vectorize():
    rng = np.random.default_rng(1)
    block = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(devectorize(vectorize(block), 5, 3), block)


@settings(max_examples=50, deadline=None)
@given(h=st.integers(1, 8), j=st.integers(1, 5), seed=st.integers(0, 10_000))
def test_vectorize_roundtrip_property(h, j, seed):
    block = np.random.default_rng(seed).normal(size=(h, j))
    back = devectorize(vectorize(block), h, j)
    np.testing.assert_array_equal(back, block)


def test_vectorize_rejects_non_2d():
    with pytest.raises(ValueError):
        vectorize(np.zeros(4))
    with pytest.raises(ValueError):
        devectorize(np.zeros(5), 2, 2)


def test_block_slice_flags_masked_positions():
    p = _panel(masked=[(1, 2, 0)])
    sl = block_slice(p, 2)
    assert sl.shape == (4, 2)
    assert bool(sl.mask[2, 0]) and not bool(sl.mask[0, 0])
    # partition identity: available data round-trips untouched
    avail = ~np.asarray(sl.mask)
    np.testing.assert_array_equal(np.asarray(sl.data)[avail],
                                  p.values[1][avail])


def test_block_slice_unknown_index():
    with pytest.raises(KeyError):
        block_slice(_panel(), 9)


def test_complete_block_indices_drops_partial_blocks():
    a = _panel(k=4, masked=[(1, 0, 0)])
    b = _panel(k=4, masked=[(3, 2, 1)])
    assert complete_block_indices(a) == [1, 3, 4]
    assert complete_block_indices(a, b) == [1, 3]
    assert complete_block_indices() == []


def test_panel_validation_rejects_bad_shapes_and_values():
    st_, bl = _stations(2), _blocks(2)
    good = np.ones((2, 4, 2))
    mask = np.ones((2, 4, 2), dtype=bool)
    with pytest.raises(ValueError):
        Panel("obs", st_, bl, np.ones((2, 3, 2)), mask)
    with pytest.raises(ValueError):
        Panel("xxx", st_, bl, good, mask)
    bad = good.copy()
    bad[0, 0, 0] = -1.0  # raw speeds must be non-negative
    with pytest.raises(ValueError):
        Panel("obs", st_, bl, bad, mask)
    # ... but transformed panels may be negative
    Panel("obs", st_, bl, bad, mask, transform=BoxCoxSpec(0.5, 0.0))
    nan = good.copy()
    nan[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Panel("obs", st_, bl, nan, mask)
    # masked NaN is fine
    m2 = mask.copy()
    m2[0, 0, 0] = False
    Panel("obs", st_, bl, nan, m2)


def test_panel_values_are_readonly():
    p = _panel()
    with pytest.raises(ValueError):
        p.values[0, 0, 0] = 1.0


def test_station_and_block_validation():
    with pytest.raises(ValueError):
        StationMeta("x", 91.0, 0.0)
    with pytest.raises(ValueError):
        StationMeta("", 0.0, 0.0)
    with pytest.raises(ValueError):
        DayBlock(0, datetime(2012, 1, 1, tzinfo=UTC))
    with pytest.raises(ValueError):
        DayBlock(1, datetime(2012, 1, 1))  # naive
    with pytest.raises(ValueError):
        DayBlock(1, datetime(2012, 1, 1, 0, 30, tzinfo=UTC))


def test_boxcox_spec_validation():
    with pytest.raises(ValueError):
        BoxCoxSpec(float("nan"))
    with pytest.raises(ValueError):
        BoxCoxSpec(0.5, -1.0)


def test_panel_roundtrip_is_bit_exact(tmp_path):
    p = _panel(k=3, h=4, j=2, masked=[(0, 1, 1), (2, 3, 0)])
    p = Panel(p.source, p.stations, p.blocks, np.array(p.values),
              np.array(p.mask), transform=BoxCoxSpec(0.3, 0.01))
    csv_path, meta_path = write_panel(p, tmp_path / "obs.csv")
    q = read_panel(csv_path)
    assert q.source == p.source
    assert q.stations == p.stations
    assert q.blocks == p.blocks
    assert q.transform == p.transform
    np.testing.assert_array_equal(q.mask, p.mask)
    np.testing.assert_array_equal(q.values[q.mask], p.values[p.mask])


def test_read_panel_error_paths(tmp_path):
    with pytest.raises(PanelFormatError):
        read_panel(tmp_path / "missing.csv")
    p = _panel()
    csv_path, meta_path = write_panel(p, tmp_path / "x.csv")
    meta_path.write_text("{not json")
    with pytest.raises(PanelFormatError):
        read_panel(csv_path)


def test_read_panel_rejects_duplicates_and_bad_header(tmp_path):
    p = _panel(k=1, h=1, j=1)
    csv_path, _ = write_panel(p, tmp_path / "p.csv")
    lines = csv_path.read_text().splitlines()
    csv_path.write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(PanelFormatError):
        read_panel(csv_path)
    csv_path.write_text("a,b,c\n")
    with pytest.raises(PanelFormatError):
        read_panel(csv_path)
