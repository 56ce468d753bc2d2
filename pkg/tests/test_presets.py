from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reedsbench.presets import (NATIVE, PRESETS, Preset, PresetError, crop_geometry, decimate,
                                get_preset, parse_presets, presets_csv, resample,
                                resample_reference)

from .oracles import area_resample_oracle, crop_oracle, decimate_oracle

GOLDEN = Path(__file__).parent / "golden" / "presets.csv"


def test_table_matches_golden_bytes():
    assert presets_csv().encode() == GOLDEN.read_bytes()


def test_table_shape():
    assert [p.preset_id for p in PRESETS] == list(range(12))
    assert sum(p.native_rate for p in PRESETS) == 4
    assert {p.rate for p in PRESETS} == {NATIVE, 30, 10}


@pytest.mark.parametrize("text,ids", [
    ("all", list(range(12))),
    (None, list(range(12))),
    ("0,4", [0, 4]),
    ("0-3", [0, 1, 2, 3]),
    ("4,0", [0, 4]),
    ([11, 2], [2, 11]),
])
def test_parse_presets(text, ids):
    assert [p.preset_id for p in parse_presets(text)] == ids


@pytest.mark.parametrize("text", ["12", "a", "3-1", "", "0,,1", "1,1"])
def test_parse_presets_rejects(text):
    with pytest.raises(PresetError):
        parse_presets(text)


def test_get_preset_unknown():
    with pytest.raises(PresetError):
        get_preset(999)


@pytest.mark.parametrize("preset", PRESETS, ids=lambda p: p.label)
def test_geometry_matches_oracle(preset):
    g = crop_geometry(3208, 2200, preset)
    want = crop_oracle(3208, 2200, preset.width, preset.height)
    assert (g.scaled_w, g.scaled_h, g.crop_x, g.crop_y) == (
        want["scaled_w"], want["scaled_h"], want["crop_x"], want["crop_y"])
    assert (g.out_w, g.out_h) == (preset.width, preset.height)
    assert g.scaled_w >= g.out_w and g.scaled_h >= g.out_h


def test_geometry_derived_offsets():
    g = crop_geometry(3208, 2200, get_preset(1))
    assert (g.scaled_w, g.scaled_h, g.crop_x, g.crop_y) == (1920, 1317, 0, 18)
    g = crop_geometry(3208, 2200, get_preset(2))
    assert (g.scaled_w, g.scaled_h, g.crop_x, g.crop_y) == (1382, 948, 0, 218)


def test_full_resolution_is_identity():
    assert crop_geometry(3208, 2200, get_preset(0)).identity


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 5000), st.integers(1, 5000), st.integers(1, 5000))
def test_geometry_oracle_property(sw, sh, ow, oh):
    g = crop_geometry(sw, sh, Preset(0, ow, oh, 30))
    want = crop_oracle(sw, sh, ow, oh)
    assert (g.scaled_w, g.scaled_h, g.crop_x, g.crop_y) == tuple(want.values())
    assert 0 <= g.crop_x <= g.scaled_w - ow and 0 <= g.crop_y <= g.scaled_h - oh
    # one axis covers exactly
    assert g.scaled_w == ow or g.scaled_h == oh


def test_map_box_through_crop():
    g = crop_geometry(3208, 2200, get_preset(2))
    # a box entirely in the cropped-away top band disappears
    assert g.map_box(0, 0, 100, 100) is None
    box = g.map_box(1000, 1000, 200, 200)
    assert box is not None
    x, y, w, h = box
    assert 0 <= x and x + w <= g.out_w and 0 <= y and y + h <= g.out_h


def test_resample_matches_reference_small():
    rng = np.random.default_rng(0)
    frame = rng.integers(0, 1024, (44, 64), dtype=np.uint16)
    g = crop_geometry(64, 44, Preset(0, 27, 10, 30))
    out = resample(frame, g)
    ref = resample_reference(frame, g)
    assert out.shape == (10, 27) and out.dtype == np.uint16
    assert np.max(np.abs(out.astype(np.float64) - ref)) <= 1.0


def test_reference_matches_coverage_oracle():
    rng = np.random.default_rng(1)
    frame = rng.integers(0, 1024, (11, 17), dtype=np.uint16)
    g = crop_geometry(17, 11, Preset(0, 7, 4, 30))
    oracle = area_resample_oracle(frame, g.scaled_w, g.scaled_h)
    expect = oracle[g.crop_y:g.crop_y + 4, g.crop_x:g.crop_x + 7]
    np.testing.assert_allclose(resample_reference(frame, g), expect, atol=1e-9)


def test_resample_rgb_keeps_channels():
    frame = np.zeros((44, 64, 3), dtype=np.uint16)
    out = resample(frame, crop_geometry(64, 44, Preset(0, 32, 20, 30)))
    assert out.shape == (20, 32, 3)


def test_resample_refuses_upscale_and_mismatch():
    with pytest.raises(PresetError, match="upscale refused"):
        resample(np.zeros((10, 10), np.uint16), crop_geometry(10, 10, Preset(0, 20, 20, 30)))
    with pytest.raises(PresetError, match="dimension mismatch"):
        resample(np.zeros((10, 12), np.uint16), crop_geometry(10, 10, Preset(0, 5, 5, 30)))


def uniform(n, rate):
    return [k * 10**9 // rate for k in range(n)]


@pytest.mark.parametrize("rate", [30, 10])
def test_decimate_91_to_band(rate):
    ts = uniform(91, 91)
    assert decimate(ts, rate) == decimate_oracle(ts, rate)
    assert len(decimate(ts, rate)) == rate


def test_decimate_tie_goes_to_earlier():
    # the 50 ms tick is equidistant from the 25 ms and 75 ms frames
    ms = 1_000_000
    assert decimate([0, 25 * ms, 75 * ms, 100 * ms], 20) == [0, 1, 3]
    assert decimate([0, 24 * ms, 74 * ms, 100 * ms], 20) == [0, 2, 3]


def test_decimate_errors():
    with pytest.raises(PresetError, match="empty input"):
        decimate([], 10)
    with pytest.raises(PresetError):
        decimate(uniform(10, 10), 30)
    with pytest.raises(PresetError):
        decimate([0, 5, 5], 1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 50_000_000), min_size=1, max_size=120),
       st.sampled_from([1, 2, 5, 10]))
def test_decimate_oracle_property(gaps, rate):
    ts = [0]
    for g in gaps:
        ts.append(ts[-1] + g)
    try:
        got = decimate(ts, rate)
    except PresetError:
        return  # rate above the source rate
    assert got == decimate_oracle(ts, rate)
    assert got == sorted(set(got))
