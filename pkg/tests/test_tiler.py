from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilestitch.errors import FormatError, PlanError
from tilestitch.net import geometry, load_netspec
from tilestitch.tiler import (Average, Clip, Concat, TilePlan, Weighting, coverage_counts, coverage_map,
                              entries_for, parse_strategy, plan, taper_weights)

IDENTITY = geometry(load_netspec("builtin:identity"))
UNET2 = geometry(load_netspec("builtin:unet2"))
POOL4 = geometry(load_netspec("builtin:pool4-padded"))


def brute_coverage(p: TilePlan) -> np.ndarray:
    cov = np.zeros((p.tile_h, p.tile_w), dtype=int)
    for e in p.entries:
        o = e.output_window
        cov[o.y0:o.y0 + o.h, o.x0:o.x0 + o.w] += 1
    return cov


def test_exact_grid():
    p = plan(64, 64, IDENTITY, 32, Concat())
    assert len(p) == 4
    assert {(e.output_window.x0, e.output_window.y0) for e in p.entries} == {(0, 0), (32, 0), (0, 32), (32, 32)}
    assert (brute_coverage(p) == 1).all()


def test_edge_aligned_final_column_is_trimmed():
    p = plan(100, 100, IDENTITY, 32, Concat())
    row0 = [e for e in p.entries if e.input_window.y0 == 0]
    assert [e.input_window.x0 for e in row0] == [0, 32, 64, 68]
    last = row0[-1]
    assert (last.output_window.x0, last.output_window.x1) == (96, 100)
    assert last.clip == (28, 0, 0, 0)
    assert (brute_coverage(p) == 1).all()


def test_valid_net_clip_is_aligned_and_exact():
    p = plan(256, 256, UNET2, 100, Clip(2))
    assert all(e.input_window.x0 % 4 == 0 and e.input_window.y0 % 4 == 0 for e in p.entries)
    assert (brute_coverage(p) == 1).all()
    assert p.alignment == 4


def test_final_entry_rounds_onto_grid_without_gaps():
    # output extent 24 over a 100-pixel axis: the edge-aligned last patch is off-grid
    p = plan(100, 100, UNET2, 64, Concat())
    assert all(e.input_window.x0 % 4 == 0 for e in p.entries)
    assert brute_coverage(p).min() == 1 and brute_coverage(p).max() == 1


def test_average_half_step_doubles_interior():
    p = plan(128, 128, IDENTITY, 32, Average(16))
    cov = brute_coverage(p)
    assert cov.min() >= 1
    assert (cov[16:112, 16:112] >= 2).all()
    assert np.array_equal(coverage_counts(p), cov)


def test_single_patch_tile():
    p = plan(32, 32, IDENTITY, 32, Concat())
    assert len(p) == 1
    assert coverage_map(p).data.min() == coverage_map(p).data.max() == 1


def test_overhang_for_valid_net():
    p = plan(64, 64, UNET2, 64, Concat())
    first = p.entries[0]
    assert first.input_window.x0 == -20 and first.output_window.x0 == 0


@pytest.mark.parametrize("kwargs", [
    dict(patch_input_size=101, strategy=Concat()),
    dict(patch_input_size=64, strategy=Clip(12)),
    dict(patch_input_size=64, strategy=Clip(-1)),
    dict(patch_input_size=64, strategy=Average(0)),
    dict(patch_input_size=64, strategy=Average(40)),
])
def test_plan_errors(kwargs):
    with pytest.raises(PlanError):
        plan(128, 128, UNET2, **kwargs)


def test_period_larger_than_tile():
    with pytest.raises(PlanError):
        plan(3, 3, UNET2, 44, Concat())


def test_hardware_cap():
    with pytest.raises(PlanError, match="cap"):
        plan(512, 512, IDENTITY, 300, Concat(), max_patch=256)


def test_plan_text_round_trip(tmp_path):
    p = plan(100, 90, UNET2, 64, Clip(1), offset=(1, 2))
    p.save(tmp_path / "p.txt")
    assert TilePlan.load(tmp_path / "p.txt") == p
    assert (tmp_path / "p.txt").read_text().startswith("# tileplan tile=100x90 patch=64 out=24 strategy=clip:1")


def test_plan_text_rejects_garbage():
    with pytest.raises(FormatError):
        TilePlan.from_text("nope\n")
    with pytest.raises(FormatError):
        TilePlan.from_text("# tileplan tile=4x4 patch=4 out=4 strategy=concat P=1 offset=0,0\n1 2 3\n")


@pytest.mark.parametrize("text, expected", [
    ("concat", Concat()), ("clip:3", Clip(3)), ("clip", Clip(7)), ("avg:8", Average(8)),
    ("avg:8:taper", Average(8, Weighting.EDGE_TAPER)),
])
def test_parse_strategy(text, expected):
    assert parse_strategy(text, default_clip=7) == expected
    assert parse_strategy(str(expected), default_clip=7) == expected


@pytest.mark.parametrize("text", ["clip:x", "avg", "avg:3:box", "mosaic"])
def test_parse_strategy_rejects(text):
    with pytest.raises(PlanError):
        parse_strategy(text)


def test_taper_weights():
    w = taper_weights(5)
    assert w[2, 2] == 3 and w[0, 4] == 1 and w[1, 2] == 2
    assert w.dtype == np.float32


geoms = st.sampled_from([IDENTITY, UNET2, POOL4, geometry(load_netspec("builtin:unet2-padded"))])


@settings(max_examples=60, deadline=None)
@given(geoms, st.integers(16, 300), st.integers(16, 300), st.data())
def test_plan_invariants(geom, tw, th, data):
    sizes = geom.valid_sizes(max(8, int(2 * geom.margin_in) + 4), 160)
    n = data.draw(st.sampled_from(sizes))
    m = geom.output_size(n)
    kind = data.draw(st.sampled_from(["concat", "clip", "avg"]))
    if kind == "clip":
        strategy = Clip(data.draw(st.integers(0, (m - 1) // 2)))
    elif kind == "avg":
        strategy = Average(data.draw(st.integers(max(1, m // 3), m)))
    else:
        strategy = Concat()
    try:
        p = plan(tw, th, geom, n, strategy)
    except PlanError:
        # only legitimate refusals: step below one period or overhang too large
        return
    cov = brute_coverage(p)
    assert cov.min() >= 1
    if kind != "avg":
        assert cov.max() == 1
    assert all(e.input_window.x0 % geom.delta_tot == 0 and e.input_window.y0 % geom.delta_tot == 0
               for e in p.entries)


@settings(max_examples=40, deadline=None)
@given(st.integers(40, 400), st.data())
def test_bigger_patches_never_need_more_entries(tile, data):
    sizes = UNET2.valid_sizes(48, 200)
    a = data.draw(st.sampled_from(sizes))
    b = data.draw(st.sampled_from([s for s in sizes if s >= a]))
    assert entries_for(tile, UNET2, b) <= entries_for(tile, UNET2, a)
