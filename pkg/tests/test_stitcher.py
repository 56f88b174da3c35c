from __future__ import annotations

import numpy as np
import pytest

from tilestitch.errors import CoverageError, ShapeError
from tilestitch.net import geometry, init_weights, load_netspec
from tilestitch.raster import Raster, Window, diff_count
from tilestitch.stitcher import StitchAccumulator, full_tile_forward, stitch
from tilestitch.synth import synth_tile
from tilestitch.tiler import Average, Clip, Concat, PlanEntry, Weighting, plan


def net(name: str, seed: int = 0):
    return init_weights(load_netspec(f"builtin:{name}"), seed)


def entry(x0: int, y0: int, w: int, h: int, clip=(0, 0, 0, 0)) -> PlanEntry:
    return PlanEntry(Window(x0, y0, w, h), Window(x0, y0, w, h), clip)


def const(value: float, m: int, classes: int = 1) -> np.ndarray:
    return np.full((classes, m, m), value, dtype=np.float32)


def test_concat_accumulate_stores_values():
    acc = StitchAccumulator(4, 4, 1, Concat())
    patch = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    acc.accumulate(patch, entry(0, 0, 4, 4))
    assert (acc.weight == 1).all()
    assert np.array_equal(acc.sums, patch)


def test_uniform_average_is_mean_on_overlap():
    acc = StitchAccumulator(6, 4, 1, Average(2))
    acc.accumulate(const(1.0, 4), entry(0, 0, 4, 4))
    acc.accumulate(const(4.0, 4), entry(2, 0, 4, 4))
    prob, _ = acc.finalize()
    assert prob.data[0, 0].tolist() == [1, 1, 2.5, 2.5, 4, 4]


def test_edge_taper_weighted_mean():
    acc = StitchAccumulator(7, 5, 1, Average(2, Weighting.EDGE_TAPER))
    acc.accumulate(const(0.0, 5), entry(0, 0, 5, 5))
    acc.accumulate(const(1.0, 5), entry(2, 0, 5, 5))
    prob, _ = acc.finalize()
    # pixel (2, 2): centre of the first patch (weight 3), left edge of the second (weight 1)
    assert prob.data[0, 2, 2] == np.float32(0.25)


def test_clip_region_is_taken_from_patch_interior():
    acc = StitchAccumulator(2, 2, 1, Clip(1))
    patch = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    acc.accumulate(patch, PlanEntry(Window(-1, -1, 4, 4), Window(0, 0, 2, 2), (1, 1, 1, 1)))
    prob, _ = acc.finalize()
    assert prob.data[0].tolist() == [[5, 6], [9, 10]]


def test_accumulate_shape_mismatch():
    acc = StitchAccumulator(4, 4, 2, Concat())
    with pytest.raises(ShapeError):
        acc.accumulate(const(0.0, 4, classes=1), entry(0, 0, 4, 4))
    with pytest.raises(ShapeError):
        acc.accumulate(const(0.0, 3, classes=2), entry(0, 0, 4, 4))


def test_finalize_requires_coverage():
    acc = StitchAccumulator(4, 4, 1, Concat())
    acc.accumulate(const(1.0, 2), entry(0, 0, 2, 2))
    with pytest.raises(CoverageError, match="12"):
        acc.finalize()


def test_single_class_labels_are_zero():
    acc = StitchAccumulator(2, 2, 1, Concat())
    acc.accumulate(const(0.7, 2), entry(0, 0, 2, 2))
    _, labels = acc.finalize()
    assert not labels.data.any()


def test_argmax_ties_go_to_lowest_class():
    acc = StitchAccumulator(2, 1, 2, Average(1))
    patch = np.array([[[0.3]], [[0.7]]], dtype=np.float32)
    acc.accumulate(patch, entry(0, 0, 1, 1))
    acc.accumulate(np.array([[[0.5]], [[0.5]]], dtype=np.float32), entry(1, 0, 1, 1))
    _, labels = acc.finalize()
    assert labels.data[0].tolist() == [[1, 0]]


def test_valid_net_concat_equals_full_tile():
    n = net("unet2", 2)
    tile = synth_tile(2, 128, 128, rects=4)
    res = stitch(tile, n, plan(128, 128, geometry(n), 68, Concat()))
    ref = full_tile_forward(n, tile)
    assert diff_count(res.prob, ref.prob) == 0
    assert diff_count(res.labels, ref.labels) == 0


def test_single_entry_plan_equals_full_tile():
    n = net("unet2", 5)
    g = geometry(n)
    tile = synth_tile(5, 64, 64)
    p = plan(64, 64, g, g.size_for_output(64), Concat())
    assert len(p) == 1
    assert diff_count(stitch(tile, n, p).prob, full_tile_forward(n, tile).prob) == 0


@pytest.mark.parametrize("strategy", [Concat(), Clip(3), Average(8), Average(8, Weighting.EDGE_TAPER)])
def test_worker_count_does_not_change_result(strategy):
    n = net("pool-padded", 1)
    tile = synth_tile(1, 96, 80, rects=3)
    p = plan(96, 80, geometry(n), 24, strategy)
    one = stitch(tile, n, p, workers=1)
    many = stitch(tile, n, p, workers=3)
    assert diff_count(one.prob, many.prob) == 0 and diff_count(one.labels, many.labels) == 0


def test_padded_net_clip_at_contamination_margin_matches_full_tile():
    n = net("unet2-padded", 3)
    g = geometry(n)
    tile = synth_tile(3, 128, 128, rects=4)
    c = g.contamination_margin(64)
    res = stitch(tile, n, plan(128, 128, g, 64, Clip(c)))
    assert diff_count(res.prob, full_tile_forward(n, tile).prob) == 0


def test_stitch_checks_inputs():
    n = net("pool-padded")
    p = plan(32, 32, geometry(n), 16, Concat())
    with pytest.raises(ShapeError):
        stitch(synth_tile(0, 32, 32, channels=2), n, p)
    with pytest.raises(ShapeError):
        stitch(synth_tile(0, 40, 32), n, p)
    with pytest.raises(ShapeError):
        stitch(Raster(np.zeros((32, 32), dtype=np.uint8)), n, p)


def test_timing_lines():
    n = net("pool-padded")
    res = stitch(synth_tile(0, 32, 32), n, plan(32, 32, geometry(n), 16, Concat()))
    keys = [line.split("=")[0] for line in res.timing.as_lines().splitlines()]
    assert keys == ["patches", "forward_ms", "handling_ms", "total_ms"]
    assert res.timing.patches == 4
    assert res.timing.total_s >= res.timing.forward_s
