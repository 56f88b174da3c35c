from __future__ import annotations

import numpy as np
import pytest

from tilestitch.analysis import (averaging_sweep, bench_patch_sizes, border_distance_map, context_sensitivity,
                                 correlation_matrix, edge_error_profile, equivariance_check, iou,
                                 margin_from_mask)
from tilestitch.errors import GeometryError, ShapeError
from tilestitch.net import geometry, init_weights, load_netspec
from tilestitch.raster import Raster, Window
from tilestitch.stitcher import full_tile_forward, stitch
from tilestitch.synth import synth_tile
from tilestitch.tiler import Clip, Concat, plan


def net(name: str, seed: int = 0):
    return init_weights(load_netspec(f"builtin:{name}"), seed)


def labels(rows) -> Raster:
    return Raster(np.array(rows, dtype=np.uint8))


def block(x0: int, y0: int, size: int = 6) -> Raster:
    a = np.zeros((size, size), dtype=np.uint8)
    a[y0:y0 + 2, x0:x0 + 2] = 1
    return Raster(a)


def test_iou_shifted_blocks():
    # two 2x2 blocks sharing one column: 2 / 6
    assert iou(block(0, 0), block(1, 0), 1) == pytest.approx(1 / 3)


def test_iou_extremes_and_symmetry():
    a, b = block(0, 0), block(3, 3)
    assert iou(a, a, 1) == 1.0
    assert iou(a, b, 1) == 0.0
    assert iou(a, block(1, 1), 1) == iou(block(1, 1), a, 1)
    assert iou(labels([[0, 0]]), labels([[0, 0]]), 1) == 1.0
    with pytest.raises(ShapeError):
        iou(a, labels([[1]]), 1)


def test_correlation_exact_on_period_multiples():
    n = net("unet2")
    tile = synth_tile(1, 128, 128, rects=6)
    cm = correlation_matrix(n, tile, Window(40, 40, 30, 30), max_shift=8)
    assert cm.values[0, 0] == 1.0 and cm.exact[0, 0]
    exact = {(di, dj) for di in range(8) for dj in range(8) if cm.exact[di, dj]}
    assert exact == {(0, 0), (0, 4), (4, 0), (4, 4)}
    assert (cm.values <= 1.0 + 1e-12).all()
    assert len(cm.csv_rows()) == 64


def test_correlation_needs_context():
    with pytest.raises(GeometryError):
        correlation_matrix(net("unet2"), synth_tile(0, 64, 64), Window(2, 2, 10, 10), max_shift=4)


def test_equivariance_at_period_and_not_between():
    n = net("unet2", 3)
    img = synth_tile(3, 96, 96, rects=3)
    assert equivariance_check(n, img, (0, 0)) == 0
    assert equivariance_check(n, img, (4, 0)) == 0
    assert equivariance_check(n, img, (0, 8)) == 0
    assert equivariance_check(n, img, (1, 0)) > 0
    assert equivariance_check(n, img, (0, 2)) > 0


def test_equivariance_shift_too_large():
    with pytest.raises(GeometryError):
        equivariance_check(net("maxpool2"), synth_tile(0, 4, 4), (4, 0))


def test_context_sensitivity_of_unpadded_net_is_empty():
    mask = context_sensitivity(net("unet2"), synth_tile(0, 200, 200), Window(60, 60, 64, 64))
    assert not mask.data.any() and margin_from_mask(mask) == 0


def test_context_sensitivity_two_padded_convs():
    mask = context_sensitivity(net("twoconv"), synth_tile(0, 32, 32), Window(10, 10, 8, 8)).data[0]
    assert not mask[2:-2, 2:-2].any()
    ring0 = np.ones((8, 8), dtype=bool)
    ring0[1:-1, 1:-1] = False
    # a ReLU that is zero on both sides can hide an occasional pixel
    assert mask[ring0].sum() >= 26
    assert margin_from_mask(Raster(mask)) == 2 == geometry(net("twoconv")).contamination_margin(8)


def test_margin_from_mask_examples():
    m = np.zeros((7, 7), dtype=np.uint8)
    assert margin_from_mask(Raster(m)) == 0
    m[2, 5] = 1
    assert margin_from_mask(Raster(m)) == 2
    m[3, 3] = 1
    assert margin_from_mask(Raster(m)) == 4


def test_border_distance_map_single_patch():
    n = net("identity")
    d = border_distance_map(plan(5, 5, geometry(n), 5, Concat()))
    assert d.tolist() == [[0, 0, 0, 0, 0], [0, 1, 1, 1, 0], [0, 1, 2, 1, 0], [0, 1, 1, 1, 0], [0, 0, 0, 0, 0]]


def test_border_distance_map_respects_clip():
    d = border_distance_map(plan(12, 12, geometry(net("identity")), 8, Clip(2)))
    assert d.min() >= 0
    # interior pixels were cut out at least two rings in
    assert d[2:-2, 2:-2].min() >= 2


def test_edge_profile_of_valid_net_is_clean():
    n = net("unet2", 1)
    tile = synth_tile(1, 128, 128, rects=4)
    prof = edge_error_profile(n, tile, plan(128, 128, geometry(n), 68, Concat()))
    assert sum(prof.counts) == 128 * 128
    assert prof.nonzero_bins() == [] and prof.nonzero_bins(scores=True) == []


def test_edge_profile_of_padded_net_is_confined_to_margin():
    n = net("unet2-padded", 2)
    g = geometry(n)
    tile = synth_tile(2, 256, 256, rects=6)
    prof = edge_error_profile(n, tile, plan(256, 256, g, 64, Concat()))
    bins = prof.nonzero_bins(scores=True)
    assert bins and max(bins) < g.contamination_margin(64)
    assert prof.score_rates[0] > 0
    assert all(r is None or 0 <= r <= 1 for r in prof.label_rates)


def test_single_shift_sweep_equals_plain_iou():
    n = net("pool-padded", 4)
    tile = synth_tile(4, 64, 64, rects=3)
    ref = full_tile_forward(n, tile)
    plain = iou(stitch(tile, n, plan(64, 64, geometry(n), 32, Concat())).labels, ref.labels, 1)
    assert averaging_sweep(n, tile, [(0, 0)], 32, oracle=ref) == [plain]


def test_sweep_of_aligned_shifts_on_valid_net_stays_exact():
    n = net("unet2", 6)
    tile = synth_tile(6, 96, 96, rects=3)
    assert averaging_sweep(n, tile, [(0, 0), (4, 0), (0, 4), (4, 4)], 68) == [1.0] * 4


def test_bench_entry_counts():
    n = net("pool-padded")
    recs = bench_patch_sizes(n, synth_tile(0, 512, 512), [64, 128, 256], runs=1)
    assert [r.entries for r in recs] == [64, 16, 4]
    assert all(r.total_ms >= r.forward_ms >= 0 for r in recs)
    single = bench_patch_sizes(n, synth_tile(0, 64, 64), [64], runs=1)
    assert single[0].entries == 1


def test_bench_rejects_u8_tile():
    with pytest.raises(ShapeError):
        bench_patch_sizes(net("identity"), Raster(np.zeros((8, 8), dtype=np.uint8)), [8], runs=1)
