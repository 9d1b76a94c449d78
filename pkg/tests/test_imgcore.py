from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wamitrack.imgcore import Blob, Frame, box_filter, box_sum, connected_components, crop_patch, morph_open

masks = arrays(np.bool_, st.tuples(st.integers(1, 24), st.integers(1, 24)))


def _flood_components(mask):
    """Breadth-first 8-connected labelling used as an independent oracle."""
    h, w = mask.shape
    seen = np.zeros_like(mask)
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                stack, pix = [(y, x)], set()
                seen[y, x] = True
                while stack:
                    cy, cx = stack.pop()
                    pix.add((cx, cy))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                stack.append((ny, nx))
                comps.append(pix)
    return comps


def test_frame_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Frame(np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        Frame(np.zeros((0, 4)))
    f = Frame(np.zeros((4, 7)), index=3)
    assert (f.width, f.height, f.index) == (7, 4, 3)


def test_blob_geometry():
    b = Blob(xs=[2, 3, 4], ys=[5, 5, 6])
    assert b.area == 3
    assert b.centroid == pytest.approx((3.0, 16 / 3))
    assert b.bbox == (2, 5, 4, 6)


def test_diagonal_pixels_join():
    mask = np.eye(5, dtype=bool)
    assert len(connected_components(mask)) == 1


def test_empty_mask_has_no_blobs():
    assert connected_components(np.zeros((6, 6), bool)) == []


@settings(max_examples=60, deadline=None)
@given(masks)
def test_components_match_flood_fill(mask):
    got = sorted(sorted(b.pixel_set()) for b in connected_components(mask))
    want = sorted(sorted(c) for c in _flood_components(mask))
    assert got == want


@settings(max_examples=60, deadline=None)
@given(masks)
def test_components_partition_foreground(mask):
    blobs = connected_components(mask)
    assert sum(b.area for b in blobs) == int(mask.sum())
    firsts = [(int(b.ys.min()), int(b.xs[b.ys == b.ys.min()].min())) for b in blobs]
    assert firsts == sorted(firsts)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 15), st.integers(1, 15)), elements=st.floats(-100, 100)),
       st.integers(0, 4), st.integers(0, 4))
def test_box_sum_matches_brute_force(img, rx, ry):
    h, w = img.shape
    want = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            want[y, x] = img[max(y - ry, 0):y + ry + 1, max(x - rx, 0):x + rx + 1].sum()
    np.testing.assert_allclose(box_sum(img, rx, ry), want, atol=1e-9)


def test_box_filter_of_constant_is_constant():
    np.testing.assert_allclose(box_filter(np.full((9, 13), 7.5), 3), 7.5)
    with pytest.raises(ValueError):
        box_filter(np.zeros((3, 3)), 0)


def test_opening_removes_specks_keeps_blocks():
    m = np.zeros((12, 12), bool)
    m[1, 1] = True
    m[5:9, 4:9] = True
    out = morph_open(m)
    assert not out[1, 1]
    assert np.array_equal(out[5:9, 4:9], np.ones((4, 5), bool))
    assert out.sum() == 20


@settings(max_examples=40, deadline=None)
@given(masks)
def test_opening_is_antiextensive_and_idempotent(mask):
    once = morph_open(mask)
    assert not np.any(once & ~mask)
    assert np.array_equal(morph_open(once), once)


def test_opening_kernel_validation():
    with pytest.raises(ValueError):
        morph_open(np.zeros((4, 4), bool), 2, 3)


def test_crop_patch_pads_with_zero():
    img = np.arange(25, dtype=float).reshape(5, 5)
    p = crop_patch(img, (0, 0), 3)
    np.testing.assert_array_equal(p, [[0, 0, 0], [0, 0, 1], [0, 5, 6]])
    assert crop_patch(img, (20, 20), 3).sum() == 0
    with pytest.raises(ValueError):
        crop_patch(img, (2, 2), 4)
