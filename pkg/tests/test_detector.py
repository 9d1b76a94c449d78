from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from wamitrack.detector import (
    Detection,
    Detector,
    DetectorConfig,
    OracleClassifier,
    OracleRegressor,
    assign_blobs,
    classify_windows,
    convex_hull,
    dedup,
    extract_classifier_set,
    extract_stacks,
    find_peaks,
    normalize_stacks,
    propose_cells,
    read_detections,
    regress_merged,
    response_target,
    select_phi,
    write_detections,
)
from wamitrack.imgcore import Blob
from wamitrack.synth import GTRow, preset, render_video


def test_config_defaults_and_validation():
    c = DetectorConfig()
    assert (c.phi, c.kappa, c.window_side, c.regression_side, c.response_side) == (0.8, 0.25, 21, 45, 15)
    with pytest.raises(ValueError):
        DetectorConfig(phi=1.0)
    with pytest.raises(ValueError):
        DetectorConfig(regression_side=40)


def test_propose_cells_grid_midpoints():
    mask = np.zeros((20, 20), bool)
    mask[0, 0] = mask[7, 12] = True
    np.testing.assert_array_equal(propose_cells(mask), [[2, 2], [12, 7]])
    assert propose_cells(np.zeros((9, 9), bool)).shape == (0, 2)


def test_propose_cells_covers_ragged_edge():
    mask = np.zeros((12, 12), bool)
    mask[11, 11] = True
    np.testing.assert_array_equal(propose_cells(mask), [[12, 12]])


def test_extract_stacks_centre_and_padding():
    sl = np.arange(4 * 30 * 30, dtype=float).reshape(4, 30, 30)
    s = extract_stacks(sl, [[15, 10], [0, 0]], 21)
    assert s.shape == (2, 4, 21, 21)
    assert s[0, 2, 10, 10] == sl[2, 10, 15]
    assert s[1, 0, :10, :].sum() == 0 and s[1, 0, 10, 10] == sl[0, 0, 0]


def test_normalize_stacks_range():
    rng = np.random.default_rng(0)
    s = normalize_stacks(rng.uniform(30, 90, (3, 4, 5, 5)))
    assert s.dtype == np.float32
    np.testing.assert_allclose(s.min(axis=(1, 2, 3)), 0)
    np.testing.assert_allclose(s.max(axis=(1, 2, 3)), 1)
    assert not normalize_stacks(np.full((1, 4, 5, 5), 7.0)).any()


def test_classify_windows_threshold_is_inclusive():
    acc, score = classify_windows([[2, 2], [7, 2]], [0.8, 0.79], (10, 10), 0.8)
    assert acc[:5, :5].all() and not acc[:, 5:].any()
    assert score[2, 2] == 0.8


def _blob_from_rect(x0, y0, x1, y1):
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return Blob(xs.ravel(), ys.ravel())


def test_assignment_direct_and_merged():
    shape = (60, 60)
    bg_a = _blob_from_rect(5, 5, 15, 11)           # 60 px inside cnn A
    cnn_a = _blob_from_rect(3, 3, 18, 13)          # area 150: not < 150
    cnn_b = _blob_from_rect(30, 30, 42, 40)        # area 120
    bg_b = _blob_from_rect(31, 31, 41, 38)         # 70 px
    bg_c1, bg_c2 = _blob_from_rect(2, 45, 8, 50), _blob_from_rect(10, 45, 16, 50)
    cnn_c = _blob_from_rect(0, 44, 20, 52)
    stray = _blob_from_rect(50, 2, 55, 6)          # overlaps nothing
    asg = assign_blobs([bg_a, bg_b, bg_c1, bg_c2, stray], [cnn_a, cnn_b, cnn_c], shape)
    assert [d[0] is bg_b for d in asg.direct] == [True]
    merged = {id(c): members for c, members in asg.merged}
    assert merged[id(cnn_a)] == [bg_a]            # large accepted blob goes to regression
    assert merged[id(cnn_c)] == [bg_c1, bg_c2]    # two proposals share one accepted blob


def test_assignment_small_overlap_goes_to_regression():
    bg = _blob_from_rect(0, 0, 10, 10)
    cnn = _blob_from_rect(5, 0, 15, 10)          # overlap exactly 50: not > 50
    asg = assign_blobs([bg], [cnn], (20, 20))
    assert not asg.direct and len(asg.merged) == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=3, max_size=40, unique=True))
def test_convex_hull_matches_qhull(pts):
    arr = np.array(pts, dtype=float)
    try:
        ref = ConvexHull(arr)
    except Exception:
        return  # collinear input: qhull has no 2-D hull to compare with
    mine = convex_hull(pts)
    assert sorted(mine) == sorted(map(tuple, arr[ref.vertices]))
    # counter-clockwise in image coordinates means positive signed area
    p = np.array(mine)
    area = 0.5 * np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1])
    assert area == pytest.approx(ref.volume)


def test_find_peaks_rules():
    r = np.zeros((15, 15))
    r[3, 4] = 0.9
    r[10, 10] = r[10, 11] = 0.5  # plateau: first in scan order wins
    r[7, 2] = 0.2                # below kappa
    assert find_peaks(r, 0.25) == [(3, 4, 0.9), (10, 10, 0.5)]
    r[3, 5] = 0.95               # now a neighbour dominates (3, 4)
    assert (3, 4, 0.9) not in find_peaks(r, 0.25)


def test_regress_merged_offsets():
    r = np.zeros((15, 15))
    r[7, 7] = r[7, 10] = 0.9
    dets = regress_merged((50, 40), r, 0.25, (100, 100))
    assert [(d.x, d.y) for d in dets] == [(50.0, 40.0), (59.0, 40.0)]
    assert all(d.source == "regression" and len(d.bbox) == 4 for d in dets)
    assert dets[0].bbox[0] == (46.5, 36.5)


def test_response_target_cells():
    g = response_target((22, 22), [(22, 22), (0, 0), (44.4, 44.4), (-2, 0)])
    assert g[7, 7] == 1 and g[0, 0] == 1 and g[14, 14] == 1
    assert g.sum() == 3


def test_dedup_keeps_higher_score():
    a = Detection(10, 10, 0.9, "direct")
    b = Detection(11, 11, 0.95, "regression")
    c = Detection(20, 10, 0.5, "regression")
    kept = dedup([a, b, c], 3.0)
    assert b in kept and c in kept and a not in kept


def test_oracle_classifier_radius():
    gt = [GTRow(4, 1, 10.0, 10.0, 0, 0, 1)]
    o = OracleClassifier(gt)
    np.testing.assert_array_equal(o(None, [[12, 12], [16, 10], [17, 10]], 4), [1, 1, 0])
    np.testing.assert_array_equal(o(None, [[10, 10]], 5), [0])


def test_select_phi_prefers_larger_on_ties():
    assert select_phi({0.5: 0.9, 0.8: 0.95, 0.9: 0.95}) == 0.9
    with pytest.raises(ValueError):
        select_phi({0.5: 0.0, 0.6: 0.0})


def test_detections_csv_round_trip(tmp_path):
    dets = {3: [Detection(1.5, 2.25, 0.9, "direct", [(1.0, 2.0), (3.0, 2.0), (2.0, 4.0)])],
            4: [Detection(7.0, 8.0, 0.3, "regression", [])]}
    write_detections(tmp_path / "d.csv", dets)
    back = read_detections(tmp_path / "d.csv")
    assert back[3][0].bbox == [(1.0, 2.0), (3.0, 2.0), (2.0, 4.0)]
    assert (back[4][0].x, back[4][0].source, back[4][0].bbox) == (7.0, "regression", [])
    (tmp_path / "bad.csv").write_text("frame,x\n1,2\n")
    with pytest.raises(ValueError):
        read_detections(tmp_path / "bad.csv")


@pytest.fixture(scope="module")
def clean_video():
    return render_video(preset("clean", frames=8))


def test_oracle_pipeline_finds_each_vehicle(clean_video):
    gt = clean_video.ground_truth
    det = Detector(OracleClassifier(gt), OracleRegressor(gt))
    res, _ = det.run(clean_video.frames, clean_video.homographies)
    assert sorted(res) == list(range(3, 8))
    for t, dets in res.items():
        truth = np.array([(r.x, r.y) for r in gt if r.frame == t])
        got = np.array([(d.x, d.y) for d in dets])
        assert len(got) == len(truth)
        assert np.hypot(*(got[:, None] - truth[None]).transpose(2, 0, 1)).min(axis=0).max() < 3


def test_detector_rejects_short_video(clean_video):
    det = Detector(OracleClassifier([]), OracleRegressor([]))
    with pytest.raises(ValueError):
        det.run(clean_video.frames[:3], clean_video.homographies[:3])


def test_classifier_set_labels(clean_video):
    x, y, info = extract_classifier_set(clean_video.frames, clean_video.ground_truth, clean_video.homographies)
    assert x.shape[1:] == (4, 21, 21) and x.dtype == np.float32
    np.testing.assert_array_equal(y[:, 0], info[:, 3])
    pos, neg = int(y[:, 0].sum()), int((1 - y[:, 0]).sum())
    assert pos > 0 and neg <= 4 * pos
    gt = {(r.frame, r.id): (r.x, r.y) for r in clean_video.ground_truth}
    for f, cx, cy, lab in info:
        d = min(np.hypot(cx - x_, cy - y_) for (fr, _), (x_, y_) in gt.items() if fr == f)
        assert (d <= 6) if lab else (d >= 15)
