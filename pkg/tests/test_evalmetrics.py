from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wamitrack.evalmetrics import (
    evaluate_detections,
    filter_stationary,
    format_report,
    match_detections,
    match_points,
    prf,
    track_metrics,
)
from wamitrack.synth import GTRow

from helpers import fragmentation_case

points = st.lists(st.tuples(st.floats(0, 60), st.floats(0, 60)), max_size=8)


def _brute_force_greedy(a, b, radius):
    """Reference: repeatedly take the globally closest unused pair."""
    a, b = list(a), list(b)
    used_a, used_b, n = set(), set(), 0
    while True:
        best = None
        for i, j in itertools.product(range(len(a)), range(len(b))):
            if i in used_a or j in used_b:
                continue
            d = np.hypot(a[i][0] - b[j][0], a[i][1] - b[j][1])
            if d <= radius and (best is None or d < best[0]):
                best = (d, i, j)
        if best is None:
            return n
        used_a.add(best[1])
        used_b.add(best[2])
        n += 1


def test_match_examples():
    assert match_points([(0, 0)], [(10, 0)]) == [(0, 0)]
    assert match_points([(0, 0)], [(10.01, 0)]) == []
    # one detection between two targets claims only the closer one
    m = match_detections([(5, 0)], [(0, 0), (9, 0)])
    assert (m.tp, m.fp, m.fn, m.pairs) == (1, 0, 1, [(0, 1)])


@settings(max_examples=80, deadline=None)
@given(points, points)
def test_matching_is_one_to_one_and_bounded(a, b):
    pairs = match_points(a, b)
    assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})
    for i, j in pairs:
        assert np.hypot(a[i][0] - b[j][0], a[i][1] - b[j][1]) <= 10


@settings(max_examples=80, deadline=None)
@given(points, points)
def test_match_count_agrees_with_brute_force(a, b):
    assert len(match_points(a, b)) == _brute_force_greedy(a, b, 10)


@settings(max_examples=60, deadline=None)
@given(points, points, st.randoms())
def test_matching_ignores_input_order(a, b, rnd):
    pa, pb = a[:], b[:]
    rnd.shuffle(pa)
    rnd.shuffle(pb)
    key = lambda pairs, x, y: sorted((x[i], y[j]) for i, j in pairs)  # noqa: E731
    assert key(match_points(a, b), a, b) == key(match_points(pa, pb), pa, pb)


def test_prf_edge_cases():
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)
    assert prf(3, 1, 0) == (0.75, 1.0, pytest.approx(6 / 7))


def _row(f, i, x, wx, y=0.0):
    return GTRow(f, i, x, y, wx, 0.0, float("nan"))


def test_stationary_filter_uses_world_metres():
    rows = [_row(0, 1, 0, 0.0), _row(1, 1, 0, 0.5), _row(2, 1, 0, 1.5), _row(3, 1, 0, 1.6)]
    kept = filter_stationary(rows)
    assert [r.frame for r in kept] == [2]
    # first frame falls back to the next one
    rows = [_row(0, 2, 0, 0.0), _row(1, 2, 0, 0.9)]
    assert [r.frame for r in filter_stationary(rows)] == [0, 1]


def test_stationary_filter_needs_world_coordinates():
    with pytest.raises(ValueError):
        filter_stationary([GTRow(0, 1, 1.0, 1.0, float("nan"), float("nan"), float("nan"))])


def test_evaluate_perfect_detections():
    rows = [_row(f, 1, 4.0 * f, 1.0 * f) for f in range(6)]
    dets = {f: np.array([[4.0 * f, 0.0]]) for f in range(6)}
    m = evaluate_detections(dets, rows, range(6))
    assert (m["precision"], m["recall"], m["f1"]) == (1.0, 1.0, 1.0)


def test_evaluate_skips_stationary_truth():
    rows = [_row(f, 1, 5.0, 0.0) for f in range(4)]
    m = evaluate_detections({f: np.array([[5.0, 0.0]]) for f in range(4)}, rows, range(4))
    assert (m["tp"], m["fp"], m["fn"]) == (0, 4, 0)


def test_fragmentation_example():
    rows, tracks = fragmentation_case()
    traj = [(r.frame, r.id, r.x, r.y) for r in filter_stationary(rows)]
    assert len(traj) == 100
    s = track_metrics(tracks, traj)
    assert s.target_purity == 0.64
    assert s.target_continuity == 2
    # each surviving track lies entirely on the target
    assert s.track_purity == 1.0 and s.track_continuity == 1.0


def test_short_entities_are_ignored():
    rows, tracks = fragmentation_case()
    traj = [(r.frame, r.id, r.x, r.y) for r in filter_stationary(rows)]
    s = track_metrics([t for t in tracks if t[1] == 1], traj)
    assert s.n_tracks == 0 and s.target_purity == 0.0


def test_track_switch_lowers_track_purity():
    traj = [(f, 1, 10.0 + 4 * f, 10.0) for f in range(20)] + [(f, 2, 10.0 + 4 * f, 60.0) for f in range(20)]
    # track 7 follows target 1 for 10 frames then jumps onto target 2
    tracks = [(f, 7, 10.0 + 4 * f, 10.0 if f < 10 else 60.0) for f in range(20)]
    s = track_metrics(tracks, traj)
    assert s.track_purity == 0.5 and s.track_continuity == 2.0
    assert s.target_purity == 0.5 and s.target_continuity == 1.0


def test_format_report():
    assert format_report({"a": 1, "b": 0.5}) == "a=1\nb=0.500000\n"
