"""Detection precision/recall/F1 and track purity/continuity.

Detections are matched to ground truth one-to-one within 10 pixels, greedily
by ascending distance. Tracks are associated with target trajectories frame
by frame with the same matcher; purity is the share of an entity's frames
explained by its predominant counterpart and continuity counts distinct
counterparts.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "MatchResult",
    "filter_stationary",
    "match_points",
    "match_detections",
    "prf",
    "evaluate_detections",
    "TrackScores",
    "track_metrics",
    "format_report",
]

MATCH_RADIUS = 10.0
MIN_DISPLACEMENT_M = 0.8
MIN_TRACK_FRAMES = 5  # entities this short or shorter are ignored


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list  # (detection index, ground-truth index)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, [])


def filter_stationary(rows, min_displacement: float = MIN_DISPLACEMENT_M):
    """Drop ground-truth points that moved less than ``min_displacement`` metres.

    Displacement is measured from the object's previous frame; an object's
    first frame uses the following frame instead. World coordinates are
    required.
    """
    rows = list(rows)
    by_id = defaultdict(list)
    for r in rows:
        if math.isnan(r.world_x) or math.isnan(r.world_y):
            raise ValueError(f"ground truth for id {r.id} frame {r.frame} has no world coordinates")
        by_id[r.id].append(r)
    keep = set()
    for obj, seq in by_id.items():
        seq.sort(key=lambda r: r.frame)
        for i, r in enumerate(seq):
            j = i - 1 if i > 0 else (1 if len(seq) > 1 else None)
            if j is None:
                continue
            d = math.hypot(r.world_x - seq[j].world_x, r.world_y - seq[j].world_y)
            if d >= min_displacement:
                keep.add((r.frame, r.id))
    return [r for r in rows if (r.frame, r.id) in keep]


def match_points(a, b, radius: float = MATCH_RADIUS) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of point sets by ascending distance.

    Ties are broken by the coordinates themselves, so the result does not
    depend on input order. Pairs at more than ``radius`` never match.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return []
    d = cdist(a, b)
    ia, ib = np.nonzero(d <= radius)
    if len(ia) == 0:
        return []
    order = np.lexsort((b[ib, 1], b[ib, 0], a[ia, 1], a[ia, 0], d[ia, ib]))
    used_a, used_b, pairs = set(), set(), []
    for k in order:
        i, j = int(ia[k]), int(ib[k])
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return pairs


def match_detections(dets, gt, radius: float = MATCH_RADIUS) -> MatchResult:
    pairs = match_points(dets, gt, radius)
    n_det, n_gt = len(np.asarray(dets).reshape(-1, 2)), len(np.asarray(gt).reshape(-1, 2))
    return MatchResult(len(pairs), n_det - len(pairs), n_gt - len(pairs), pairs)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def evaluate_detections(det_by_frame: dict, gt_rows, frames, radius: float = MATCH_RADIUS,
                        stationary_filter: bool = True) -> dict:
    """Sum matches over ``frames``; ``det_by_frame`` maps frame -> (n, 2) positions."""
    if stationary_filter:
        gt_rows = filter_stationary(gt_rows)
    gt_by_frame = defaultdict(list)
    for r in gt_rows:
        gt_by_frame[r.frame].append((r.x, r.y))
    total = MatchResult(0, 0, 0, [])
    for f in frames:
        total = total + match_detections(det_by_frame.get(f, np.zeros((0, 2))), gt_by_frame.get(f, []), radius)
    p, r, f1 = prf(total.tp, total.fp, total.fn)
    return {"frames": len(list(frames)), "tp": total.tp, "fp": total.fp, "fn": total.fn,
            "precision": p, "recall": r, "f1": f1}


# --------------------------------------------------------------------------
# tracking
# --------------------------------------------------------------------------

@dataclass
class TrackScores:
    target_purity: float
    target_continuity: float
    track_purity: float
    track_continuity: float
    n_targets: int
    n_tracks: int

    def as_dict(self) -> dict:
        return {"target_purity": self.target_purity, "target_continuity": self.target_continuity,
                "track_purity": self.track_purity, "track_continuity": self.track_continuity,
                "targets": self.n_targets, "tracks": self.n_tracks}


def _by_entity(points):
    """``{id: {frame: (x, y)}}`` from ``(frame, id, x, y)`` tuples."""
    out = defaultdict(dict)
    for f, i, x, y in points:
        out[i][int(f)] = (float(x), float(y))
    return out


def _side_scores(lengths: dict, counts: dict) -> tuple[float, float]:
    if not lengths:
        return 0.0, 0.0
    purities, conts = [], []
    for ent, n in lengths.items():
        c = counts.get(ent, {})
        purities.append(max(c.values(), default=0) / n)
        conts.append(len(c))
    return float(np.mean(purities)), float(np.mean(conts))


def track_metrics(tracks, trajectories, radius: float = MATCH_RADIUS,
                  min_frames: int = MIN_TRACK_FRAMES) -> TrackScores:
    """Target and track purity/continuity.

    ``tracks`` and ``trajectories`` are iterables of ``(frame, id, x, y)``;
    stationary way-points must already be removed from the trajectories.
    Entities present in ``min_frames`` frames or fewer are ignored.
    Continuity counts every counterpart matched in at least one frame.
    """
    trk = {k: v for k, v in _by_entity(tracks).items() if len(v) > min_frames}
    tgt = {k: v for k, v in _by_entity(trajectories).items() if len(v) > min_frames}
    frames = sorted(set().union(*(v.keys() for v in trk.values()), *(v.keys() for v in tgt.values())))
    tgt_counts = defaultdict(lambda: defaultdict(int))
    trk_counts = defaultdict(lambda: defaultdict(int))
    for f in frames:
        a_ids = sorted(i for i, v in trk.items() if f in v)
        b_ids = sorted(i for i, v in tgt.items() if f in v)
        pairs = match_points([trk[i][f] for i in a_ids], [tgt[j][f] for j in b_ids], radius)
        for ia, ib in pairs:
            a, b = a_ids[ia], b_ids[ib]
            tgt_counts[b][a] += 1
            trk_counts[a][b] += 1
    tp, tc = _side_scores({k: len(v) for k, v in tgt.items()}, tgt_counts)
    kp, kc = _side_scores({k: len(v) for k, v in trk.items()}, trk_counts)
    return TrackScores(tp, tc, kp, kc, len(tgt), len(trk))


def format_report(metrics: dict) -> str:
    """Flat ``key=value`` lines; floats with 6 decimals."""
    lines = []
    for k, v in metrics.items():
        lines.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"
