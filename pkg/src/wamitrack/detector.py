"""Moving-object detection: proposals, CNN gating, merged-blob splitting.

Per frame: median-background subtraction proposes blobs; every 5x5 cell
touched by the foreground gets a 21x21x4 window scored by the classifier;
accepted cells form blobs that the background blobs are assigned to. A
single, small, well-overlapping assignment is emitted directly, anything
else goes through the regression network, whose 15x15 response peaks
become detections.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .background import SubtractionConfig, build_background, propose_blobs, subtract
from .evalmetrics import evaluate_detections
from .imgcore import Blob, connected_components
from .nn.architectures import CLASSIFIER_SIDE, REGRESSOR_SIDE, RESPONSE_SIDE, STACK_DEPTH
from .registration import TransformChain, register_pair, warp_frame

__all__ = [
    "DetectorConfig",
    "Detection",
    "FramePrep",
    "propose_cells",
    "aligned_slices",
    "extract_stacks",
    "normalize_stacks",
    "cell_mask",
    "classify_windows",
    "assign_blobs",
    "convex_hull",
    "emit_direct",
    "find_peaks",
    "regress_merged",
    "dedup",
    "NetworkClassifier",
    "NetworkRegressor",
    "OracleClassifier",
    "OracleRegressor",
    "response_target",
    "Detector",
    "estimate_homographies",
    "extract_classifier_set",
    "extract_regression_set",
    "select_phi",
    "calibrate_phi",
    "PHI_SWEEP",
    "write_detections",
    "read_detections",
]

log = logging.getLogger(__name__)

PHI_SWEEP = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
CHUNK = 64  # inference batch; fixed so results do not depend on worker count


@dataclass(frozen=True)
class DetectorConfig:
    cell_size: int = 5
    window_side: int = CLASSIFIER_SIDE
    phi: float = 0.8
    kappa: float = 0.25
    max_direct_area: int = 150
    min_overlap: int = 50
    regression_side: int = REGRESSOR_SIDE
    response_side: int = RESPONSE_SIDE
    default_box_side: int = 7
    dedup_radius: float = 3.0

    def __post_init__(self):
        if not 0 < self.phi < 1:
            raise ValueError("phi must lie in (0, 1)")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if self.regression_side != 3 * self.response_side:
            raise ValueError("regression window must be three times the response side")


@dataclass
class Detection:
    x: float
    y: float
    score: float
    source: str  # "direct" or "regression"
    bbox: list = field(default_factory=list)  # polygon vertices (x, y)


# --------------------------------------------------------------------------
# windows and stacks
# --------------------------------------------------------------------------

def propose_cells(mask: np.ndarray, cell_size: int = 5) -> np.ndarray:
    """Midpoints ``(x, y)`` of grid cells holding any foreground, row-major."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    gh, gw = -(-h // cell_size), -(-w // cell_size)
    padded = np.zeros((gh * cell_size, gw * cell_size), dtype=bool)
    padded[:h, :w] = mask
    occ = padded.reshape(gh, cell_size, gw, cell_size).any(axis=(1, 3))
    r, c = np.nonzero(occ)
    half = cell_size // 2
    return np.stack([c * cell_size + half, r * cell_size + half], axis=1).astype(np.int64).reshape(-1, 2)


def aligned_slices(frames, chain: TransformChain, t: int, depth: int = STACK_DEPTH, cache=None) -> np.ndarray:
    """``(depth, H, W)``: frame ``t`` then frames ``t-1 ..`` warped into it."""
    if len(chain) < depth - 1 or t < depth - 1:
        raise ValueError(f"window stacks need {depth - 1} aligned predecessors of frame {t}")
    out = [np.asarray(frames[t], dtype=np.float64)]
    for k in range(1, depth):
        if cache is not None and k - 1 < len(cache):
            out.append(cache[k - 1])
        else:
            out.append(warp_frame(frames[t - k], chain.lag(k)))
    return np.stack(out)


def extract_stacks(slices: np.ndarray, centers, side: int) -> np.ndarray:
    """Raw ``(n, depth, side, side)`` crops centred on integer ``(x, y)`` centres, zero outside."""
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    d, h, w = slices.shape
    r = side // 2
    padded = np.zeros((d, h + 2 * r, w + 2 * r), dtype=np.float32)
    padded[:, r:r + h, r:r + w] = slices
    out = np.zeros((len(centers), d, side, side), dtype=np.float32)
    for i, (x, y) in enumerate(centers):
        x0, y0 = x, y  # top-left in padded coordinates
        if -r <= x < w + r and -r <= y < h + r:
            xs0, ys0 = max(x0, 0), max(y0, 0)
            xs1, ys1 = min(x0 + side, w + 2 * r), min(y0 + side, h + 2 * r)
            out[i, :, ys0 - y0:ys1 - y0, xs0 - x0:xs1 - x0] = padded[:, ys0:ys1, xs0:xs1]
    return out


def normalize_stacks(stacks: np.ndarray) -> np.ndarray:
    """Scale each stack to [0, 1] by its own minimum and maximum."""
    lo = stacks.min(axis=(1, 2, 3), keepdims=True)
    hi = stacks.max(axis=(1, 2, 3), keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    return ((stacks - lo) / span).astype(np.float32)


def cell_mask(shape, centers, cell_size: int = 5) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    half = cell_size // 2
    for x, y in np.asarray(centers, dtype=np.int64).reshape(-1, 2):
        mask[max(y - half, 0):y - half + cell_size, max(x - half, 0):x - half + cell_size] = True
    return mask


# --------------------------------------------------------------------------
# scorers
# --------------------------------------------------------------------------

def _chunked(fn, x: np.ndarray, threads: int = 1) -> np.ndarray:
    chunks = [x[i:i + CHUNK] for i in range(0, len(x), CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts) if parts else None


class NetworkClassifier:
    """``o1`` scores from the classification network."""

    def __init__(self, net, threads: int = 1):
        self.net, self.threads = net, threads

    def __call__(self, stacks, centers, frame_index) -> np.ndarray:
        if len(stacks) == 0:
            return np.zeros(0)
        out = _chunked(lambda c: self.net.forward(normalize_stacks(c)), stacks, self.threads)
        return out[:, 0].astype(np.float64)


class NetworkRegressor:
    """15x15 response grids from the regression network."""

    def __init__(self, net, threads: int = 1):
        self.net, self.threads = net, threads

    def __call__(self, stacks, centers, frame_index) -> np.ndarray:
        if len(stacks) == 0:
            return np.zeros((0, RESPONSE_SIDE, RESPONSE_SIDE))
        out = _chunked(lambda c: self.net.forward(normalize_stacks(c)), stacks, self.threads)
        return out.reshape(-1, RESPONSE_SIDE, RESPONSE_SIDE).astype(np.float64)


def _points_by_frame(gt_rows) -> dict:
    out = {}
    for r in gt_rows:
        out.setdefault(r.frame, []).append((r.x, r.y))
    return {k: np.asarray(v, dtype=np.float64) for k, v in out.items()}


class OracleClassifier:
    """Scores 1 for windows centred within ``radius`` of a ground-truth point, else 0."""

    def __init__(self, gt_rows, radius: float = 6.0):
        self.points = _points_by_frame(gt_rows)
        self.radius = radius

    def __call__(self, stacks, centers, frame_index) -> np.ndarray:
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        pts = self.points.get(frame_index)
        if pts is None or len(centers) == 0:
            return np.zeros(len(centers))
        d = np.hypot(centers[:, None, 0] - pts[None, :, 0], centers[:, None, 1] - pts[None, :, 1])
        return (d.min(axis=1) <= self.radius).astype(np.float64)


def response_target(center, points, side: int = REGRESSOR_SIDE, response_side: int = RESPONSE_SIDE) -> np.ndarray:
    """Occupancy of ``points`` in the 3x3-pixel cells of the window at ``center``."""
    grid = np.zeros((response_side, response_side))
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return grid
    step = side // response_side
    u = pts - (np.asarray(center, dtype=np.float64) - side // 2)  # window pixel coordinates
    cell = np.floor((u + 0.5) / step).astype(np.int64)
    ok = np.all((cell >= 0) & (cell < response_side), axis=1)
    grid[cell[ok, 1], cell[ok, 0]] = 1.0
    return grid


class OracleRegressor:
    """Ground-truth occupancy in place of the regression network."""

    def __init__(self, gt_rows):
        self.points = _points_by_frame(gt_rows)

    def __call__(self, stacks, centers, frame_index) -> np.ndarray:
        pts = self.points.get(frame_index, np.zeros((0, 2)))
        return np.stack([response_target(c, pts) for c in np.asarray(centers).reshape(-1, 2)]) \
            if len(centers) else np.zeros((0, RESPONSE_SIDE, RESPONSE_SIDE))


# --------------------------------------------------------------------------
# gating, assignment, emission
# --------------------------------------------------------------------------

def classify_windows(centers, scores, shape, phi: float, cell_size: int = 5):
    """Union of accepted cells (``o1 >= phi``) and a per-pixel cell score map."""
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64)
    keep = scores >= phi
    score_map = np.zeros(shape)
    half = cell_size // 2
    for (x, y), s in zip(centers[keep], scores[keep]):
        sl = (slice(max(y - half, 0), y - half + cell_size), slice(max(x - half, 0), x - half + cell_size))
        score_map[sl] = np.maximum(score_map[sl], s)
    return cell_mask(shape, centers[keep], cell_size), score_map


@dataclass
class Assignment:
    direct: list  # (bg blob, cnn blob, overlap)
    merged: list  # (cnn blob, [bg blobs])


def assign_blobs(bg_blobs, cnn_blobs, shape, max_direct_area: int = 150, min_overlap: int = 50) -> Assignment:
    """Assign each background blob to the accepted blob it overlaps most.

    Unassigned background blobs are dropped. An accepted blob is emitted
    directly when exactly one background blob is assigned to it, its area
    is below ``max_direct_area`` and the overlap exceeds ``min_overlap``.
    """
    labels = np.zeros(shape, dtype=np.int64)
    for k, b in enumerate(cnn_blobs, 1):
        labels[b.ys, b.xs] = k
    assigned = {}
    for bg in bg_blobs:
        counts = np.bincount(labels[bg.ys, bg.xs], minlength=len(cnn_blobs) + 1)
        counts[0] = 0
        if counts.max() == 0:
            continue
        k = int(np.argmax(counts))  # lowest label wins ties
        assigned.setdefault(k, []).append((bg, int(counts[k])))
    direct, merged = [], []
    for k in sorted(assigned):
        cnn, members = cnn_blobs[k - 1], assigned[k]
        if len(members) == 1 and cnn.area < max_direct_area and members[0][1] > min_overlap:
            direct.append((members[0][0], cnn, members[0][1]))
        else:
            merged.append((cnn, [m[0] for m in members]))
    return Assignment(direct, merged)


def convex_hull(points) -> list[tuple[float, float]]:
    """Counter-clockwise hull (monotone chain); collinear points are dropped."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def emit_direct(bg: Blob, score: float) -> Detection:
    cx, cy = bg.centroid
    return Detection(cx, cy, float(score), "direct", convex_hull(zip(bg.xs, bg.ys)))


def find_peaks(response: np.ndarray, kappa: float) -> list[tuple[int, int, float]]:
    """8-neighbour local maxima ``>= kappa`` as ``(row, col, value)``.

    On a plateau only the first cell in scan order is kept.
    """
    resp = np.asarray(response, dtype=np.float64)
    pad = np.pad(resp, 1, constant_values=-np.inf)
    h, w = resp.shape
    peaks = []
    for r in range(h):
        for c in range(w):
            v = resp[r, c]
            if v < kappa:
                continue
            nb = pad[r:r + 3, c:c + 3]
            if v < nb.max():
                continue
            # earlier neighbours (scan order) with an equal value already claimed the plateau
            earlier = [pad[r, c], pad[r, c + 1], pad[r, c + 2], pad[r + 1, c]]
            if any(e == v for e in earlier):
                continue
            peaks.append((r, c, float(v)))
    return peaks


def regress_merged(center, response: np.ndarray, kappa: float, shape, box_side: int = 7,
                   response_side: int = RESPONSE_SIDE, step: int = 3) -> list[Detection]:
    """Detections from the response of the window centred at integer ``center``."""
    mid = response_side // 2
    h, w = shape
    half = box_side / 2.0
    out = []
    for r, c, v in find_peaks(response, kappa):
        x, y = center[0] + step * (c - mid), center[1] + step * (r - mid)
        if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
            continue
        box = [(x - half, y - half), (x + half, y - half), (x + half, y + half), (x - half, y + half)]
        out.append(Detection(float(x), float(y), v, "regression", box))
    return out


def dedup(dets: list[Detection], radius: float = 3.0) -> list[Detection]:
    """Keep the higher-scoring of any two detections closer than ``radius``."""
    order = sorted(dets, key=lambda d: (-d.score, d.source != "direct", d.y, d.x))
    kept: list[Detection] = []
    for d in order:
        if all((d.x - k.x) ** 2 + (d.y - k.y) ** 2 >= radius ** 2 for k in kept):
            kept.append(d)
    return sorted(kept, key=lambda d: (d.y, d.x))


# --------------------------------------------------------------------------
# per-frame pipeline
# --------------------------------------------------------------------------

def estimate_homographies(frames, mode: str = "feature", threads: int = 1, seed: int = 0) -> list[np.ndarray]:
    """``h_t^{t-1}`` for every frame (identity for the first)."""
    def one(t):
        return register_pair(frames[t - 1], frames[t], mode=mode, seed=seed)
    ts = range(1, len(frames))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            hs = list(pool.map(one, ts))
    else:
        hs = [one(t) for t in ts]
    return [np.eye(3)] + hs


def _chain_at(homographies, t: int, depth: int) -> TransformChain:
    chain = TransformChain(depth)
    for k in range(max(1, t - depth + 1), t + 1):
        chain.push(homographies[k])
    return chain


@dataclass
class FramePrep:
    """Everything before the classifier threshold is applied."""

    index: int
    shape: tuple
    slices: np.ndarray  # (4, H, W) current frame and aligned predecessors
    background: np.ndarray
    mask: np.ndarray
    bg_blobs: list
    centers: np.ndarray
    scores: np.ndarray


class Detector:
    """Runs the detection chain over a video.

    ``classifier(stacks, centers, frame)`` returns ``o1`` per window and
    ``regressor(stacks, centers, frame)`` returns 15x15 responses; both may
    be networks or oracles.
    """

    def __init__(self, classifier, regressor, cfg: DetectorConfig | None = None,
                 sub: SubtractionConfig | None = None, threads: int = 1):
        self.classifier, self.regressor = classifier, regressor
        self.cfg = cfg or DetectorConfig()
        self.sub = sub or SubtractionConfig()
        self.threads = max(1, int(threads))

    @property
    def warmup(self) -> int:
        """First frame index with enough history."""
        return max(self.sub.history, STACK_DEPTH - 1)

    def prepare(self, frames, homographies, t: int) -> FramePrep:
        L = self.sub.history
        depth = max(L, STACK_DEPTH - 1)
        chain = _chain_at(homographies, t, depth)
        cur = np.asarray(frames[t], dtype=np.float64)
        model = build_background([frames[t - k] for k in range(1, L + 1)], chain, L)
        mask = subtract(cur, model, self.sub)
        slices = aligned_slices(frames, chain, t, STACK_DEPTH, cache=model.aligned)
        centers = propose_cells(mask, self.cfg.cell_size)
        stacks = extract_stacks(slices, centers, self.cfg.window_side)
        scores = np.asarray(self.classifier(stacks, centers, t), dtype=np.float64) if len(centers) else np.zeros(0)
        return FramePrep(t, cur.shape, slices, model.background, mask, propose_blobs(mask), centers, scores)

    def finish(self, prep: FramePrep, phi: float | None = None) -> list[Detection]:
        cfg = self.cfg
        phi = cfg.phi if phi is None else phi
        accepted, score_map = classify_windows(prep.centers, prep.scores, prep.shape, phi, cfg.cell_size)
        cnn_blobs = connected_components(accepted)
        asg = assign_blobs(prep.bg_blobs, cnn_blobs, prep.shape, cfg.max_direct_area, cfg.min_overlap)
        dets = [emit_direct(bg, score_map[bg.ys, bg.xs].max()) for bg, _, _ in asg.direct]
        if asg.merged:
            centers = np.array([[int(np.floor(b.centroid[0] + 0.5)), int(np.floor(b.centroid[1] + 0.5))]
                                for b, _ in asg.merged])
            stacks = extract_stacks(prep.slices, centers, cfg.regression_side)
            responses = self.regressor(stacks, centers, prep.index)
            for c, resp in zip(centers, responses):
                dets.extend(regress_merged(c, resp, cfg.kappa, prep.shape, cfg.default_box_side,
                                           cfg.response_side, cfg.regression_side // cfg.response_side))
        return dedup(dets, cfg.dedup_radius)

    def detect_frame(self, frames, homographies, t: int) -> list[Detection]:
        return self.finish(self.prepare(frames, homographies, t))

    def run(self, frames, homographies=None, registration: str = "feature", dump_dir=None):
        """Detections for every frame from ``warmup`` on, plus the homographies used."""
        frames = [np.asarray(getattr(f, "pixels", f), dtype=np.float64) for f in frames]
        if len(frames) <= self.warmup:
            raise ValueError(f"video has {len(frames)} frames; detection needs more than {self.warmup}")
        if homographies is None:
            homographies = estimate_homographies(frames, registration, self.threads)
        ts = list(range(self.warmup, len(frames)))

        def one(t):
            prep = self.prepare(frames, homographies, t)
            if dump_dir is not None:
                _dump(dump_dir, prep)
            return self.finish(prep)

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(one, ts))
        else:
            results = [one(t) for t in ts]
        return dict(zip(ts, results)), homographies


def _dump(dump_dir, prep: FramePrep) -> None:
    from .frameio import write_mask, write_pgm
    d = Path(dump_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_pgm(d / f"background_{prep.index:05d}.pgm", prep.background)
    write_mask(d / f"mask_{prep.index:05d}.pgm", prep.mask)


# --------------------------------------------------------------------------
# training data
# --------------------------------------------------------------------------

def _nearest_distance(centers, pts) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if pts is None or len(pts) == 0:
        return np.full(len(centers), np.inf)
    return np.hypot(centers[:, None, 0] - pts[None, :, 0], centers[:, None, 1] - pts[None, :, 1]).min(axis=1)


def extract_classifier_set(frames, gt_rows, homographies=None, sub: SubtractionConfig | None = None,
                           cfg: DetectorConfig | None = None, seed: int = 0, pos_radius: float = 6.0,
                           neg_radius: float = 15.0, neg_ratio: int = 4, registration: str = "feature"):
    """Labelled 21x21x4 windows from proposed cells.

    Positives lie within ``pos_radius`` of a ground-truth point, negatives at
    least ``neg_radius`` from all of them; cells in between are discarded.
    Negatives are subsampled (seeded) to ``neg_ratio`` times the positives.
    Returns ``(x, y, info)`` with one-hot targets (column 0 = object) and
    ``info`` rows ``(frame, cx, cy, label)``.
    """
    det = Detector(lambda s, c, t: np.zeros(len(c)), None, cfg, sub)
    frames = [np.asarray(getattr(f, "pixels", f), dtype=np.float64) for f in frames]
    if homographies is None:
        homographies = estimate_homographies(frames, registration)
    pts = _points_by_frame(gt_rows)
    pos, neg = [], []
    for t in range(det.warmup, len(frames)):
        prep = det.prepare(frames, homographies, t)
        if len(prep.centers) == 0:
            continue
        d = _nearest_distance(prep.centers, pts.get(t))
        stacks = extract_stacks(prep.slices, prep.centers, det.cfg.window_side)
        for i in np.nonzero(d <= pos_radius)[0]:
            pos.append((stacks[i], t, prep.centers[i]))
        for i in np.nonzero(d >= neg_radius)[0]:
            neg.append((stacks[i], t, prep.centers[i]))
    if not pos:
        raise ValueError("no positive windows: no proposed cell lies near the ground truth")
    rng = np.random.default_rng(seed)
    if len(neg) > neg_ratio * len(pos):
        idx = np.sort(rng.choice(len(neg), neg_ratio * len(pos), replace=False))
        neg = [neg[i] for i in idx]
    samples = [(s, 1) + (t, c) for s, t, c in pos] + [(s, 0) + (t, c) for s, t, c in neg]
    x = normalize_stacks(np.stack([s[0] for s in samples]))
    labels = np.array([s[1] for s in samples])
    y = np.stack([labels, 1 - labels], axis=1).astype(np.float32)
    info = np.array([(s[2], s[3][0], s[3][1], s[1]) for s in samples], dtype=np.int64)
    return x, y, info


def extract_regression_set(frames, gt_rows, homographies=None, repeats: int = 5, jitter: float = 8.0,
                           seed: int = 0, registration: str = "feature"):
    """45x45x4 windows around jittered ground-truth points with 15x15 occupancy targets."""
    frames = [np.asarray(getattr(f, "pixels", f), dtype=np.float64) for f in frames]
    if homographies is None:
        homographies = estimate_homographies(frames, registration)
    pts = _points_by_frame(gt_rows)
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for t in range(STACK_DEPTH - 1, len(frames)):
        p = pts.get(t)
        if p is None:
            continue
        chain = _chain_at(homographies, t, STACK_DEPTH - 1)
        slices = aligned_slices(frames, chain, t, STACK_DEPTH)
        centers = []
        for g in p:
            for _ in range(repeats):
                c = g + rng.uniform(-jitter, jitter, size=2)
                centers.append(np.floor(c + 0.5).astype(np.int64))
        centers = np.array(centers)
        xs.append(normalize_stacks(extract_stacks(slices, centers, REGRESSOR_SIDE)))
        ys.extend(response_target(c, p).ravel() for c in centers)
    if not xs:
        raise ValueError("no ground-truth points in frames with enough history")
    return np.concatenate(xs), np.asarray(ys, dtype=np.float32)


# --------------------------------------------------------------------------
# threshold calibration
# --------------------------------------------------------------------------

def select_phi(f1_by_phi: dict) -> float:
    """Threshold with the best F1; ties go to the larger threshold."""
    if not f1_by_phi or max(f1_by_phi.values()) <= 0:
        raise ValueError("no threshold produced any correct detection")
    best = max(f1_by_phi.values())
    return max(phi for phi, f in f1_by_phi.items() if f == best)


def calibrate_phi(detector: Detector, frames, gt_rows, homographies=None, sweep=PHI_SWEEP,
                  registration: str = "feature"):
    """Sweep ``phi`` on a validation video; returns ``(phi, {phi: metrics})``."""
    frames = [np.asarray(getattr(f, "pixels", f), dtype=np.float64) for f in frames]
    if homographies is None:
        homographies = estimate_homographies(frames, registration, detector.threads)
    preps = [detector.prepare(frames, homographies, t) for t in range(detector.warmup, len(frames))]
    table = {}
    for phi in sweep:
        dets = {p.index: np.array([(d.x, d.y) for d in detector.finish(p, phi)]).reshape(-1, 2) for p in preps}
        table[phi] = evaluate_detections(dets, gt_rows, [p.index for p in preps])
    return select_phi({phi: m["f1"] for phi, m in table.items()}), table


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

DET_FIELDS = ["frame", "x", "y", "score", "source", "bbox_poly"]


def write_detections(path, det_by_frame: dict) -> None:
    """CSV ``frame,x,y,score,source,bbox_poly``; the polygon is ``x y;x y;...``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DET_FIELDS)
        for f in sorted(det_by_frame):
            for d in det_by_frame[f]:
                poly = ";".join(f"{x:.2f} {y:.2f}" for x, y in d.bbox)
                w.writerow([f, f"{d.x:.3f}", f"{d.y:.3f}", f"{d.score:.6f}", d.source, poly])


def read_detections(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DET_FIELDS[:3]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: detections lack columns {sorted(missing)}")
        for rec in reader:
            poly = [tuple(float(v) for v in p.split()) for p in rec.get("bbox_poly", "").split(";") if p.strip()]
            out.setdefault(int(rec["frame"]), []).append(
                Detection(float(rec["x"]), float(rec["y"]), float(rec.get("score") or 0.0),
                          rec.get("source") or "direct", poly))
    return out
