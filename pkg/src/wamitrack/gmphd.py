"""Gaussian-mixture PHD tracker over point detections.

State ``[x, y, vx, vy]`` in pixels of the current frame. Each step the
mixture is carried into the new frame by the registration homography,
propagated with a near-constant-velocity model, updated with the frame's
detections, seeded with two-point births, then pruned and merged.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .registration import RegistrationError, apply_h, check_homography, jacobian_h

__all__ = [
    "PhdConfig",
    "GaussianComponent",
    "Mixture",
    "process_noise",
    "predict",
    "update",
    "birth",
    "prune_merge",
    "extract_tracks",
    "split_shared_labels",
    "GmPhdTracker",
    "run_tracker",
    "write_tracks",
    "read_tracks",
]


@dataclass(frozen=True)
class PhdConfig:
    dt: float = 1.0
    sigma_q: float = 3.0
    meas_noise: float = 3.0  # standard deviation per axis, pixels
    theta: float = 35.0
    w_init: float = 0.25
    w_show: float = 0.5
    w_remove: float = 0.05
    p_detect: float = 0.8
    p_survive: float = 0.95
    clutter: float = 1e-6  # per square pixel
    prune_threshold: float = 1e-4
    merge_distance: float = 4.0  # squared Mahalanobis distance
    max_components: int = 1000

    def __post_init__(self):
        if not 0 < self.p_detect < 1 or not 0 < self.p_survive < 1:
            raise ValueError("detection and survival probabilities must lie in (0, 1)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.meas_noise <= 0 or self.theta <= 0 or self.clutter < 0:
            raise ValueError("measurement noise and theta must be positive, clutter non-negative")
        if self.max_components < 1:
            raise ValueError("max_components must be at least 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "PhdConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown tracker keys: {sorted(unknown)}")
        cast = {k: (int(v) if k == "max_components" else float(v)) for k, v in values.items()}
        return cls(**cast)


@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    label: int


class Mixture:
    """Columnar mixture: weights (n,), means (n, 4), covs (n, 4, 4), labels (n,)."""

    def __init__(self, weights=None, means=None, covs=None, labels=None):
        self.weights = np.zeros(0) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
        n = len(self.weights)
        self.means = np.zeros((0, 4)) if means is None else np.asarray(means, dtype=np.float64).reshape(n, 4)
        self.covs = np.zeros((0, 4, 4)) if covs is None else np.asarray(covs, dtype=np.float64).reshape(n, 4, 4)
        self.labels = np.zeros(0, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def from_components(cls, comps) -> "Mixture":
        comps = list(comps)
        if not comps:
            return cls()
        return cls([c.weight for c in comps], [c.mean for c in comps], [c.cov for c in comps],
                   [c.label for c in comps])

    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(float(w), m.copy(), p.copy(), int(l))
                for w, m, p, l in zip(self.weights, self.means, self.covs, self.labels)]

    def concat(self, other: "Mixture") -> "Mixture":
        return Mixture(np.concatenate([self.weights, other.weights]), np.concatenate([self.means, other.means]),
                       np.concatenate([self.covs, other.covs]), np.concatenate([self.labels, other.labels]))

    def subset(self, idx) -> "Mixture":
        return Mixture(self.weights[idx], self.means[idx], self.covs[idx], self.labels[idx])

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def process_noise(dt: float, sigma_q: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    a, b = dt ** 3 / 3.0, dt ** 2 / 2.0
    q = np.array([[a, 0, b, 0], [0, a, 0, b], [b, 0, 1, 0], [0, b, 0, 1]], dtype=np.float64)
    return sigma_q ** 2 * q


def _transition(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    return f


def predict(mix: Mixture, cfg: PhdConfig, h_motion=None) -> Mixture:
    """Carry the mixture into the next frame and apply the motion model."""
    means, covs = mix.means.copy(), mix.covs.copy()
    if h_motion is not None and len(mix):
        h = check_homography(h_motion)
        pos = apply_h(h, means[:, :2])
        for i in range(len(mix)):
            j = jacobian_h(h, means[i, :2])
            a = np.zeros((4, 4))
            a[:2, :2] = a[2:, 2:] = j
            means[i, 2:] = j @ means[i, 2:]
            covs[i] = a @ covs[i] @ a.T
        means[:, :2] = pos
    f = _transition(cfg.dt)
    means = means @ f.T
    covs = f @ covs @ f.T + process_noise(cfg.dt, cfg.sigma_q)
    return Mixture(mix.weights * cfg.p_survive, means, 0.5 * (covs + covs.transpose(0, 2, 1)), mix.labels.copy())


def update(mix: Mixture, detections, cfg: PhdConfig) -> Mixture:
    """Standard GM-PHD measurement update with uniform clutter."""
    z = np.asarray(detections, dtype=np.float64).reshape(-1, 2)
    missed = Mixture(mix.weights * (1.0 - cfg.p_detect), mix.means, mix.covs, mix.labels)
    if len(mix) == 0 or len(z) == 0:
        return missed
    r = cfg.meas_noise ** 2 * np.eye(2)
    s = mix.covs[:, :2, :2] + r  # (n, 2, 2)
    s_inv = np.linalg.inv(s)
    gain = mix.covs[:, :, :2] @ s_inv  # (n, 4, 2)
    post_cov = mix.covs - gain @ mix.covs[:, :2, :]
    post_cov = 0.5 * (post_cov + post_cov.transpose(0, 2, 1))
    det_s = np.linalg.det(s)
    parts = [missed]
    for zk in z:
        innov = zk[None, :] - mix.means[:, :2]
        md = np.einsum("ni,nij,nj->n", innov, s_inv, innov)
        lik = np.exp(-0.5 * md) / (2 * math.pi * np.sqrt(det_s))
        w = cfg.p_detect * mix.weights * lik
        w = w / (cfg.clutter + w.sum())
        means = mix.means + np.einsum("nij,nj->ni", gain, innov)
        parts.append(Mixture(w, means, post_cov.copy(), mix.labels))
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)
    return out


def birth(prev_dets, curr_dets, h_motion, cfg: PhdConfig, next_label: int = 1) -> tuple[Mixture, int]:
    """Two-point births; returns the new components and the next free label.

    Pairs are taken in coordinate order so labels do not depend on the order
    detections are listed in.
    """
    prev = np.asarray(prev_dets, dtype=np.float64).reshape(-1, 2)
    curr = np.asarray(curr_dets, dtype=np.float64).reshape(-1, 2)
    if len(prev) == 0 or len(curr) == 0:
        return Mixture(), next_label
    if h_motion is not None:
        prev = apply_h(check_homography(h_motion), prev)
    prev = prev[np.lexsort((prev[:, 1], prev[:, 0]))]
    curr = curr[np.lexsort((curr[:, 1], curr[:, 0]))]
    d = np.hypot(curr[:, None, 0] - prev[None, :, 0], curr[:, None, 1] - prev[None, :, 1])
    ic, ip = np.nonzero(d < cfg.theta)
    if len(ic) == 0:
        return Mixture(), next_label
    means = np.concatenate([curr[ic], curr[ic] - prev[ip]], axis=1)
    cov = np.diag([cfg.meas_noise ** 2, cfg.meas_noise ** 2, (cfg.theta / 4) ** 2, (cfg.theta / 4) ** 2])
    n = len(ic)
    labels = np.arange(next_label, next_label + n)
    return Mixture(np.full(n, cfg.w_init), means, np.repeat(cov[None], n, axis=0), labels), next_label + n


def prune_merge(mix: Mixture, cfg: PhdConfig, frame_shape=None) -> Mixture:
    """Prune, merge by Mahalanobis distance, cap, then drop weak or out-of-image components.

    ``frame_shape`` is ``(height, width)``; positions outside
    ``[0, width) x [0, height)`` are removed.
    """
    keep = np.nonzero(mix.weights >= cfg.prune_threshold)[0]
    mix = mix.subset(keep)
    if len(mix) == 0:
        return mix
    # heaviest first; ties by label so the result does not depend on input order
    remaining = list(np.lexsort((mix.labels, -mix.weights)))
    ws, ms, ps, ls = [], [], [], []
    while remaining:
        j = remaining[0]
        rest = np.array(remaining)
        diff = mix.means[rest] - mix.means[j]
        p_inv = np.linalg.inv(mix.covs[j])
        md = np.einsum("ni,ij,nj->n", diff, p_inv, diff)
        group = rest[md <= cfg.merge_distance]
        w = mix.weights[group]
        wt = w.sum()
        m = (w[:, None] * mix.means[group]).sum(axis=0) / wt
        dm = mix.means[group] - m
        p = (w[:, None, None] * (mix.covs[group] + dm[:, :, None] * dm[:, None, :])).sum(axis=0) / wt
        ws.append(wt)
        ms.append(m)
        ps.append(0.5 * (p + p.T))
        ls.append(mix.labels[j])
        in_group = set(group.tolist())
        remaining = [i for i in remaining if i not in in_group]
    out = Mixture(ws, ms, ps, ls)
    if len(out) > cfg.max_components:
        out = out.subset(np.sort(np.lexsort((out.labels, -out.weights))[:cfg.max_components]))
    ok = out.weights >= cfg.w_remove
    if frame_shape is not None:
        h, w = frame_shape
        x, y = out.means[:, 0], out.means[:, 1]
        ok &= (x >= 0) & (x < w) & (y >= 0) & (y < h)
    return out.subset(np.nonzero(ok)[0])


def split_shared_labels(mix: Mixture, cfg: PhdConfig, next_label: int) -> tuple[Mixture, int]:
    """Give fresh labels to confirmed components that share a label with a heavier one.

    The update copies every component once per detection, so a label can end
    up on two targets; the heaviest copy keeps it. Returns the relabelled
    mixture and the next free label.
    """
    labels = mix.labels.copy()
    seen: set = set()
    for i in np.lexsort((mix.labels, -mix.weights)):
        if mix.weights[i] <= cfg.w_show:
            break
        if int(labels[i]) in seen:
            labels[i] = next_label
            next_label += 1
        seen.add(int(labels[i]))
    return Mixture(mix.weights, mix.means, mix.covs, labels), next_label


def extract_tracks(mix: Mixture, cfg: PhdConfig) -> list[tuple[int, float, float, float]]:
    """``(label, x, y, weight)`` for components heavier than ``w_show``; one per label."""
    best: dict = {}
    for w, m, l in zip(mix.weights, mix.means, mix.labels):
        if w > cfg.w_show and (l not in best or w > best[l][0]):
            best[int(l)] = (float(w), float(m[0]), float(m[1]))
    return [(l, x, y, w) for l, (w, x, y) in sorted(best.items())]


class GmPhdTracker:
    """Sequential filter: predict, update, birth, prune/merge, label split, extract."""

    def __init__(self, cfg: PhdConfig | None = None, frame_shape=None):
        self.cfg = cfg or PhdConfig()
        self.frame_shape = frame_shape
        self.mixture = Mixture()
        self.prev_dets = np.zeros((0, 2))
        self.next_label = 1
        self.started = False

    def step(self, detections, h_motion=None) -> list[tuple[int, float, float, float]]:
        """Advance one frame; ``h_motion`` maps the previous frame into this one."""
        z = np.asarray(detections, dtype=np.float64).reshape(-1, 2)
        cfg = self.cfg
        if self.started:
            mix = predict(self.mixture, cfg, h_motion)
            mix = update(mix, z, cfg)
            born, self.next_label = birth(self.prev_dets, z, h_motion, cfg, self.next_label)
            mix = mix.concat(born)
        else:
            mix = Mixture()
            self.started = True
        mix = prune_merge(mix, cfg, self.frame_shape)
        self.mixture, self.next_label = split_shared_labels(mix, cfg, self.next_label)
        self.prev_dets = z
        return extract_tracks(self.mixture, cfg)


def run_tracker(det_by_frame: dict, homographies, frames, cfg: PhdConfig | None = None,
                frame_shape=None) -> list[tuple[int, int, float, float, float]]:
    """Track over consecutive ``frames``; rows ``(frame, track_id, x, y, weight)``.

    ``homographies[t]`` maps frame ``t-1`` into frame ``t``; it may be None
    for a static camera.
    """
    trk = GmPhdTracker(cfg, frame_shape)
    rows = []
    frames = list(frames)
    for k, t in enumerate(frames):
        h = None
        if k > 0 and homographies is not None:
            if t != frames[k - 1] + 1:
                raise ValueError("tracking needs consecutive frames")
            h = homographies[t]
        try:
            out = trk.step(det_by_frame.get(t, np.zeros((0, 2))), h)
        except np.linalg.LinAlgError as exc:
            raise RegistrationError(f"frame {t}: {exc}") from exc
        rows.extend((t, l, x, y, w) for l, x, y, w in out)
    return rows


TRACK_FIELDS = ["frame", "track_id", "x", "y", "weight"]


def write_tracks(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_FIELDS)
        for f, l, x, y, wt in rows:
            w.writerow([f, l, f"{x:.3f}", f"{y:.3f}", f"{wt:.6f}"])


def read_tracks(path) -> list[tuple[int, int, float, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACK_FIELDS[:4]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: tracks lack columns {sorted(missing)}")
        return [(int(r["frame"]), int(r["track_id"]), float(r["x"]), float(r["y"]), float(r.get("weight") or 0))
                for r in reader]
