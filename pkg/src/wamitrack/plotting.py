"""Report figures (PNG, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["STYLE", "plot_frame_scores", "plot_track_timeline", "plot_phi_sweep", "render_overlay"]

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})  # no version stamp, so reruns are byte-identical
    plt.close(fig)
    return path


def plot_frame_scores(per_frame: list[dict], path) -> Path:
    """Precision and recall per frame; ``per_frame`` rows carry frame/precision/recall."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 2.8))
        f = [r["frame"] for r in per_frame]
        ax.plot(f, [r["precision"] for r in per_frame], "o-", ms=3, label="precision")
        ax.plot(f, [r["recall"] for r in per_frame], "s-", ms=3, label="recall")
        ax.set_ylim(-0.02, 1.05)
        ax.set_xlabel("frame")
        ax.set_ylabel("score")
        ax.legend(loc="lower left", frameon=False)
        return _save(fig, path)


def plot_track_timeline(tracks, path) -> Path:
    """One horizontal line per track id spanning the frames it is confirmed in."""
    by_id: dict = {}
    for f, tid, *_ in tracks:
        by_id.setdefault(int(tid), []).append(int(f))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, max(2.0, 0.12 * len(by_id) + 1)))
        for row, tid in enumerate(sorted(by_id)):
            fr = np.array(sorted(by_id[tid]))
            ax.plot(fr, np.full(len(fr), row), "|", ms=6, color="C0")
        ax.set_yticks(range(len(by_id)))
        ax.set_yticklabels([str(t) for t in sorted(by_id)], fontsize=6)
        ax.set_xlabel("frame")
        ax.set_ylabel("track id")
        return _save(fig, path)


def plot_phi_sweep(table: dict, chosen: float, path) -> Path:
    phis = sorted(table)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        for key, mark in (("precision", "o"), ("recall", "s"), ("f1", "^")):
            ax.plot(phis, [table[p][key] for p in phis], marker=mark, ms=3, label=key)
        ax.axvline(chosen, color="0.5", lw=0.8, ls="--")
        ax.set_xlabel("classifier threshold")
        ax.set_ylim(-0.02, 1.05)
        ax.legend(frameon=False)
        return _save(fig, path)


def render_overlay(image: np.ndarray, detections, path, gt_points=None) -> Path:
    """Frame with detection polygons (direct in red, regression in green) and optional GT crosses."""
    h, w = image.shape
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(w / 100, h / 100))
        ax.imshow(image, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
        for d in detections:
            color = "r" if d.source == "direct" else "lime"
            if len(d.bbox) >= 2:
                poly = np.array(list(d.bbox) + [d.bbox[0]])
                ax.plot(poly[:, 0], poly[:, 1], "-", color=color, lw=0.7)
            ax.plot(d.x, d.y, ".", color=color, ms=2)
        if gt_points is not None and len(gt_points):
            g = np.asarray(gt_points)
            ax.plot(g[:, 0], g[:, 1], "x", color="c", ms=3, mew=0.6)
        ax.set_xlim(-0.5, w - 0.5)
        ax.set_ylim(h - 0.5, -0.5)
        ax.axis("off")
        return _save(fig, path)
