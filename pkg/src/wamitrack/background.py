"""Median background over aligned history and low-threshold subtraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import Blob, box_sum, connected_components, morph_open
from .registration import TransformChain, warp_frame

__all__ = [
    "SubtractionConfig",
    "FULL_PROFILE",
    "AOI_PROFILE",
    "BackgroundModel",
    "lower_median",
    "build_background",
    "brightness_compensate",
    "subtract",
    "propose_blobs",
]


@dataclass(frozen=True)
class SubtractionConfig:
    tau: float = 8.0
    open_kernel: tuple[int, int] = (3, 3)
    brightness_radius: int = 15
    history: int = 3

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("background threshold tau must be positive")
        if self.history < 1:
            raise ValueError("history length L must be >= 1")


# full stitched frames vs. cropped areas of interest
FULL_PROFILE = SubtractionConfig(tau=8.0, history=3)
AOI_PROFILE = SubtractionConfig(tau=5.0, history=5)


@dataclass(frozen=True)
class BackgroundModel:
    background: np.ndarray
    valid: np.ndarray
    aligned: tuple[np.ndarray, ...]  # history warped into the current frame, lag 1 first

    @property
    def length(self) -> int:
        return len(self.aligned)


def lower_median(stack: np.ndarray, axis: int = 0) -> np.ndarray:
    """Per-element median; for an even count the lower of the two middles."""
    stack = np.asarray(stack)
    k = (stack.shape[axis] - 1) // 2
    return np.take(np.partition(stack, k, axis=axis), k, axis=axis)


def build_background(history, chain: TransformChain, length: int | None = None) -> BackgroundModel:
    """Median of the previous ``L`` frames warped into the current frame.

    ``history[k-1]`` is frame ``t-k``; ``chain.lag(k)`` must map it to ``t``.
    Pixels where any warped source falls outside its frame are invalid.
    """
    length = len(history) if length is None else length
    if len(history) < length:
        raise ValueError(f"background needs {length} history frames, got {len(history)}")
    if len(chain) < length:
        raise ValueError(f"transform chain holds {len(chain)} lags, need {length}")
    aligned, valid = [], None
    for k in range(1, length + 1):
        img = np.asarray(history[k - 1], dtype=np.float64)
        warped, ok = warp_frame(img, chain.lag(k), return_valid=True)
        aligned.append(warped)
        valid = ok if valid is None else valid & ok
    bg = lower_median(np.stack(aligned))
    return BackgroundModel(background=bg, valid=valid, aligned=tuple(aligned))


def _masked_box_mean(img: np.ndarray, valid: np.ndarray, radius: int) -> np.ndarray:
    w = valid.astype(np.float64)
    counts = box_sum(w, radius)
    return box_sum(img * w, radius) / np.maximum(counts, 1.0)


def brightness_compensate(frame: np.ndarray, background: np.ndarray, radius: int = 15,
                          valid: np.ndarray | None = None) -> np.ndarray:
    """``frame - box(frame) + box(background)``.

    Removes low-frequency brightness offsets between the frame and its
    background. Box means only average over ``valid`` pixels, so warp
    borders do not bleed into the estimate.
    """
    frame = np.asarray(frame, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if frame.shape != background.shape:
        raise ValueError("frame and background differ in shape")
    if radius < 1:
        return frame.copy()
    valid = np.ones(frame.shape, dtype=bool) if valid is None else valid
    return frame - _masked_box_mean(frame, valid, radius) + _masked_box_mean(background, valid, radius)


def subtract(frame: np.ndarray, model: BackgroundModel, cfg: SubtractionConfig) -> np.ndarray:
    """Foreground mask ``|I_t - I_t^bg| > tau`` followed by morphological opening."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != model.background.shape:
        raise ValueError("frame and background differ in shape")
    comp = brightness_compensate(frame, model.background, cfg.brightness_radius, model.valid)
    fg = (np.abs(comp - model.background) > cfg.tau) & model.valid
    return morph_open(fg, *cfg.open_kernel)


def propose_blobs(mask: np.ndarray) -> list[Blob]:
    return connected_components(mask)
