"""Image containers and pixel-level operations shared by every stage.

Images are ``numpy`` arrays indexed ``[y, x]``; intensities are kept as
float64 so medians and box means never lose precision on 8-bit input.
Masks are boolean arrays of the same shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "Frame",
    "Blob",
    "connected_components",
    "morph_open",
    "box_sum",
    "box_filter",
    "crop_patch",
]

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Frame:
    """A single-channel image with its frame number."""

    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"frame must be 2-D, got shape {self.pixels.shape}")
        if self.pixels.shape[0] == 0 or self.pixels.shape[1] == 0:
            raise ValueError("frame width and height must be positive")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class Blob:
    """An 8-connected set of foreground pixels."""

    xs: np.ndarray
    ys: np.ndarray
    label: int = 0
    area: int = field(init=False)
    centroid: tuple[float, float] = field(init=False)
    bbox: tuple[int, int, int, int] = field(init=False)  # xmin, ymin, xmax, ymax

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.int64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        self.area = int(self.xs.size)
        self.centroid = (float(self.xs.mean()), float(self.ys.mean()))
        self.bbox = (int(self.xs.min()), int(self.ys.min()),
                     int(self.xs.max()), int(self.ys.max()))

    def pixel_set(self) -> set[tuple[int, int]]:
        return set(zip(self.xs.tolist(), self.ys.tolist()))


def connected_components(mask: np.ndarray) -> list[Blob]:
    """Maximal 8-connected regions of ``mask``.

    Blobs come out in scanline order of their first (top-most, then
    left-most) pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    blobs = []
    for lab, (ys, xs) in sorted(ndimage.value_indices(labels, ignore_value=0).items()):
        blobs.append(Blob(xs=xs, ys=ys, label=int(lab)))
    return blobs


def box_sum(img: np.ndarray, rx: int, ry: int | None = None) -> np.ndarray:
    """Sum over the ``(2*ry+1, 2*rx+1)`` window around each pixel.

    Out-of-image pixels contribute zero. Uses an integral image, so the
    cost does not depend on the radius.
    """
    ry = rx if ry is None else ry
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    integral = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(img, axis=0), axis=1, out=integral[1:, 1:])
    y0 = np.clip(np.arange(h) - ry, 0, h)
    y1 = np.clip(np.arange(h) + ry + 1, 0, h)
    x0 = np.clip(np.arange(w) - rx, 0, w)
    x1 = np.clip(np.arange(w) + rx + 1, 0, w)
    return (integral[np.ix_(y1, x1)] - integral[np.ix_(y0, x1)]
            - integral[np.ix_(y1, x0)] + integral[np.ix_(y0, x0)])


def box_filter(img: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the ``(2r+1)^2`` window, clipped to the image bounds."""
    if radius < 1:
        raise ValueError("box filter radius must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    counts = box_sum(np.ones_like(img), radius)
    return box_sum(img, radius) / counts


def morph_open(mask: np.ndarray, kernel_w: int = 3, kernel_h: int = 3) -> np.ndarray:
    """Erosion then dilation with an all-true ``kernel_h x kernel_w`` element.

    Pixels outside the image are treated as false.
    """
    for k in (kernel_w, kernel_h):
        if k <= 0 or k % 2 == 0:
            raise ValueError(f"opening kernel dimensions must be odd and positive, got {kernel_w}x{kernel_h}")
    rx, ry = kernel_w // 2, kernel_h // 2
    full = kernel_w * kernel_h
    m = np.asarray(mask, dtype=np.float64)
    eroded = box_sum(m, rx, ry) > full - 0.5
    return box_sum(eroded.astype(np.float64), rx, ry) > 0.5


def crop_patch(img: np.ndarray, center: tuple[int, int], side: int) -> np.ndarray:
    """``side x side`` patch centred at integer ``center=(x, y)``; zero outside."""
    if side <= 0 or side % 2 == 0:
        raise ValueError("patch side must be odd and positive")
    img = np.asarray(img)
    h, w = img.shape
    cx, cy = int(center[0]), int(center[1])
    half = side // 2
    out = np.zeros((side, side), dtype=np.float64)
    x0, y0 = cx - half, cy - half
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, w), min(y0 + side, h)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out
