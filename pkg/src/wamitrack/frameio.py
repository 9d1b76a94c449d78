"""Reading and writing frames: binary PGM (maxval 255) and 8-bit PNG."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .imgcore import Frame

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_image",
    "write_image",
    "write_mask",
    "list_frames",
    "load_video",
    "save_video",
]

_FRAME_RE = re.compile(r"(\d+)\.(pgm|png)$", re.IGNORECASE)


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    data = _to_u8(img)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(int(buf[start:pos]))
    return tokens, pos + 1  # exactly one whitespace byte after maxval


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    (w, h, maxval), pos = _pgm_tokens(buf, 3)
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos)
    img = raw.reshape(h, w).astype(np.float64)
    if maxval != 255:
        img *= 255.0 / maxval
    return img


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, img)
    else:
        Image.fromarray(_to_u8(img), mode="L").save(path, format="PNG")


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, np.where(np.asarray(mask, dtype=bool), 255, 0))


def list_frames(video_dir) -> list[Path]:
    """Frame files in ``video_dir`` ordered by the trailing frame number."""
    found = []
    for p in Path(video_dir).iterdir():
        m = _FRAME_RE.search(p.name)
        if m and p.is_file():
            found.append((int(m.group(1)), p))
    found.sort()
    return [p for _, p in found]


def load_video(video_dir) -> list[Frame]:
    paths = list_frames(video_dir)
    if not paths:
        raise FileNotFoundError(f"no PGM/PNG frames found in {video_dir}")
    return [Frame(read_image(p), index=int(_FRAME_RE.search(p.name).group(1))) for p in paths]


def save_video(video_dir, frames, fmt: str = "pgm") -> list[Path]:
    out = Path(video_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fr in frames:
        p = out / f"frame_{fr.index:05d}.{fmt}"
        write_image(p, fr.pixels)
        paths.append(p)
    return paths
