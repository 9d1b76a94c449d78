"""Deterministic synthetic wide-area video with ground truth.

A scene lives on a world canvas (pixels, ground sample distance ``gsd``
metres per pixel). Each frame is a view of that canvas through the camera
homography ``H_t`` (world -> frame) with moving vehicles, static high-contrast
decoys that jitter to mimic parallax, per-tile brightness steps and sensor
noise drawn on top. Everything is seeded, and each frame draws its own
random stream so frames can be rendered in any order.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgcore import Frame
from .registration import apply_h, jacobian_h, normalize_h, translation

__all__ = [
    "SpecError",
    "Vehicle",
    "Road",
    "Decoy",
    "Tile",
    "Camera",
    "SceneSpec",
    "GTRow",
    "SynthOutput",
    "render_video",
    "preset",
    "PRESETS",
    "write_ground_truth",
    "read_ground_truth",
    "load_spec",
]


class SpecError(ValueError):
    """A scene description field is missing or out of range."""


@dataclass
class Road:
    points: list  # polyline in world pixels
    width: float = 14.0
    intensity: float = 85.0


@dataclass
class Vehicle:
    id: int
    path: list  # waypoints in world pixels
    speeds: list = field(default_factory=lambda: [[0, 2.5]])  # [first frame, metres per frame]
    loop: bool = True
    offset: float = 0.0  # starting arc length along the path, pixels
    length: float = 10.0
    width: float = 6.0
    intensity: float = 210.0


@dataclass
class Decoy:
    x: float
    y: float
    w: float = 12.0
    h: float = 12.0
    intensity: float = 235.0
    amplitude: int = 1  # jitter in whole pixels per frame


@dataclass
class Tile:
    x0: int
    y0: int
    x1: int  # exclusive, frame pixels
    y1: int
    events: list = field(default_factory=list)  # [first frame, last frame, offset]


@dataclass
class Camera:
    drift: list = field(default_factory=lambda: [0.0, 0.0])  # pixels per frame
    rotate_deg: float = 0.0  # per frame
    jitter: float = 0.0  # std of per-frame translation noise, pixels
    jitter_deg: float = 0.0
    zoom_amp: float = 0.0  # relative scale oscillation
    zoom_period: float = 20.0


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 256
    frames: int = 30
    seed: int = 0
    margin: int = 48  # extra world canvas around the first view
    gsd: float = 0.25
    noise_sigma: float = 1.5
    texture_mean: float = 125.0
    texture_std: float = 16.0
    texture_scale: int = 12
    roads: list = field(default_factory=list)
    vehicles: list = field(default_factory=list)
    decoys: list = field(default_factory=list)
    tiles: list = field(default_factory=list)
    camera: Camera = field(default_factory=Camera)

    @property
    def canvas_shape(self) -> tuple[int, int]:
        return self.height + 2 * self.margin, self.width + 2 * self.margin

    def validate(self) -> "SceneSpec":
        if self.width < 32 or self.height < 32:
            raise SpecError("width/height must be at least 32 pixels")
        if self.frames < 1:
            raise SpecError("frames must be >= 1")
        if self.gsd <= 0:
            raise SpecError("gsd must be positive")
        if self.noise_sigma < 0 or self.margin < 0:
            raise SpecError("noise_sigma and margin must be non-negative")
        ch, cw = self.canvas_shape
        ids = set()
        for i, v in enumerate(self.vehicles):
            if v.id in ids:
                raise SpecError(f"vehicles[{i}]: duplicate id {v.id}")
            ids.add(v.id)
            pts = np.asarray(v.path, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
                raise SpecError(f"vehicles[{i}].path needs at least two (x, y) points")
            if pts.min() < 0 or np.any(pts[:, 0] > cw - 1) or np.any(pts[:, 1] > ch - 1):
                raise SpecError(f"vehicles[{i}].path leaves the {cw}x{ch} canvas")
            if v.length <= 0 or v.width <= 0:
                raise SpecError(f"vehicles[{i}]: size must be positive")
            if not v.speeds or any(len(s) != 2 or s[1] < 0 for s in v.speeds):
                raise SpecError(f"vehicles[{i}].speeds must be [frame, non-negative m/frame] pairs")
        for i, t in enumerate(self.tiles):
            if not (0 <= t.x0 < t.x1 <= self.width and 0 <= t.y0 < t.y1 <= self.height):
                raise SpecError(f"tiles[{i}] is outside the frame")
        for i, d in enumerate(self.decoys):
            if d.amplitude < 0:
                raise SpecError(f"decoys[{i}].amplitude must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown scene keys: {sorted(unknown)}")
        try:
            d["roads"] = [Road(**r) for r in d.get("roads", [])]
            d["vehicles"] = [Vehicle(**v) for v in d.get("vehicles", [])]
            d["decoys"] = [Decoy(**x) for x in d.get("decoys", [])]
            d["tiles"] = [Tile(**t) for t in d.get("tiles", [])]
            d["camera"] = Camera(**d.get("camera", {}))
        except TypeError as exc:
            raise SpecError(str(exc)) from None
        return cls(**d).validate()


def load_spec(path) -> SceneSpec:
    """Read a JSON scene; a bare ``{"preset": name, ...}`` starts from a preset."""
    d = json.loads(Path(path).read_text())
    if "preset" in d:
        base = preset(d.pop("preset")).to_dict()
        base.update(d)
        d = base
    return SceneSpec.from_dict(d)


# --------------------------------------------------------------------------
# scene geometry
# --------------------------------------------------------------------------

def _value_noise(shape, scale: int, rng: np.random.Generator) -> np.ndarray:
    gh, gw = shape[0] // scale + 4, shape[1] // scale + 4
    coarse = rng.standard_normal((gh, gw))
    fine = ndimage.zoom(coarse, scale, order=3, mode="reflect")
    return fine[scale:scale + shape[0], scale:scale + shape[1]]


def _segment_distance(xs, ys, p, q):
    d = q - p
    L2 = float(d @ d)
    if L2 == 0:
        return np.hypot(xs - p[0], ys - p[1])
    t = np.clip(((xs - p[0]) * d[0] + (ys - p[1]) * d[1]) / L2, 0.0, 1.0)
    return np.hypot(xs - (p[0] + t * d[0]), ys - (p[1] + t * d[1]))


def _texture(spec: SceneSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0x7E])
    shape = spec.canvas_shape
    s = spec.texture_scale
    tex = _value_noise(shape, s, rng) + 0.5 * _value_noise(shape, max(s // 2, 2), rng)
    tex = (tex - tex.mean()) / (tex.std() + 1e-12)
    canvas = spec.texture_mean + spec.texture_std * tex
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    for road in spec.roads:
        pts = np.asarray(road.points, dtype=float)
        dist = np.full(shape, np.inf)
        for p, q in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(xs, ys, p, q))
        # soft one-pixel edge keeps the road boundary band-limited
        a = np.clip(road.width / 2 + 0.5 - dist, 0.0, 1.0)
        road_px = road.intensity + 0.3 * (canvas - spec.texture_mean)
        canvas = (1 - a) * canvas + a * road_px
    return canvas


class _Polyline:
    def __init__(self, pts, loop: bool):
        pts = np.asarray(pts, dtype=float)
        if loop:
            pts = np.vstack([pts, pts[:1]])
        self.pts = pts
        self.loop = loop
        seg = np.diff(pts, axis=0)
        self.seglen = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seglen)])
        self.total = float(self.cum[-1])

    def at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """Position and unit heading at arc length ``s``."""
        if self.loop:
            s = s % self.total
        else:
            s = min(max(s, 0.0), self.total)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(max(i, 0), len(self.seglen) - 1)
        while self.seglen[i] == 0 and i > 0:
            i -= 1
        d = (self.pts[i + 1] - self.pts[i]) / max(self.seglen[i], 1e-12)
        return self.pts[i] + d * (s - self.cum[i]), d


def _arc_lengths(v: Vehicle, frames: int, gsd: float) -> np.ndarray:
    sched = sorted((int(f), float(sp)) for f, sp in v.speeds)
    s = np.empty(frames)
    cur = float(v.offset)
    for t in range(frames):
        s[t] = cur
        speed = 0.0
        for f, sp in sched:
            if f <= t:
                speed = sp
        cur += speed / gsd
    return s


def _camera_poses(spec: SceneSpec) -> list[np.ndarray]:
    cam = spec.camera
    rng = np.random.default_rng([spec.seed, 0xCA])
    cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    base = translation(-spec.margin, -spec.margin)
    poses = []
    for t in range(spec.frames):
        jx, jy = (rng.standard_normal(2) * cam.jitter) if t else (0.0, 0.0)
        jr = rng.standard_normal() * cam.jitter_deg if t else 0.0
        ang = math.radians(cam.rotate_deg * t + jr)
        sc = 1.0 + cam.zoom_amp * math.sin(2 * math.pi * t / cam.zoom_period)
        c, s = math.cos(ang) * sc, math.sin(ang) * sc
        about = translation(cx, cy) @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) @ translation(-cx, -cy)
        shift = translation(cam.drift[0] * t + jx, cam.drift[1] * t + jy)
        poses.append(normalize_h(shift @ about @ base))
    return poses


def _coverage(shape, center, heading, length, width, sub: int = 4):
    """Anti-aliased coverage of an oriented rectangle by ``sub x sub`` supersampling."""
    h, w = shape
    r = 0.5 * math.hypot(length, width) + 1.0
    x0, x1 = max(int(math.floor(center[0] - r)), 0), min(int(math.ceil(center[0] + r)), w - 1)
    y0, y1 = max(int(math.floor(center[1] - r)), 0), min(int(math.ceil(center[1] + r)), h - 1)
    if x0 > x1 or y0 > y1:
        return None
    off = (np.arange(sub) + 0.5) / sub - 0.5
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(float)
    sx = xs[..., None, None] + off[None, None, None, :] - center[0]
    sy = ys[..., None, None] + off[None, None, :, None] - center[1]
    u = sx * heading[0] + sy * heading[1]
    v = -sx * heading[1] + sy * heading[0]
    inside = (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)
    return (slice(y0, y1 + 1), slice(x0, x1 + 1)), inside.mean(axis=(2, 3))


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GTRow:
    frame: int
    id: int
    x: float
    y: float
    world_x: float  # metres
    world_y: float
    displacement_m: float  # to the previous frame (first frame: to the next)


@dataclass
class SynthOutput:
    frames: list  # of Frame
    ground_truth: list  # of GTRow
    homographies: list  # h_t^{t-1}; identity for the first frame
    world_to_frame: list  # H_t
    spec: SceneSpec


def _vehicle_tracks(spec: SceneSpec):
    out = []
    for v in spec.vehicles:
        line = _Polyline(v.path, v.loop)
        s = _arc_lengths(v, spec.frames, spec.gsd)
        pos, head = zip(*(line.at(si) for si in s))
        out.append((v, np.array(pos), np.array(head)))
    return out


def render_video(spec: SceneSpec) -> SynthOutput:
    spec.validate()
    canvas = _texture(spec)
    poses = _camera_poses(spec)
    ch, cw = canvas.shape
    corners = np.array([[0, 0], [spec.width - 1, 0], [0, spec.height - 1], [spec.width - 1, spec.height - 1]], float)
    for t, H in enumerate(poses):
        back = apply_h(np.linalg.inv(H), corners)
        if back.min() < 0 or np.any(back[:, 0] > cw - 1) or np.any(back[:, 1] > ch - 1):
            raise SpecError(f"camera view of frame {t} leaves the world canvas; enlarge margin")
    tracks = _vehicle_tracks(spec)
    frames, gt = [], []
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(float)
    for t, H in enumerate(poses):
        rng = np.random.default_rng([spec.seed, 0xF0, t])
        hinv = np.linalg.inv(H)
        q = hinv[:, 0, None, None] * xs + hinv[:, 1, None, None] * ys + hinv[:, 2, None, None]
        img = ndimage.map_coordinates(canvas, [q[1] / q[2], q[0] / q[2]], order=1, mode="nearest")
        for v, pos, head in tracks:
            p = apply_h(H, pos[t])
            hd = jacobian_h(H, pos[t]) @ head[t]
            hd = hd / (np.hypot(*hd) + 1e-12)
            cov = _coverage(img.shape, p, hd, v.length, v.width)
            if cov is not None:
                sl, a = cov
                img[sl] = (1 - a) * img[sl] + a * v.intensity
            if 0 <= p[0] <= spec.width - 1 and 0 <= p[1] <= spec.height - 1:
                nb = t - 1 if t > 0 else min(t + 1, spec.frames - 1)
                disp = float(np.hypot(*(pos[t] - pos[nb]))) * spec.gsd
                gt.append(GTRow(t, v.id, float(p[0]), float(p[1]),
                                float(pos[t][0] * spec.gsd), float(pos[t][1] * spec.gsd), disp))
        for d in spec.decoys:
            p = apply_h(H, [d.x, d.y])
            if d.amplitude:
                p = p + rng.integers(-d.amplitude, d.amplitude + 1, size=2)
            cov = _coverage(img.shape, p, np.array([1.0, 0.0]), d.w, d.h)
            if cov is not None:
                sl, a = cov
                img[sl] = (1 - a) * img[sl] + a * d.intensity
        for tile in spec.tiles:
            for f0, f1, off in tile.events:
                if f0 <= t <= f1:
                    img[tile.y0:tile.y1, tile.x0:tile.x1] += off
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
        frames.append(Frame(np.clip(np.round(img), 0, 255), index=t))
    homs = [np.eye(3)] + [normalize_h(poses[t] @ np.linalg.inv(poses[t - 1])) for t in range(1, len(poses))]
    return SynthOutput(frames, gt, homs, poses, spec)


# --------------------------------------------------------------------------
# ground-truth files
# --------------------------------------------------------------------------

GT_FIELDS = ["frame", "id", "x", "y", "world_x", "world_y", "displacement_m"]


def write_ground_truth(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GT_FIELDS)
        for r in rows:
            w.writerow([r.frame, r.id, f"{r.x:.4f}", f"{r.y:.4f}",
                        f"{r.world_x:.6f}", f"{r.world_y:.6f}", f"{r.displacement_m:.6f}"])


def read_ground_truth(path) -> list[GTRow]:
    """Read a ground-truth CSV; world columns are optional (NaN when absent)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"frame", "id", "x", "y"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: ground truth lacks columns {sorted(missing)}")
        for rec in reader:
            get = lambda k: float(rec[k]) if rec.get(k) not in (None, "") else math.nan
            rows.append(GTRow(int(rec["frame"]), int(rec["id"]), float(rec["x"]), float(rec["y"]),
                              get("world_x"), get("world_y"), get("displacement_m")))
    return rows


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def _ring(x0, y0, x1, y1, inset=0.0, clockwise=True):
    pts = [[x0 + inset, y0 + inset], [x1 - inset, y0 + inset], [x1 - inset, y1 - inset], [x0 + inset, y1 - inset]]
    return pts if clockwise else pts[::-1]


def _ring_vehicles(path, n, first_id, speed, phase=0.0, intensities=(215.0, 30.0)):
    total = _Polyline(path, True).total
    return [Vehicle(id=first_id + i, path=path, speeds=[[0, speed]], offset=phase + i * total / n,
                    intensity=intensities[i % len(intensities)]) for i in range(n)]


def _clean(seed=1, **kw) -> SceneSpec:
    m = 48
    ring = _ring(m + 44, m + 44, m + 212, m + 212)
    return SceneSpec(
        seed=seed, margin=m,
        roads=[Road(points=ring + [ring[0]])],
        vehicles=_ring_vehicles(ring, 5, 1, 2.5),
        camera=Camera(drift=[0.4, 0.25], rotate_deg=0.05),
        **kw,
    )


def _dense(seed=2, **kw) -> SceneSpec:
    m, n = 48, 320
    lo, hi, mid = m + 40, m + n - 40, m + n / 2
    outer = _ring(lo, lo, hi, hi, inset=-4, clockwise=True)
    inner = _ring(lo, lo, hi, hi, inset=4, clockwise=False)
    horiz = [[lo, mid - 4], [hi, mid - 4], [hi, mid + 4], [lo, mid + 4]]
    vert = [[mid + 4, lo], [mid + 4, hi], [mid - 4, hi], [mid - 4, lo]]
    ring = _ring(lo, lo, hi, hi)
    vehicles = (_ring_vehicles(outer, 5, 1, 2.5)
                + _ring_vehicles(inner, 5, 6, 2.2, phase=37.0, intensities=(30.0, 220.0))
                + _ring_vehicles(horiz, 5, 11, 2.8, phase=11.0)
                + _ring_vehicles(vert, 5, 16, 2.0, phase=53.0, intensities=(25.0, 205.0)))
    return SceneSpec(
        width=n, height=n, frames=40, seed=seed, margin=m,
        roads=[Road(points=ring + [ring[0]], width=18), Road(points=[[lo, mid], [hi, mid]], width=18),
               Road(points=[[mid, lo], [mid, hi]], width=18)],
        vehicles=vehicles,
        decoys=[Decoy(x=m + 15, y=m + 300, amplitude=2), Decoy(x=m + 110, y=m + 110, intensity=20, amplitude=2),
                Decoy(x=m + 230, y=m + 235, amplitude=2)],
        tiles=[Tile(0, 0, n // 2, n // 2, events=[[15, 25, 12.0]])],
        camera=Camera(drift=[0.3, -0.2], rotate_deg=0.04),
        **kw,
    )


def _stopgo(seed=3, **kw) -> SceneSpec:
    spec = _clean(seed=seed, **kw)
    for i, v in enumerate(spec.vehicles[:3]):
        v.speeds = [[0, 2.5], [8 + 2 * i, 0.0], [18 + 2 * i, 2.5]]
    spec.vehicles[3].speeds = [[0, 2.5], [12, 0.5], [20, 2.5]]  # creeping below 0.8 m
    return spec


def _flicker(seed=4, **kw) -> SceneSpec:
    spec = _clean(seed=seed, **kw)
    spec.tiles = [Tile(0, 0, 128, 128, events=[[10, 20, 12.0]]),
                  Tile(128, 128, 256, 256, events=[[15, 25, -10.0]])]
    return spec


def _parallax(seed=5, **kw) -> SceneSpec:
    spec = _clean(seed=seed, **kw)
    m = spec.margin
    spec.decoys = [Decoy(x=m + x, y=m + y, intensity=it, amplitude=2)
                   for x, y, it in [(20, 20, 235), (128, 128, 20), (236, 30, 235),
                                    (30, 236, 20), (236, 236, 235), (128, 20, 20)]]
    return spec


def _unstable(seed=6, **kw) -> SceneSpec:
    spec = _clean(seed=seed, **kw)
    spec.margin = 80
    m = spec.margin
    ring = _ring(m + 44, m + 44, m + 212, m + 212)
    spec.roads = [Road(points=ring + [ring[0]])]
    spec.vehicles = _ring_vehicles(ring, 5, 1, 2.5)
    spec.camera = Camera(drift=[0.5, 0.3], jitter=4.0, jitter_deg=0.8, zoom_amp=0.02, zoom_period=12)
    return spec


def _merged(seed=7, **kw) -> SceneSpec:
    """Side-by-side vehicle pairs 8 px apart shuttling on four non-crossing lanes."""
    m, lo, hi = 48, 70, 186
    roads, vehicles = [], []
    lanes = [((lo, 40), (hi, 40)), ((hi, 216), (lo, 216)), ((40, hi), (40, lo)), ((216, lo), (216, hi))]
    for k, ((x0, y0), (x1, y1)) in enumerate(lanes):
        nx, ny = (0.0, 4.0) if y0 == y1 else (4.0, 0.0)  # half the centre spacing, across the lane
        roads.append(Road(points=[[m + x0, m + y0], [m + x1, m + y1]], width=20))
        for side, it in ((-1, 210.0), (1, 35.0 if k % 2 else 225.0)):
            path = [[m + x0 + side * nx, m + y0 + side * ny], [m + x1 + side * nx, m + y1 + side * ny]]
            vehicles.append(Vehicle(id=len(vehicles) + 1, path=path, speeds=[[0, 1.5]],
                                    offset=17.0 * k, intensity=it))
    return SceneSpec(seed=seed, margin=m, roads=roads, vehicles=vehicles,
                     camera=Camera(drift=[0.3, 0.2], rotate_deg=0.03), **kw)


PRESETS = {
    "clean": _clean,
    "dense": _dense,
    "stopgo": _stopgo,
    "flicker": _flicker,
    "parallax": _parallax,
    "unstable-camera": _unstable,
    "merged": _merged,
}


def preset(name: str, **overrides) -> SceneSpec:
    """A named scene; keyword overrides (``seed``, ``frames``...) replace fields."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**overrides).validate()
