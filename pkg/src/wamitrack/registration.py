"""Frame-to-frame projective registration.

Convention: ``h_t^{t-k}`` maps pixel coordinates of frame ``t-k`` into
frame ``t``. Homographies are plain 3x3 float arrays normalised so that
``m[2, 2] == 1`` whenever that entry is non-zero.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgcore import crop_patch

__all__ = [
    "RegistrationError",
    "normalize_h",
    "check_homography",
    "translation",
    "apply_h",
    "jacobian_h",
    "TransformChain",
    "detect_corners",
    "patch_descriptors",
    "match_descriptors",
    "estimate_homography_ransac",
    "dlt_homography",
    "warp_frame",
    "DirectAlignment",
    "align_direct",
    "register_pair",
    "write_homographies",
    "read_homographies",
]


class RegistrationError(RuntimeError):
    """Raised when the data cannot support a homography estimate."""


# --------------------------------------------------------------------------
# homography algebra
# --------------------------------------------------------------------------

def normalize_h(m: np.ndarray) -> np.ndarray:
    m = np.array(m, dtype=np.float64).reshape(3, 3)
    if m[2, 2] != 0.0:
        m = m / m[2, 2]
    return m


def check_homography(m: np.ndarray) -> np.ndarray:
    m = normalize_h(m)
    if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) <= 1e-12:
        raise RegistrationError("homography is singular or non-finite")
    return m


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def apply_h(m: np.ndarray, pts) -> np.ndarray:
    """Map ``(n, 2)`` points (x, y) through ``m``."""
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    q = pts @ m[:, :2].T + m[:, 2]
    out = q[:, :2] / q[:, 2:3]
    return out[0] if single else out


def jacobian_h(m: np.ndarray, pt) -> np.ndarray:
    """2x2 derivative of the mapping ``x -> apply_h(m, x)`` at ``pt``."""
    x, y = float(pt[0]), float(pt[1])
    a = m @ np.array([x, y, 1.0])
    u, v = a[0] / a[2], a[1] / a[2]
    return np.array([
        [(m[0, 0] - u * m[2, 0]) / a[2], (m[0, 1] - u * m[2, 1]) / a[2]],
        [(m[1, 0] - v * m[2, 0]) / a[2], (m[1, 1] - v * m[2, 1]) / a[2]],
    ])


class TransformChain:
    """The last ``capacity`` homographies ``h_t^{t-1} .. h_t^{t-K}``.

    ``lag(k)`` returns ``h_t^{t-k}``. Pushing ``h_{t+1}^{t}`` re-bases every
    stored entry onto the new frame, so only one registration per frame is
    needed.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("chain capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[np.ndarray] = deque(maxlen=capacity)

    def push(self, h_new: np.ndarray) -> "TransformChain":
        h_new = normalize_h(h_new)
        rebased = [normalize_h(h_new @ h) for h in list(self._entries)[:self.capacity - 1]]
        self._entries.clear()
        self._entries.append(h_new)
        self._entries.extend(rebased)
        return self

    def lag(self, k: int) -> np.ndarray:
        if not 1 <= k <= len(self._entries):
            raise IndexError(f"chain holds lags 1..{len(self._entries)}, asked for {k}")
        return self._entries[k - 1]

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[np.ndarray]:
        return list(self._entries)


# --------------------------------------------------------------------------
# feature-based path
# --------------------------------------------------------------------------

def _harris_response(img: np.ndarray, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    sxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(img: np.ndarray, max_count: int = 500, nms_radius: int = 5,
                   rel_threshold: float = 1e-4, border: int = 5, subpixel: bool = False) -> np.ndarray:
    """Harris corners as an ``(n, 3)`` array of ``(x, y, score)``.

    Local maxima are suppressed within ``nms_radius``; output is sorted by
    descending score with ties broken by ``(y, x)``. Corners closer than
    ``border`` pixels to the image edge are dropped so descriptors fit.
    ``subpixel`` refines positions by a parabola fit through the response.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < 32 or w < 32:
        raise ValueError("corner detection needs a frame of at least 32x32")
    resp = _harris_response(img)
    peak = resp.max()
    if peak <= 1e-9:
        return np.zeros((0, 3))
    size = 2 * nms_radius + 1
    local_max = resp == ndimage.maximum_filter(resp, size=size, mode="constant", cval=-np.inf)
    cand = local_max & (resp > rel_threshold * peak)
    cand[:border, :] = False
    cand[-border:, :] = False
    cand[:, :border] = False
    cand[:, -border:] = False
    ys, xs = np.nonzero(cand)
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    # plateaus can leave several equal maxima inside one radius
    taken = np.zeros_like(cand)
    kept = []
    for i in order:
        x, y = xs[i], ys[i]
        if taken[y, x]:
            continue
        kept.append((x, y, scores[i]))
        taken[max(y - nms_radius, 0):y + nms_radius + 1, max(x - nms_radius, 0):x + nms_radius + 1] = True
        if len(kept) >= max_count:
            break
    out = np.array(kept, dtype=np.float64).reshape(-1, 3)
    if subpixel and len(out):
        out[:, :2] += _parabolic_offsets(resp, out[:, 0].astype(int), out[:, 1].astype(int))
    return out


def _parabolic_offsets(resp: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Per-axis parabola vertex around integer maxima, clipped to half a pixel."""
    def vertex(lo, mid, hi):
        den = lo - 2.0 * mid + hi
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(den < 0, 0.5 * (lo - hi) / den, 0.0)
        return np.clip(d, -0.5, 0.5)
    dx = vertex(resp[ys, xs - 1], resp[ys, xs], resp[ys, xs + 1])
    dy = vertex(resp[ys - 1, xs], resp[ys, xs], resp[ys + 1, xs])
    return np.stack([dx, dy], axis=1)


def patch_descriptors(img: np.ndarray, corners: np.ndarray, size: int = 11) -> np.ndarray:
    """Zero-mean, unit-norm ``size x size`` intensity patches, one row per corner."""
    desc = np.zeros((len(corners), size * size))
    for i, (x, y) in enumerate(np.asarray(corners)[:, :2]):
        p = crop_patch(img, (int(round(x)), int(round(y))), size).ravel()
        p = p - p.mean()
        n = np.linalg.norm(p)
        if n > 1e-9:
            desc[i] = p / n
    return desc


def match_descriptors(da: np.ndarray, db: np.ndarray, ratio: float = 0.8,
                      min_matches: int = 4) -> np.ndarray:
    """Mutual nearest neighbours under SSD that pass a ratio test.

    Returns an ``(m, 2)`` integer array of index pairs ``(i_a, i_b)``.
    """
    if len(da) < 2 or len(db) < 2:
        raise RegistrationError("too few descriptors to match")
    ssd = (da * da).sum(1)[:, None] + (db * db).sum(1)[None, :] - 2.0 * da @ db.T
    ssd = np.maximum(ssd, 0.0)
    nn_ab = np.argmin(ssd, axis=1)
    nn_ba = np.argmin(ssd, axis=0)
    two = np.partition(ssd, 1, axis=1)[:, :2]
    d1, d2 = np.sqrt(two[:, 0]), np.sqrt(two[:, 1])
    ia = np.arange(len(da))
    ok = (nn_ba[nn_ab] == ia) & (d1 < ratio * d2)
    pairs = np.stack([ia[ok], nn_ab[ok]], axis=1)
    if len(pairs) < min_matches:
        raise RegistrationError(f"only {len(pairs)} descriptor matches survived (need {min_matches})")
    return pairs


def _hartley(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, T


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares DLT on Hartley-normalised points; ``dst ~ H src``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 4:
        raise RegistrationError("DLT needs at least 4 correspondences")
    sn, Ts = _hartley(src)
    dn, Td = _hartley(dst)
    n = len(src)
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    one, zero = np.ones(n), np.zeros(n)
    A = np.zeros((2 * n, 9))
    A[0::2] = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=1)
    A[1::2] = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=1)
    _, sv, vt = np.linalg.svd(A)
    # a unique null vector needs rank 8
    if sv[7] <= 1e-9 * sv[0]:
        raise RegistrationError("degenerate point configuration for DLT")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) < 1e-15:
        raise RegistrationError("DLT produced a homography at infinity")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-12:
        raise RegistrationError("DLT produced a singular homography")
    return H


def _sample_is_degenerate(p: np.ndarray, eps: float = 1e-6) -> bool:
    a, b, c, d = p
    def area(p0, p1, p2):
        return abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
    scale = max(np.ptp(p[:, 0]), np.ptp(p[:, 1]), 1e-12) ** 2
    return min(area(a, b, c), area(a, b, d), area(a, c, d), area(b, c, d)) < eps * scale


def _reproj_err(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    q = src @ H[:, :2].T + H[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = q[:, :2] / q[:, 2:3]
        err = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    return np.where(np.isfinite(err), err, np.inf)


def estimate_homography_ransac(src, dst, iterations: int = 1000, inlier_tol: float = 2.0,
                               seed: int = 0, confidence: float = 0.999):
    """Robust ``dst ~ H src`` fit.

    Four-point DLT hypotheses, scored by inlier count (reprojection error
    below ``inlier_tol``), then refitted by least squares on the inliers.
    Stops early once ``confidence`` is reached. Returns ``(H, inlier_mask)``.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 4:
        raise RegistrationError("RANSAC needs at least 4 matches")
    rng = np.random.default_rng(seed)
    best_count, best_cost, best_mask = 0, np.inf, None
    needed = iterations
    it = 0
    while it < min(iterations, needed):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        if _sample_is_degenerate(src[idx]) or _sample_is_degenerate(dst[idx]):
            continue
        try:
            H = dlt_homography(src[idx], dst[idx])
        except RegistrationError:
            continue
        err = _reproj_err(H, src, dst)
        mask = err < inlier_tol
        count = int(mask.sum())
        cost = float(err[mask].sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best_count, best_cost, best_mask = count, cost, mask
            w = count / n
            if w >= 1.0:
                needed = 0
            elif w > 0:
                needed = int(np.ceil(np.log(1 - confidence) / np.log(1 - w ** 4)))
    if best_mask is None or best_count < 4:
        raise RegistrationError("no homography hypothesis with at least 4 inliers")
    mask = best_mask
    H = dlt_homography(src[mask], dst[mask])
    for _ in range(3):
        new_mask = _reproj_err(H, src, dst) < inlier_tol
        if new_mask.sum() < 4 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        H = dlt_homography(src[mask], dst[mask])
    return H, mask


# --------------------------------------------------------------------------
# warping
# --------------------------------------------------------------------------

def warp_frame(img: np.ndarray, h: np.ndarray, out_w: int | None = None, out_h: int | None = None,
               return_valid: bool = False):
    """Resample ``img`` into the geometry that ``h`` maps it to.

    Inverse mapping with bilinear interpolation; output pixels whose source
    falls outside the image are 0 (and false in the optional valid mask).
    """
    img = np.asarray(img, dtype=np.float64)
    src_h, src_w = img.shape
    out_w = src_w if out_w is None else out_w
    out_h = src_h if out_h is None else out_h
    hinv = np.linalg.inv(check_homography(h))
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    q0 = hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]
    q1 = hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]
    q2 = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    sx, sy = q0 / q2, q1 / q2
    eps = 1e-9
    valid = (sx >= -eps) & (sx <= src_w - 1 + eps) & (sy >= -eps) & (sy <= src_h - 1 + eps)
    out = ndimage.map_coordinates(img, [sy, sx], order=1, mode="nearest")
    out[~valid] = 0.0
    return (out, valid) if return_valid else out


# --------------------------------------------------------------------------
# direct (Lucas-Kanade) path
# --------------------------------------------------------------------------

@dataclass
class DirectAlignment:
    homography: np.ndarray
    converged: bool
    iterations: int
    rms: float


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


# fine pixel x maps to coarse (x - 0.5) / 2 under 2x2 block averaging
_S = np.array([[0.5, 0.0, -0.25], [0.0, 0.5, -0.25], [0.0, 0.0, 1.0]])
_S_INV = np.linalg.inv(_S)


def _huber(r: np.ndarray, k: float) -> tuple[float, np.ndarray]:
    a = np.abs(r)
    rho = np.where(a <= k, 0.5 * r * r, k * a - 0.5 * k * k)
    return float(np.mean(rho)), np.minimum(1.0, k / np.maximum(a, 1e-300))


def _lk_level(moving, reference, G, max_iter, tol, lam0=1e-4, max_fail=5, seeded=False):
    """Levenberg-damped Gauss-Newton on the 8 entries of ``G`` (reference -> moving).

    The cost is a Huber loss whose scale is fixed per level from the median
    absolute residual, so independently moving objects do not bias the fit.
    Repeated failed steps mean divergence only on an unseeded level; a level
    started from a coarser estimate that cannot improve on it has stalled.
    """
    h, w = reference.shape
    s = 2.0 / max(w, h)
    N = np.array([[s, 0.0, -s * (w - 1) / 2.0], [0.0, s, -s * (h - 1) / 2.0], [0.0, 0.0, 1.0]])
    N_inv = np.linalg.inv(N)
    gy_img, gx_img = np.gradient(moving)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs, ys = xs.ravel(), ys.ravel()
    xn, yn = s * xs + N[0, 2], s * ys + N[1, 2]
    ref = reference.ravel()

    def residuals(Gn):
        a0 = Gn[0, 0] * xn + Gn[0, 1] * yn + Gn[0, 2]
        a1 = Gn[1, 0] * xn + Gn[1, 1] * yn + Gn[1, 2]
        a2 = Gn[2, 0] * xn + Gn[2, 1] * yn + Gn[2, 2]
        un, vn = a0 / a2, a1 / a2
        u, v = (un - N[0, 2]) / s, (vn - N[1, 2]) / s
        valid = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
        if valid.sum() < 16:
            return None
        u, v = u[valid], v[valid]
        r = ndimage.map_coordinates(moving, [v, u], order=1, mode="nearest") - ref[valid]
        return r, valid, u, v, un[valid], vn[valid], a2[valid]

    Gn = normalize_h(N @ G @ N_inv)
    cur = residuals(Gn)
    if cur is None:
        return G, False, 0, np.inf
    sigma = 1.4826 * float(np.median(np.abs(cur[0])))
    k = 1.345 * max(sigma, 1e-6 * max(float(np.ptp(ref)), 1.0))
    err, wts = _huber(cur[0], k)
    lam = lam0
    fails = 0
    converged = False
    system = None
    accepted = 0
    it = 0
    for it in range(1, max_iter + 1):
        if system is None:
            r, valid, u, v, un, vn, a2 = cur
            gx = ndimage.map_coordinates(gx_img, [v, u], order=1, mode="nearest") / s
            gy = ndimage.map_coordinates(gy_img, [v, u], order=1, mode="nearest") / s
            x0, y0 = xn[valid] / a2, yn[valid] / a2
            proj = gx * un + gy * vn
            J = np.stack([gx * x0, gx * y0, gx / a2, gy * x0, gy * y0, gy / a2,
                          -proj * x0, -proj * y0], axis=1)
            Jw = J * wts[:, None]
            A = Jw.T @ J
            system = (A, -Jw.T @ r, np.diag(np.diag(A) + 1e-12))
        A, b, D = system
        try:
            delta = np.linalg.solve(A + lam * D, b)
        except np.linalg.LinAlgError:
            break
        trial = Gn + np.append(delta, 0.0).reshape(3, 3)
        new = residuals(trial) if np.isfinite(trial).all() else None
        new_err, new_w = _huber(new[0], k) if new is not None else (np.inf, None)
        small = np.linalg.norm(delta) < tol
        if new_err <= err:
            Gn, cur, err, wts = trial, new, new_err, new_w
            lam = max(lam * 0.1, 1e-12)
            fails = 0
            accepted += 1
            system = None
        elif not small:
            lam *= 10.0
            fails += 1
            if fails >= max_fail:
                if not accepted and not seeded:
                    return None, False, it, np.sqrt(2.0 * err)
                # stalled at a minimum the damping cannot improve on
                converged = True
                break
        if small:
            converged = True
            break
    return N_inv @ Gn @ N, converged, it, float(np.sqrt(np.mean(cur[0] ** 2)))


def align_direct(moving: np.ndarray, reference: np.ndarray, init: np.ndarray | None = None,
                 pyramid_levels: int = 3, max_iter: int = 50, tol: float = 1e-6) -> DirectAlignment:
    """Homography ``H`` such that ``warp_frame(moving, H)`` matches ``reference``.

    Coarse-to-fine minimisation of a robust (Huber) intensity difference
    cost. A level diverges when the error rises on 5 consecutive
    trial steps; the result is then ``init`` with ``converged=False``.
    """
    moving = np.asarray(moving, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if moving.shape != reference.shape:
        raise ValueError("direct alignment needs frames of equal size")
    if pyramid_levels < 1:
        raise ValueError("pyramid_levels must be >= 1")
    init = np.eye(3) if init is None else check_homography(init)
    pyr = [(moving, reference)]
    for _ in range(pyramid_levels - 1):
        m, r = pyr[-1]
        if min(m.shape) < 32:
            break
        pyr.append((_downsample(m), _downsample(r)))
    n_levels = len(pyr)
    scale = np.linalg.matrix_power(_S, n_levels - 1)
    G = scale @ np.linalg.inv(init) @ np.linalg.inv(scale)
    converged, total, rms = False, 0, np.inf
    for level in range(n_levels - 1, -1, -1):
        m, r = pyr[level]
        if level > 0:
            m, r = ndimage.gaussian_filter(m, 0.7), ndimage.gaussian_filter(r, 0.7)
        G_new, converged, its, rms = _lk_level(m, r, G, max_iter, tol, seeded=level < n_levels - 1)
        total += its
        if G_new is None:
            return DirectAlignment(init.copy(), False, total, rms)
        G = G_new
        if level > 0:
            G = _S_INV @ G @ _S
    H = check_homography(np.linalg.inv(G))
    return DirectAlignment(H, converged, total, rms)


def register_pair(prev: np.ndarray, curr: np.ndarray, mode: str = "feature", seed: int = 0,
                  ransac_iterations: int = 1000, inlier_tol: float = 2.0,
                  max_corners: int = 500, pyramid_levels: int = 3) -> np.ndarray:
    """Estimate ``h_t^{t-1}`` mapping ``prev`` coordinates into ``curr``."""
    if mode == "feature":
        ca = detect_corners(prev, max_count=max_corners, subpixel=True)
        cb = detect_corners(curr, max_count=max_corners, subpixel=True)
        if len(ca) < 8 or len(cb) < 8:
            raise RegistrationError(f"too few corners ({len(ca)}, {len(cb)}) for registration")
        pairs = match_descriptors(patch_descriptors(prev, ca), patch_descriptors(curr, cb))
        H, _ = estimate_homography_ransac(ca[pairs[:, 0], :2], cb[pairs[:, 1], :2],
                                          iterations=ransac_iterations, inlier_tol=inlier_tol, seed=seed)
        return check_homography(H)
    if mode == "direct":
        res = align_direct(prev, curr, np.eye(3), pyramid_levels)
        return res.homography
    raise ValueError(f"unknown registration mode {mode!r}")


def write_homographies(path, hs) -> None:
    with open(path, "w") as fh:
        for h in hs:
            fh.write(" ".join(f"{v:.17g}" for v in normalize_h(h).ravel()) + "\n")


def read_homographies(path) -> list[np.ndarray]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 9:
            raise ValueError(f"{path}:{lineno}: expected 9 numbers, got {len(vals)}")
        out.append(normalize_h(np.array([float(v) for v in vals])))
    return out
