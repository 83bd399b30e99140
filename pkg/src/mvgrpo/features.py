"""Sparse correspondences: Harris corners, NCC patch matching, rigid 3D alignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import to_gray

TOP_K = 64
NMS_RADIUS = 3
PATCH = 7
NCC_MIN = 0.8
MIN_MATCHES = 6
HARRIS_K = 0.04
# absolute floor on the Harris response of [0, 1] intensity images; flat or
# washed-out images yield no corners
HARRIS_MIN_RESPONSE = 1e-8


class InsufficientMatches(RuntimeError):
    pass


def harris_response(gray: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    gx = ndimage.sobel(gray, axis=1, mode="reflect") / 8.0
    gy = ndimage.sobel(gray, axis=0, mode="reflect") / 8.0
    # one call over the stacked products; a zero sigma leaves the stack axis alone
    sxx, syy, sxy = ndimage.gaussian_filter(np.stack([gx * gx, gy * gy, gx * gy]), (0.0, sigma, sigma),
                                            mode="reflect")
    return sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2


@dataclass
class Keypoints:
    pixels: np.ndarray  # (N, 2) integer (row, col), strongest first
    subpixel: np.ndarray  # (N, 2) refined float (row, col)

    def __len__(self) -> int:
        return len(self.pixels)


def detect_corners(image: np.ndarray, top_k: int = TOP_K, nms_radius: int = NMS_RADIUS,
                   min_response: float = HARRIS_MIN_RESPONSE) -> Keypoints:
    gray = to_gray(image)
    r = harris_response(gray)
    peaks = r == ndimage.maximum_filter(r, size=2 * nms_radius + 1, mode="constant", cval=-np.inf)
    margin = PATCH // 2
    peaks[:margin, :] = False
    peaks[-margin:, :] = False
    peaks[:, :margin] = False
    peaks[:, -margin:] = False
    peaks &= r > min_response
    rows, cols = np.nonzero(peaks)
    # stable order: by response, ties by raster position
    order = np.lexsort((cols, rows, -r[rows, cols]))[:top_k]
    px = np.stack([rows[order], cols[order]], axis=1).astype(np.int64)
    return Keypoints(px, refine_subpixel(r, px))


def refine_subpixel(response: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Per-axis parabola fit through the response peak; returns (N, 2) float (row, col)."""
    r, c = corners[:, 0], corners[:, 1]
    out = corners.astype(np.float64)
    for axis, (dr, dc) in enumerate(((1, 0), (0, 1))):
        lo = response[r - dr, c - dc]
        mid = response[r, c]
        hi = response[r + dr, c + dc]
        den = lo - 2.0 * mid + hi
        off = np.where(den < 0.0, 0.5 * (lo - hi) / np.where(den < 0.0, den, -1.0), 0.0)
        out[:, axis] += np.clip(off, -0.5, 0.5)
    return out


def extract_patches(image: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-norm flattened patches; rows of zeros for flat patches."""
    half = PATCH // 2
    img = image if image.ndim == 3 else image[..., None]
    offs = np.arange(-half, half + 1)
    rr = corners[:, 0, None, None] + offs[None, :, None]
    cc = corners[:, 1, None, None] + offs[None, None, :]
    p = img[rr, cc].reshape(len(corners), -1)
    p = p - p.mean(axis=1, keepdims=True)
    norm = np.sqrt((p * p).sum(axis=1, keepdims=True))
    return np.where(norm > 1e-9, p / np.where(norm > 1e-9, norm, 1.0), 0.0)


def match_corners(img_a: np.ndarray, img_b: np.ndarray, corners_a: np.ndarray,
                  corners_b: np.ndarray, ncc_min: float = NCC_MIN) -> np.ndarray:
    """Mutual-best NCC matches as (N, 2) index pairs into corners_a / corners_b."""
    if len(corners_a) == 0 or len(corners_b) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pa = extract_patches(img_a, corners_a)
    pb = extract_patches(img_b, corners_b)
    ncc = pa @ pb.T
    best_b = np.argmax(ncc, axis=1)
    best_a = np.argmax(ncc, axis=0)
    ia = np.arange(len(corners_a))
    keep = (best_a[best_b] == ia) & (ncc[ia, best_b] >= ncc_min)
    return np.stack([ia[keep], best_b[keep]], axis=1)


def rigid_fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares R, t with dst ~ R src + t (Kabsch / Arun)."""
    ca = src.mean(axis=0)
    cb = dst.mean(axis=0)
    h = (src - ca).T @ (dst - cb)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cb - r @ ca


def robust_rigid_fit(src: np.ndarray, dst: np.ndarray, min_points: int = MIN_MATCHES):
    """Fit, drop residuals beyond 2 sigma once, refit if enough points remain.

    Sigma is the MAD-based scale of the first-fit residuals, so a few gross
    mismatches cannot inflate it. Returns ``(R, t, residuals_of_all_points)``.
    """
    r, t = rigid_fit(src, dst)
    res = np.linalg.norm(dst - (src @ r.T + t), axis=1)
    med = np.median(res)
    sigma = 1.4826 * np.median(np.abs(res - med))
    keep = res <= med + 2.0 * sigma
    if keep.sum() >= min_points and not keep.all():
        r, t = rigid_fit(src[keep], dst[keep])
        res = np.linalg.norm(dst - (src @ r.T + t), axis=1)
    return r, t, res


@dataclass
class Correspondences:
    points_a: np.ndarray  # (N, 3) in camera a
    points_b: np.ndarray  # (N, 3) in camera b


def sample_depth(depth: np.ndarray, rc: np.ndarray, max_spread: float) -> np.ndarray:
    """Bilinear depth at float (row, col); nearest pixel across discontinuities or holes."""
    from .imaging import bilinear_sample

    h, w = depth.shape
    rows = np.clip(rc[:, 0], 0.0, h - 1)
    cols = np.clip(rc[:, 1], 0.0, w - 1)
    r0 = np.minimum(np.floor(rows).astype(np.int64), h - 2)
    c0 = np.minimum(np.floor(cols).astype(np.int64), w - 2)
    quad = np.stack([depth[r0, c0], depth[r0, c0 + 1], depth[r0 + 1, c0], depth[r0 + 1, c0 + 1]])
    smooth = (quad.min(axis=0) > 0) & (quad.max(axis=0) - quad.min(axis=0) <= max_spread)
    nearest = depth[np.rint(rows).astype(np.int64), np.rint(cols).astype(np.int64)]
    return np.where(smooth, bilinear_sample(depth, cols, rows), nearest)


def correspond_3d(view_a, view_b, k, kp_a: Keypoints | None = None,
                  kp_b: Keypoints | None = None, max_spread: float = 0.05) -> Correspondences:
    """Match corners between two rendered views and lift them with each view's own depth."""
    if kp_a is None:
        kp_a = detect_corners(view_a.image)
    if kp_b is None:
        kp_b = detect_corners(view_b.image)
    m = match_corners(view_a.image, view_b.image, kp_a.pixels, kp_b.pixels)
    empty = np.zeros((0, 3))
    if len(m) == 0:
        return Correspondences(empty, empty)
    ra, rb = kp_a.subpixel[m[:, 0]], kp_b.subpixel[m[:, 1]]
    da = sample_depth(view_a.depth, ra, max_spread)
    db = sample_depth(view_b.depth, rb, max_spread)
    ok = (da > 0) & (db > 0)
    ra, rb, da, db = ra[ok], rb[ok], da[ok], db[ok]

    def lift(rc, d):
        return np.stack([(rc[:, 1] - k.cx) * d / k.fx, (rc[:, 0] - k.cy) * d / k.fy, d], axis=1)

    return Correspondences(lift(ra, da), lift(rb, db))
