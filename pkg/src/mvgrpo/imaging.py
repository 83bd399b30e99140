"""Small image operations shared by the verifiers and the diagnostics."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    if image.shape[-1] != 3:
        return image.mean(axis=-1)
    # same rounding as mean(axis=-1), without the slow reduce over a short axis
    return (image[..., 0] + image[..., 1] + image[..., 2]) / 3.0


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample (H, W[, C]) at continuous pixel coordinates; callers pass in-frame points."""
    h, w = image.shape[:2]
    u = np.clip(u, 0.0, w - 1)
    v = np.clip(v, 0.0, h - 1)
    u0 = np.minimum(np.floor(u).astype(np.int64), w - 2)
    v0 = np.minimum(np.floor(v).astype(np.int64), h - 2)
    fu = u - u0
    fv = v - v0
    if image.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    a = image[v0, u0]
    b = image[v0, u0 + 1]
    c = image[v0 + 1, u0]
    d = image[v0 + 1, u0 + 1]
    top = a + fu * (b - a)
    bot = c + fu * (d - c)
    return top + fv * (bot - top)


def box_mean(x: np.ndarray, size: int) -> np.ndarray:
    if x.ndim == 3:
        return ndimage.uniform_filter(x, size=(size, size, 1), mode="reflect")
    return ndimage.uniform_filter(x, size=size, mode="reflect")


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = 3) -> np.ndarray:
    """Per-pixel SSIM with a box window on [0, 1] intensities."""
    mu_x = box_mean(x, window)
    mu_y = box_mean(y, window)
    sxx = box_mean(x * x, window) - mu_x * mu_x
    syy = box_mean(y * y, window) - mu_y * mu_y
    sxy = box_mean(x * y, window) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def high_frequency_energy(image: np.ndarray) -> float:
    """Mean gradient magnitude of the gray image (forward differences)."""
    g = to_gray(image)
    gx = np.diff(g, axis=1)[:-1, :]
    gy = np.diff(g, axis=0)[:, :-1]
    return float(np.mean(np.sqrt(gx * gx + gy * gy)))


def texture_energy(image: np.ndarray, window: int = 7) -> float:
    """Mean local standard deviation over windows, averaged over channels."""
    mu = box_mean(image, window)
    var = np.maximum(box_mean(image * image, window) - mu * mu, 0.0)
    return float(np.mean(np.sqrt(var)))


def downsample2(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    x = image[: h - h % 2, : w - w % 2]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def tile_stats(image: np.ndarray, tile: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation over non-overlapping tiles."""
    h, w = image.shape[:2]
    hh, ww = h - h % tile, w - w % tile
    c = image.shape[2] if image.ndim == 3 else 1
    t = image[:hh, :ww].reshape(hh // tile, tile, ww // tile, tile, c)
    return t.mean(axis=(1, 3)), t.std(axis=(1, 3))


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
