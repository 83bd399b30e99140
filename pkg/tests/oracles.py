"""Plain vectorized numpy reference implementations used as independent oracles.

The package renders and scores with compiled per-pixel loops; these slower
array formulations compute the same quantities a second way.
"""
from __future__ import annotations

import numpy as np

from mvgrpo.geometry import EPS_DEPTH, pixel_grid, warp_depth_map
from mvgrpo.imaging import bilinear_sample
from mvgrpo.scene import HIT_EPS, NOISE_OCTAVES, Primitive, RenderOutput, Scene, _noise_tables
from mvgrpo.verifiers import SMOOTH_REL, TAU_OCC, ConfidenceMap, KAPPA_GEO, KAPPA_PHOTO


def _lattice_noise(p: np.ndarray, seed: int) -> np.ndarray:
    """Smoothstep-interpolated lattice noise; 2D when the third coordinate is absent."""
    perm, values = _noise_tables(seed)
    fl = np.floor(p)
    i = fl.astype(np.int64) & 255
    f = p - fl
    w = f * f * (3.0 - 2.0 * f)
    hx0 = perm[i[:, 0]]
    hx1 = perm[i[:, 0] + 1]
    iy = i[:, 1]
    wx, wy = w[:, 0], w[:, 1]
    if p.shape[1] == 2:
        h00, h10 = perm[hx0 + iy], perm[hx1 + iy]
        h01, h11 = perm[hx0 + iy + 1], perm[hx1 + iy + 1]
        v00, v10, v01, v11 = values[h00], values[h10], values[h01], values[h11]
        y0 = v00 + wx * (v10 - v00)
        y1 = v01 + wx * (v11 - v01)
        return y0 + wy * (y1 - y0)
    iz = i[:, 2]
    wz = w[:, 2]
    out = []
    for dz in (0, 1):
        h00 = values[perm[perm[hx0 + iy] + iz + dz]]
        h10 = values[perm[perm[hx1 + iy] + iz + dz]]
        h01 = values[perm[perm[hx0 + iy + 1] + iz + dz]]
        h11 = values[perm[perm[hx1 + iy + 1] + iz + dz]]
        y0 = h00 + wx * (h10 - h00)
        y1 = h01 + wx * (h11 - h01)
        out.append(y0 + wy * (y1 - y0))
    return out[0] + wz * (out[1] - out[0])



def value_noise(p: np.ndarray, seed: int, scale: float) -> np.ndarray:
    """Fractal lattice value noise in [0, 1] at (N, 2|3) texture coordinates."""
    q = p * scale
    n = np.zeros(p.shape[0])
    for i, (freq, weight) in enumerate(NOISE_OCTAVES):
        n = n + weight * _lattice_noise(q * freq + 17.0 * i, seed + i)
    return n


def texture_factor(tex, coords: np.ndarray) -> np.ndarray:
    """(N, 2|3) texture coordinates -> (N, 3) multiplicative RGB factor."""
    n = coords.shape[0]
    if tex.kind == "none":
        return np.ones((n, 3))
    if tex.kind == "checker":
        cell = np.floor(coords / tex.period).astype(np.int64)
        odd = (cell.sum(axis=1) & 1).astype(bool)
        return np.where(odd[:, None], np.array(tex.color_b), np.array(tex.color_a))
    g = value_noise(coords, tex.seed, tex.scale)
    a, b = np.array(tex.color_a), np.array(tex.color_b)
    return b + g[:, None] * (a - b)



def _rays(pose, k, u, v):
    a = ((u - k.cx) / k.fx).ravel()
    b = ((v - k.cy) / k.fy).ravel()
    r = pose.rotation
    # world direction of camera ray (a, b, 1); its camera-z component is 1
    d = np.stack(
        [r[0, 0] * a + r[1, 0] * b + r[2, 0],
         r[0, 1] * a + r[1, 1] * b + r[2, 1],
         r[0, 2] * a + r[1, 2] * b + r[2, 2]],
        axis=-1,
    )
    return pose.center, d


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _intersect(prim: Primitive, origin: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Ray parameter (== camera depth) of the first hit, inf where missed."""
    c = np.array(prim.center)
    oc = origin - c
    if prim.kind == "sphere":
        a = _dot(d, d)
        b = _dot(d, oc)
        cc = oc @ oc - prim.radius * prim.radius
        disc = b * b - a * cc
        ok = disc >= 0.0
        s = (-b - np.sqrt(np.where(ok, disc, 0.0))) / a
        return np.where(ok & (s > HIT_EPS), s, np.inf)
    au, av = np.array(prim.axis_u), np.array(prim.axis_v)
    n = np.cross(au, av)
    denom = _dot(d, n)
    ok = np.abs(denom) > 1e-12
    s = (-(oc @ n)) / np.where(ok, denom, 1.0)
    p = oc + s[:, None] * d
    lu, lv = _dot(p, au), _dot(p, av)
    hit = ok & (s > HIT_EPS) & (np.abs(lu) <= prim.size_u / 2) & (np.abs(lv) <= prim.size_v / 2)
    return np.where(hit, s, np.inf)


def _texture_coords(prim: Primitive, hit: np.ndarray) -> np.ndarray:
    local = hit - np.array(prim.center)
    if prim.kind == "sphere":
        return local / prim.radius
    lu = _dot(local, np.array(prim.axis_u))
    lv = _dot(local, np.array(prim.axis_v))
    return np.stack([lu, lv], axis=-1)


def cast(scene: Scene, origin: np.ndarray, d: np.ndarray):
    """Shade arbitrary rays; returns (colors (N, 3), depth (N,), valid (N,))."""
    n = d.shape[0]
    best = np.full(n, np.inf)
    owner = np.full(n, -1, dtype=np.int64)
    for j, prim in enumerate(scene.primitives):
        s = _intersect(prim, origin, d)
        closer = s < best
        best = np.where(closer, s, best)
        owner = np.where(closer, j, owner)
    image = np.empty((n, 3))
    image[:] = np.array(scene.background_color)
    for j, prim in enumerate(scene.primitives):
        sel = np.flatnonzero(owner == j)
        if sel.size == 0:
            continue
        hit = origin + best[sel, None] * d[sel]
        tex = texture_factor(prim.texture, _texture_coords(prim, hit))
        image[sel] = np.array(prim.albedo) * tex
    valid = owner >= 0
    return np.clip(image, 0.0, 1.0), np.where(valid, best, 0.0), valid


def render_at(scene: Scene, pose, k, u: np.ndarray, v: np.ndarray):
    """Shade the rays through continuous pixel coordinates (u, v)."""
    return cast(scene, *_rays(pose, k, np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)))


def render_view(scene: Scene, pose, k) -> RenderOutput:
    """Nearest-hit ray cast through pixel centers with flat albedo x texture shading."""
    u, v = pixel_grid(k)
    image, depth, valid = render_at(scene, pose, k, u, v)
    h, w = k.shape
    return RenderOutput(image.reshape(h, w, 3), depth.reshape(h, w), valid.reshape(h, w))


def _sample_neighbor_depth(depth: np.ndarray, u: np.ndarray, v: np.ndarray, tau: float) -> np.ndarray:
    """Depth at continuous pixel coordinates.

    Inverse depth is interpolated bilinearly (exact on planes) where the four
    surrounding pixels lie on one surface; across depth edges and holes the
    nearest pixel is used.
    """
    h, w = depth.shape
    u0 = np.minimum(np.floor(u).astype(np.int64), w - 2)
    v0 = np.minimum(np.floor(v).astype(np.int64), h - 2)
    q = np.stack([depth[v0, u0], depth[v0, u0 + 1], depth[v0 + 1, u0], depth[v0 + 1, u0 + 1]])
    lo, hi = q.min(axis=0), q.max(axis=0)
    smooth = (lo > 0) & (hi - lo <= tau + SMOOTH_REL * lo)
    near = depth[np.rint(v).astype(np.int64), np.rint(u).astype(np.int64)]
    inv = np.zeros_like(q)
    np.divide(1.0, q, out=inv, where=q > 0)
    fu, fv = u - u0, v - v0
    top = inv[0] + fu * (inv[1] - inv[0])
    bot = inv[2] + fu * (inv[3] - inv[2])
    interp = top + fv * (bot - top)
    return np.where(smooth, 1.0 / np.where(smooth, interp, 1.0), near)


def photoconsistency_confidence(views: list, rig, kappa: float = KAPPA_PHOTO,
                                kappa_geo: float = KAPPA_GEO, tau_occ: float = TAU_OCC):
    """Per-view confidence that each pixel agrees with its neighbors' views.

    Each valid pixel of view m is lifted with view m's own depth, moved with
    the rig poses into views m-1 and m+1, and compared there photometrically
    (mean L1 over RGB) and geometrically (depth gap). Only in-frame samples
    that pass the occlusion test (warped depth <= neighbor depth + tau_occ)
    count; pixels without any such sample are invalid.
    Returns ``(conf_depth, conf_point)`` as lists of ConfidenceMap.
    """
    m_views = len(views)
    if m_views != rig.m_views or m_views < 2:
        raise ValueError(f"{m_views} views for a rig of {rig.m_views}")
    if kappa <= 0 or kappa_geo <= 0:
        raise ValueError("kappa must be positive")
    k = rig.intrinsics
    conf_depth, conf_point = [], []
    for m, view in enumerate(views):
        photo_sum = np.zeros(k.shape)
        photo_n = np.zeros(k.shape)
        geo_sum = np.zeros(k.shape)
        geo_n = np.zeros(k.shape)
        for n in (m - 1, m + 1):
            if not 0 <= n < m_views:
                continue
            nb = views[n]
            u, v, z = warp_depth_map(view.depth, rig.poses[m], rig.poses[n], k)
            ok = view.valid & (z > EPS_DEPTH) & k.in_frame(u, v)
            if not ok.any():
                continue
            uu, vv = u[ok], v[ok]
            dn = _sample_neighbor_depth(nb.depth, uu, vv, tau_occ)
            zz = z[ok]
            # samples hidden behind a nearer surface in the neighbor say nothing
            visible = (dn > 0) & (zz <= dn + tau_occ)
            col = bilinear_sample(nb.image, uu, vv)
            photo = np.abs(col - view.image[ok]).mean(axis=-1)
            photo_sum[ok] += np.where(visible, photo, 0.0)
            photo_n[ok] += visible
            geo_sum[ok] += np.where(visible, np.abs(zz - dn), 0.0)
            geo_n[ok] += visible
        pvalid = photo_n > 0
        gvalid = geo_n > 0
        e_photo = photo_sum / np.maximum(photo_n, 1.0)
        e_geo = geo_sum / np.maximum(geo_n, 1.0)
        conf_point.append(ConfidenceMap(np.where(pvalid, np.exp(-kappa * e_photo), 0.0), pvalid))
        conf_depth.append(ConfidenceMap(np.where(gvalid, np.exp(-kappa_geo * e_geo), 0.0), gvalid))
    return conf_depth, conf_point


