"""Compiled per-pixel loops for the ray caster and the confidence oracle.

Both kernels mirror straightforward vectorized numpy formulations (kept in the
test suite as oracles); they exist because a training run evaluates tens of
thousands of 9-view candidates.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

SPHERE = 0
QUAD = 1
TEX_NONE = 0
TEX_CHECKER = 1
TEX_NOISE = 2


@njit(cache=True, nogil=True)
def _smooth(f):
    return f * f * (3.0 - 2.0 * f)


@njit(cache=True, nogil=True)
def _lattice2(x, y, perm, values):
    fx, fy = math.floor(x), math.floor(y)
    ix, iy = int(fx) & 255, int(fy) & 255
    wx, wy = _smooth(x - fx), _smooth(y - fy)
    hx0, hx1 = perm[ix], perm[ix + 1]
    v00 = values[perm[hx0 + iy]]
    v10 = values[perm[hx1 + iy]]
    v01 = values[perm[hx0 + iy + 1]]
    v11 = values[perm[hx1 + iy + 1]]
    y0 = v00 + wx * (v10 - v00)
    y1 = v01 + wx * (v11 - v01)
    return y0 + wy * (y1 - y0)


@njit(cache=True, nogil=True)
def _lattice3(x, y, z, perm, values):
    fx, fy, fz = math.floor(x), math.floor(y), math.floor(z)
    ix, iy, iz = int(fx) & 255, int(fy) & 255, int(fz) & 255
    wx, wy, wz = _smooth(x - fx), _smooth(y - fy), _smooth(z - fz)
    hx0, hx1 = perm[ix], perm[ix + 1]
    a0, a1 = perm[hx0 + iy], perm[hx1 + iy]
    b0, b1 = perm[hx0 + iy + 1], perm[hx1 + iy + 1]
    out0 = 0.0
    out1 = 0.0
    for dz in range(2):
        h00 = values[perm[a0 + iz + dz]]
        h10 = values[perm[a1 + iz + dz]]
        h01 = values[perm[b0 + iz + dz]]
        h11 = values[perm[b1 + iz + dz]]
        y0 = h00 + wx * (h10 - h00)
        y1 = h01 + wx * (h11 - h01)
        if dz == 0:
            out0 = y0 + wy * (y1 - y0)
        else:
            out1 = y0 + wy * (y1 - y0)
    return out0 + wz * (out1 - out0)


@njit(cache=True, nogil=True)
def render_kernel(rot, center, fx, fy, cx, cy, width, height, kinds, centers, albedo, radius,
                  axis_u, axis_v, size_u, size_v, tex_kind, tex_period, tex_a, tex_b, tex_scale,
                  perm, values, octaves, background, hit_eps):
    n_prims = kinds.shape[0]
    image = np.empty((height, width, 3))
    depth = np.zeros((height, width))
    valid = np.zeros((height, width), dtype=np.bool_)
    for row in range(height):
        b = (row - cy) / fy
        for col in range(width):
            a = (col - cx) / fx
            d0 = rot[0, 0] * a + rot[1, 0] * b + rot[2, 0]
            d1 = rot[0, 1] * a + rot[1, 1] * b + rot[2, 1]
            d2 = rot[0, 2] * a + rot[1, 2] * b + rot[2, 2]
            best = np.inf
            owner = -1
            for j in range(n_prims):
                o0 = center[0] - centers[j, 0]
                o1 = center[1] - centers[j, 1]
                o2 = center[2] - centers[j, 2]
                s = np.inf
                if kinds[j] == SPHERE:
                    aa = d0 * d0 + d1 * d1 + d2 * d2
                    bb = d0 * o0 + d1 * o1 + d2 * o2
                    cc = (o0 * o0 + o1 * o1 + o2 * o2) - radius[j] * radius[j]
                    disc = bb * bb - aa * cc
                    if disc >= 0.0:
                        t = (-bb - math.sqrt(disc)) / aa
                        if t > hit_eps:
                            s = t
                else:
                    n0 = axis_u[j, 1] * axis_v[j, 2] - axis_u[j, 2] * axis_v[j, 1]
                    n1 = axis_u[j, 2] * axis_v[j, 0] - axis_u[j, 0] * axis_v[j, 2]
                    n2 = axis_u[j, 0] * axis_v[j, 1] - axis_u[j, 1] * axis_v[j, 0]
                    den = d0 * n0 + d1 * n1 + d2 * n2
                    if abs(den) > 1e-12:
                        t = -(o0 * n0 + o1 * n1 + o2 * n2) / den
                        p0, p1, p2 = o0 + t * d0, o1 + t * d1, o2 + t * d2
                        lu = p0 * axis_u[j, 0] + p1 * axis_u[j, 1] + p2 * axis_u[j, 2]
                        lv = p0 * axis_v[j, 0] + p1 * axis_v[j, 1] + p2 * axis_v[j, 2]
                        if t > hit_eps and abs(lu) <= size_u[j] / 2 and abs(lv) <= size_v[j] / 2:
                            s = t
                if s < best:
                    best = s
                    owner = j
            if owner < 0:
                for c in range(3):
                    image[row, col, c] = background[c]
                continue
            j = owner
            depth[row, col] = best
            valid[row, col] = True
            h0 = center[0] + best * d0 - centers[j, 0]
            h1 = center[1] + best * d1 - centers[j, 1]
            h2 = center[2] + best * d2 - centers[j, 2]
            if kinds[j] == SPHERE:
                q0, q1, q2 = h0 / radius[j], h1 / radius[j], h2 / radius[j]
            else:
                q0 = h0 * axis_u[j, 0] + h1 * axis_u[j, 1] + h2 * axis_u[j, 2]
                q1 = h0 * axis_v[j, 0] + h1 * axis_v[j, 1] + h2 * axis_v[j, 2]
                q2 = 0.0
            f0 = f1 = f2 = 1.0
            if tex_kind[j] == TEX_CHECKER:
                parity = int(math.floor(q0 / tex_period[j])) + int(math.floor(q1 / tex_period[j]))
                if kinds[j] == SPHERE:
                    parity += int(math.floor(q2 / tex_period[j]))
                if parity & 1:
                    f0, f1, f2 = tex_b[j, 0], tex_b[j, 1], tex_b[j, 2]
                else:
                    f0, f1, f2 = tex_a[j, 0], tex_a[j, 1], tex_a[j, 2]
            elif tex_kind[j] == TEX_NOISE:
                sc = tex_scale[j]
                g = 0.0
                for i in range(octaves.shape[0]):
                    freq, weight = octaves[i, 0], octaves[i, 1]
                    off = 17.0 * i
                    if kinds[j] == SPHERE:
                        g += weight * _lattice3(q0 * sc * freq + off, q1 * sc * freq + off,
                                                q2 * sc * freq + off, perm[j, i], values[j, i])
                    else:
                        g += weight * _lattice2(q0 * sc * freq + off, q1 * sc * freq + off,
                                                perm[j, i], values[j, i])
                f0 = tex_b[j, 0] + g * (tex_a[j, 0] - tex_b[j, 0])
                f1 = tex_b[j, 1] + g * (tex_a[j, 1] - tex_b[j, 1])
                f2 = tex_b[j, 2] + g * (tex_a[j, 2] - tex_b[j, 2])
            image[row, col, 0] = min(max(albedo[j, 0] * f0, 0.0), 1.0)
            image[row, col, 1] = min(max(albedo[j, 1] * f1, 0.0), 1.0)
            image[row, col, 2] = min(max(albedo[j, 2] * f2, 0.0), 1.0)
    return image, depth, valid


@njit(cache=True, nogil=True)
def _neighbor_depth(depth, u, v, tau, smooth_rel):
    h, w = depth.shape
    u0 = min(int(math.floor(u)), w - 2)
    v0 = min(int(math.floor(v)), h - 2)
    q0 = depth[v0, u0]
    q1 = depth[v0, u0 + 1]
    q2 = depth[v0 + 1, u0]
    q3 = depth[v0 + 1, u0 + 1]
    lo = min(min(q0, q1), min(q2, q3))
    hi = max(max(q0, q1), max(q2, q3))
    if lo > 0.0 and hi - lo <= tau + smooth_rel * lo:
        fu, fv = u - u0, v - v0
        top = 1.0 / q0 + fu * (1.0 / q1 - 1.0 / q0)
        bot = 1.0 / q2 + fu * (1.0 / q3 - 1.0 / q2)
        return 1.0 / (top + fv * (bot - top))
    return depth[int(np.rint(v)), int(np.rint(u))]


@njit(cache=True, nogil=True)
def confidence_kernel(image, depth, valid, nb_image, nb_depth, rot, trans, fx, fy, cx, cy,
                      tau, smooth_rel, eps_depth, photo_sum, photo_n, geo_sum, geo_n):
    """Accumulate visible photometric / geometric errors of one view against one neighbor."""
    h, w = depth.shape
    for row in range(h):
        for col in range(w):
            if not valid[row, col]:
                continue
            d = depth[row, col]
            px = (col - cx) * d / fx
            py = (row - cy) * d / fy
            x = px * rot[0, 0] + py * rot[0, 1] + d * rot[0, 2] + trans[0]
            y = px * rot[1, 0] + py * rot[1, 1] + d * rot[1, 2] + trans[1]
            z = px * rot[2, 0] + py * rot[2, 1] + d * rot[2, 2] + trans[2]
            if z <= eps_depth:
                continue
            u = fx * x / z + cx
            v = fy * y / z + cy
            if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
                continue
            dn = _neighbor_depth(nb_depth, u, v, tau, smooth_rel)
            if not (dn > 0.0 and z <= dn + tau):
                continue
            u0 = min(int(math.floor(u)), w - 2)
            v0 = min(int(math.floor(v)), h - 2)
            fu, fv = u - u0, v - v0
            err = 0.0
            for c in range(3):
                a = nb_image[v0, u0, c]
                b = nb_image[v0, u0 + 1, c]
                cc = nb_image[v0 + 1, u0, c]
                dd = nb_image[v0 + 1, u0 + 1, c]
                top = a + fu * (b - a)
                bot = cc + fu * (dd - cc)
                err += abs(top + fv * (bot - top) - image[row, col, c])
            photo_sum[row, col] += err / 3.0
            photo_n[row, col] += 1.0
            geo_sum[row, col] += abs(z - dn)
            geo_n[row, col] += 1.0


@njit(cache=True, nogil=True)
def reproject_kernel(target, target_depth, source, source_depth, rot, trans, fx, fy, cx, cy,
                     tau, smooth_rel, eps_depth, use_occlusion):
    """Rebuild ``target`` from ``source``; pixels that cannot be rebuilt keep the target value."""
    h, w = target_depth.shape
    recon = target.copy()
    ok = np.zeros((h, w), dtype=np.bool_)
    for row in range(h):
        for col in range(w):
            d = target_depth[row, col]
            if not d > 0.0:
                continue
            px = (col - cx) * d / fx
            py = (row - cy) * d / fy
            x = px * rot[0, 0] + py * rot[0, 1] + d * rot[0, 2] + trans[0]
            y = px * rot[1, 0] + py * rot[1, 1] + d * rot[1, 2] + trans[1]
            z = px * rot[2, 0] + py * rot[2, 1] + d * rot[2, 2] + trans[2]
            if z <= eps_depth:
                continue
            u = fx * x / z + cx
            v = fy * y / z + cy
            if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
                continue
            if use_occlusion:
                ds = _neighbor_depth(source_depth, u, v, tau, smooth_rel)
                if not (ds > 0.0 and z <= ds + tau):
                    continue
            ok[row, col] = True
            u0 = min(int(math.floor(u)), w - 2)
            v0 = min(int(math.floor(v)), h - 2)
            fu, fv = u - u0, v - v0
            for c in range(source.shape[2]):
                a = source[v0, u0, c]
                b = source[v0, u0 + 1, c]
                cc = source[v0 + 1, u0, c]
                dd = source[v0 + 1, u0 + 1, c]
                top = a + fu * (b - a)
                bot = cc + fu * (dd - cc)
                recon[row, col, c] = top + fv * (bot - top)
    return recon, ok
