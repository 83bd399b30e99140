"""Reward model: cross-view confidence oracle, pose / anchor rewards, and the
two deliberately hackable baselines (sparse-matching and warp rewards)."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .features import MIN_MATCHES, correspond_3d, detect_corners, robust_rigid_fit
from . import _kernels as _k
from .geometry import EPS_DEPTH, Intrinsics, RelativePose, compose, invert
from .imaging import (
    downsample2,
    high_frequency_energy,
    ssim_map,
    texture_energy,
    tile_stats,
)
from .scene import CameraRig, RenderOutput

log = logging.getLogger(__name__)

KAPPA_PHOTO = 10.0
KAPPA_GEO = 5.0
TAU_OCC = 0.05
LAMBDA_ANCHOR = 5.0
# per-pair penalty for a pose pair the estimator could not resolve:
# 8 = max ||R - R*||_F^2 (180 degrees), 4 = max ||t - t*||^2 for unit vectors
DEGENERATE_PAIR_PENALTY = 12.0
# relative depth spread under which four pixels count as one surface
SMOOTH_REL = 0.1
PAPER_WEIGHTS = {"d": 0.25, "p": 0.25, "t": 0.25, "a": 0.25}
TERM_ORDER = ("d", "p", "t", "a", "sfm", "warp")
NAN = float("nan")


class RigMismatch(ValueError):
    pass


class SizeMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    values: np.ndarray  # (H, W) in (0, 1] where valid
    valid: np.ndarray  # (H, W) bool

    def mean(self) -> float | None:
        if not self.valid.any():
            return None
        return float(self.values[self.valid].mean())


@dataclass(frozen=True, eq=False)
class VerifierReport:
    conf_depth: list
    conf_point: list
    est_relative: list
    texture_energy: float
    high_frequency_energy: float


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-candidate reward terms; terms a verifier mode does not compute are NaN."""

    r_d: float
    r_p: float
    r_t: float
    r_a: float
    composite: float
    r_sfm: float = float("nan")
    r_warp: float = float("nan")

    @classmethod
    def from_terms(cls, weights: dict, r_d=NAN, r_p=NAN, r_t=NAN, r_a=NAN, r_sfm=NAN, r_warp=NAN):
        terms = {"d": r_d, "p": r_p, "t": r_t, "a": r_a, "sfm": r_sfm, "warp": r_warp}
        comp = composite_reward(terms, weights)
        return cls(float(r_d), float(r_p), float(r_t), float(r_a), comp, float(r_sfm), float(r_warp))

    def terms(self) -> dict:
        return {"d": self.r_d, "p": self.r_p, "t": self.r_t, "a": self.r_a,
                "sfm": self.r_sfm, "warp": self.r_warp}


# --- confidence oracle ---

def photoconsistency_confidence(views: list, rig: CameraRig, kappa: float = KAPPA_PHOTO,
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
        raise RigMismatch(f"{m_views} views for a rig of {rig.m_views}")
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
            rel = compose(rig.poses[n], invert(rig.poses[m]))
            _k.confidence_kernel(
                view.image, view.depth, view.valid, nb.image, nb.depth,
                np.ascontiguousarray(rel.rotation), rel.translation, k.fx, k.fy, k.cx, k.cy,
                tau_occ, SMOOTH_REL, EPS_DEPTH, photo_sum, photo_n, geo_sum, geo_n,
            )
        pvalid = photo_n > 0
        gvalid = geo_n > 0
        e_photo = photo_sum / np.maximum(photo_n, 1.0)
        e_geo = geo_sum / np.maximum(geo_n, 1.0)
        conf_point.append(ConfidenceMap(np.where(pvalid, np.exp(-kappa * e_photo), 0.0), pvalid))
        conf_depth.append(ConfidenceMap(np.where(gvalid, np.exp(-kappa_geo * e_geo), 0.0), gvalid))
    return conf_depth, conf_point


def mean_confidence(maps: list) -> float:
    """Average over views of the per-view mean over valid pixels; empty views count 0."""
    total = 0.0
    for i, cm in enumerate(maps):
        mu = cm.mean()
        if mu is None:
            log.warning("confidence map %d has no valid pixels; counted as 0", i)
            mu = 0.0
        total += mu
    return total / len(maps)


def geometric_rewards(conf_depth: list, conf_point: list) -> tuple[float, float]:
    return mean_confidence(conf_depth), mean_confidence(conf_point)


# --- relative pose ---

def estimate_relative_poses(views: list, rig: CameraRig) -> list:
    """Adjacent-view relative poses from matched Harris corners and a rigid 3D fit.

    Pairs with fewer than the minimum number of matches come back flagged
    ``degenerate``.
    """
    if len(views) < 2:
        raise RigMismatch("need at least two views")
    kps = [detect_corners(v.image) for v in views]
    out = []
    for m in range(len(views) - 1):
        c = correspond_3d(views[m], views[m + 1], rig.intrinsics, kps[m], kps[m + 1])
        if len(c.points_a) < MIN_MATCHES:
            out.append(RelativePose.failed())
            continue
        r, t, _ = robust_rigid_fit(c.points_a, c.points_b)
        out.append(RelativePose.from_pose(_pose(r, t)))
    return out


def _pose(r, t):
    from .geometry import Pose, nearest_rotation

    return Pose(nearest_rotation(r), t)


def pose_pair_penalty(est: RelativePose, gt: RelativePose) -> float:
    if est.degenerate:
        return DEGENERATE_PAIR_PENALTY
    dr = est.rotation - gt.rotation
    dt = est.unit_translation - gt.unit_translation
    return float(np.sum(dr * dr) + dt @ dt)


def pose_reward(est: list, gt: list) -> float:
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} estimated vs {len(gt)} reference poses")
    if not est:
        raise LengthMismatch("no pose pairs")
    penalty = sum(pose_pair_penalty(e, g) for e, g in zip(est, gt))
    return float(np.exp(-penalty / len(est)))


# --- anchor fidelity ---

def perceptual_distance(a: np.ndarray, b: np.ndarray, scales: int = 3, tile: int = 4) -> float:
    """Multi-scale blend of pixel L1 and 4x4 tile mean/std agreement (symmetric, >= 0)."""
    if a.shape != b.shape:
        raise SizeMismatch(f"{a.shape} vs {b.shape}")
    total = 0.0
    for s in range(scales):
        if s:
            a, b = downsample2(a), downsample2(b)
        l1 = float(np.mean(np.abs(a - b)))
        ma, sa = tile_stats(a, tile)
        mb, sb = tile_stats(b, tile)
        stats = float(np.mean(np.abs(ma - mb)) + np.mean(np.abs(sa - sb)))
        total += 0.5 * l1 + 0.5 * stats
    return total / scales


def anchor_reward(candidate_view: np.ndarray, anchor: np.ndarray, lam: float = LAMBDA_ANCHOR) -> float:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return float(np.exp(-lam * perceptual_distance(candidate_view, anchor)))


# --- hackable baselines and the evaluation metric ---

def sfm_residual(views: list, k: Intrinsics) -> float:
    """Mean over adjacent pairs of the mean 3D alignment residual of matched corners.

    Pairs with too few matches contribute 0, which is the exploitable flaw.
    """
    kps = [detect_corners(v.image) for v in views]
    per_pair = []
    for m in range(len(views) - 1):
        c = correspond_3d(views[m], views[m + 1], k, kps[m], kps[m + 1])
        if len(c.points_a) < MIN_MATCHES:
            per_pair.append(0.0)
            continue
        _, _, res = robust_rigid_fit(c.points_a, c.points_b)
        per_pair.append(float(res.mean()))
    return float(np.mean(per_pair))


def sfm_reward(views: list, k: Intrinsics) -> float:
    if len(views) < 2:
        raise RigMismatch("need at least two views")
    return float(np.exp(-sfm_residual(views, k)))


def reprojection_error_map(target: np.ndarray, target_depth: np.ndarray, source: np.ndarray,
                           pose_tgt, pose_src, k: Intrinsics, source_depth=None,
                           tau_occ: float = TAU_OCC):
    """Reconstruct ``target`` from ``source`` and return (per-pixel error, valid mask).

    With ``source_depth``, target pixels hidden in the source are masked out.
    """
    rel = compose(pose_src, invert(pose_tgt))
    use_occ = source_depth is not None
    recon, ok = _k.reproject_kernel(
        np.ascontiguousarray(target, dtype=np.float64), np.ascontiguousarray(target_depth, dtype=np.float64),
        np.ascontiguousarray(source, dtype=np.float64),
        np.ascontiguousarray(source_depth if use_occ else target_depth, dtype=np.float64),
        np.ascontiguousarray(rel.rotation), rel.translation, k.fx, k.fy, k.cx, k.cy,
        tau_occ, SMOOTH_REL, EPS_DEPTH, use_occ,
    )
    ssim = ssim_map(recon, target).mean(axis=-1)
    l1 = np.abs(recon - target).mean(axis=-1)
    err = 0.85 * (1.0 - ssim) / 2.0 + 0.15 * l1
    return err, ok


def ph_loss(images: list, depths: list, poses: list, k: Intrinsics) -> float:
    """Photometric reprojection loss over both directions of every adjacent pair."""
    if len(images) < 2:
        raise RigMismatch("need at least two views")
    total, count = 0.0, 0
    for m in range(len(images) - 1):
        for tgt, src in ((m, m + 1), (m + 1, m)):
            err, ok = reprojection_error_map(images[tgt], depths[tgt], images[src],
                                             poses[tgt], poses[src], k, depths[src])
            total += float(err[ok].sum())
            count += int(ok.sum())
    if count == 0:
        return 0.0
    return max(total / count, 0.0)


def views_ph_loss(views: list, rig: CameraRig) -> float:
    return ph_loss([v.image for v in views], [v.depth for v in views], list(rig.poses), rig.intrinsics)


def warp_reward(views: list, rig: CameraRig) -> float:
    return float(np.exp(-views_ph_loss(views, rig)))


def composite_reward(terms: dict, weights: dict) -> float:
    """Weighted sum over the reward terms named in ``weights``."""
    if any(w < 0 for w in weights.values()):
        raise ValueError("weights must be non-negative")
    unknown = set(weights) - set(TERM_ORDER)
    if unknown:
        raise KeyError(f"unknown reward terms {sorted(unknown)}")
    total = 0.0
    for name in TERM_ORDER:
        w = weights.get(name, 0.0)
        if w:
            total += w * terms[name]
    return float(total)


def diagnostics(views: list) -> tuple[float, float]:
    """Mean texture energy and mean high-frequency energy over the view set."""
    te = float(np.mean([texture_energy(v.image) for v in views]))
    hf = float(np.mean([high_frequency_energy(v.image) for v in views]))
    return te, hf


def verify(views: list, rig: CameraRig, kappa=KAPPA_PHOTO, kappa_geo=KAPPA_GEO,
           tau_occ=TAU_OCC, with_poses: bool = True) -> VerifierReport:
    conf_d, conf_p = photoconsistency_confidence(views, rig, kappa, kappa_geo, tau_occ)
    est = estimate_relative_poses(views, rig) if with_poses else []
    te, hf = diagnostics(views)
    return VerifierReport(conf_d, conf_p, est, te, hf)
