"""Parametric scenes, the turntable rig, edit operators and the ray caster."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import _kernels as _k
from .geometry import (
    Intrinsics,
    Pose,
    RelativePose,
    axis_angle_to_matrix,
    compose,
    look_at,
    relative_transform,
)

RADIUS_SCALE_RANGE = (0.25, 4.0)
HIT_EPS = 1e-6


class BadConfig(ValueError):
    pass


class UnknownPrimitive(KeyError):
    pass


def _tuple3(v) -> tuple[float, float, float]:
    a = [float(x) for x in v]
    if len(a) != 3:
        raise ValueError(f"expected 3 values, got {len(a)}")
    return (a[0], a[1], a[2])


@dataclass(frozen=True)
class Texture:
    kind: str = "none"  # none | checker | value_noise
    period: float = 1.0
    color_a: tuple = (1.0, 1.0, 1.0)
    color_b: tuple = (0.5, 0.5, 0.5)
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "checker", "value_noise"):
            raise BadConfig(f"unknown texture kind {self.kind!r}")
        if self.kind == "checker" and self.period <= 0:
            raise BadConfig("checker period must be positive")
        object.__setattr__(self, "color_a", _tuple3(self.color_a))
        object.__setattr__(self, "color_b", _tuple3(self.color_b))


@dataclass(frozen=True)
class Primitive:
    id: int
    kind: str  # sphere | quad
    center: tuple
    albedo: tuple
    radius: float = 1.0
    axis_u: tuple = (1.0, 0.0, 0.0)
    axis_v: tuple = (0.0, 1.0, 0.0)
    size_u: float = 1.0
    size_v: float = 1.0
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        if self.kind not in ("sphere", "quad"):
            raise BadConfig(f"unknown primitive kind {self.kind!r}")
        for name in ("center", "albedo", "axis_u", "axis_v"):
            object.__setattr__(self, name, _tuple3(getattr(self, name)))
        nums = [*self.center, *self.albedo, self.radius, self.size_u, self.size_v]
        if not np.all(np.isfinite(nums)):
            raise BadConfig(f"primitive {self.id} has non-finite geometry")
        if self.kind == "sphere" and self.radius <= 0:
            raise BadConfig("sphere radius must be positive")
        if self.kind == "quad":
            if self.size_u <= 0 or self.size_v <= 0:
                raise BadConfig("quad edge lengths must be positive")
            u, v = np.array(self.axis_u), np.array(self.axis_v)
            if abs(np.linalg.norm(u) - 1) > 1e-9 or abs(np.linalg.norm(v) - 1) > 1e-9 or abs(u @ v) > 1e-9:
                raise BadConfig("quad axes must be orthonormal")


@dataclass(frozen=True)
class Scene:
    primitives: tuple = ()
    background_color: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "background_color", _tuple3(self.background_color))
        ids = [p.id for p in self.primitives]
        if len(set(ids)) != len(ids):
            raise BadConfig("primitive ids must be unique")

    def get(self, pid: int) -> Primitive:
        for p in self.primitives:
            if p.id == pid:
                return p
        raise UnknownPrimitive(pid)

    def structure(self) -> tuple:
        return tuple((p.id, p.kind, p.texture) for p in self.primitives)


@dataclass(frozen=True)
class CameraRig:
    poses: tuple
    intrinsics: Intrinsics
    gt_relative: tuple

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "gt_relative", tuple(self.gt_relative))
        if len(self.poses) < 2:
            raise BadConfig("a rig needs at least two views")
        if len(self.gt_relative) != len(self.poses) - 1:
            raise BadConfig("gt_relative must have M-1 entries")

    @property
    def m_views(self) -> int:
        return len(self.poses)

    @classmethod
    def from_poses(cls, poses, intrinsics: Intrinsics) -> CameraRig:
        poses = tuple(poses)
        rel = tuple(relative_transform(a, b) for a, b in zip(poses[:-1], poses[1:]))
        return cls(poses, intrinsics, rel)


@dataclass(frozen=True)
class SharedEdit:
    target: int = 0
    color_delta: tuple = (0.0, 0.0, 0.0)
    translation_delta: tuple = (0.0, 0.0, 0.0)
    radius_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "color_delta", _tuple3(self.color_delta))
        object.__setattr__(self, "translation_delta", _tuple3(self.translation_delta))
        if not self.radius_scale > 0:
            raise BadConfig("radius_scale must be positive")


@dataclass(frozen=True)
class PerViewDeviation:
    translation_jitter: tuple = (0.0, 0.0, 0.0)
    color_jitter: tuple = (0.0, 0.0, 0.0)
    camera_rot_jitter: tuple = (0.0, 0.0, 0.0)
    camera_trans_jitter: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("translation_jitter", "color_jitter", "camera_rot_jitter", "camera_trans_jitter"):
            object.__setattr__(self, name, _tuple3(getattr(self, name)))


@dataclass(frozen=True)
class Degradation:
    contrast: float = 1.0
    blur_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.contrast <= 1.0:
            raise BadConfig("contrast must lie in [0, 1]")
        if self.blur_sigma < 0.0:
            raise BadConfig("blur_sigma must be non-negative")


@dataclass(frozen=True)
class EditVector:
    shared: SharedEdit
    per_view: tuple
    degradation: tuple

    def __post_init__(self):
        object.__setattr__(self, "per_view", tuple(self.per_view))
        object.__setattr__(self, "degradation", tuple(self.degradation))
        if len(self.per_view) != len(self.degradation):
            raise BadConfig("per_view and degradation must both have M entries")

    @property
    def m_views(self) -> int:
        return len(self.per_view)

    @classmethod
    def consistent(cls, shared: SharedEdit, m_views: int) -> EditVector:
        """The shared edit with no per-view jitter and no degradation."""
        return cls(shared, (PerViewDeviation(),) * m_views, (Degradation(),) * m_views)


@dataclass(frozen=True, eq=False)
class RenderOutput:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W), 0 where nothing was hit
    valid: np.ndarray  # (H, W) bool

    def with_image(self, image: np.ndarray) -> RenderOutput:
        return RenderOutput(image, self.depth, self.valid)


# --- edits ---

def apply_edit(scene: Scene, shared: SharedEdit) -> Scene:
    """Return a new scene with ``shared`` applied to its target primitive."""
    target = scene.get(shared.target)
    scale = float(np.clip(shared.radius_scale, *RADIUS_SCALE_RANGE))
    albedo = np.clip(np.add(target.albedo, shared.color_delta), 0.0, 1.0)
    center = np.add(target.center, shared.translation_delta)
    if target.kind == "sphere":
        edited = replace(target, albedo=albedo, center=center, radius=target.radius * scale)
    else:
        edited = replace(
            target, albedo=albedo, center=center,
            size_u=target.size_u * scale, size_v=target.size_v * scale,
        )
    prims = tuple(edited if p.id == shared.target else p for p in scene.primitives)
    return replace(scene, primitives=prims)


def combine(shared: SharedEdit, dev: PerViewDeviation) -> SharedEdit:
    return replace(
        shared,
        color_delta=np.add(shared.color_delta, dev.color_jitter),
        translation_delta=np.add(shared.translation_delta, dev.translation_jitter),
    )


def jitter_pose(pose: Pose, dev: PerViewDeviation) -> Pose:
    """Perturb a camera in its own frame: rotate about the camera axes, then shift."""
    delta = Pose(axis_angle_to_matrix(dev.camera_rot_jitter), dev.camera_trans_jitter)
    return compose(delta, pose)


# --- rig ---

def build_rig(m_views: int, radius: float, arc_degrees: float, target, k: Intrinsics,
              height: float = 0.0) -> CameraRig:
    """Cameras evenly spaced on a horizontal arc around ``target``, looking at it.

    View 0 sits at -arc/2; at zero azimuth the camera is on the -z side of the
    target looking toward +z.
    """
    if m_views < 2:
        raise BadConfig("m_views must be >= 2")
    if not radius > 0:
        raise BadConfig("radius must be positive")
    target = np.asarray(target, dtype=np.float64)
    angles = np.radians(np.linspace(-arc_degrees / 2.0, arc_degrees / 2.0, m_views))
    poses = []
    for a in angles:
        eye = target + np.array([radius * np.sin(a), height, -radius * np.cos(a)])
        poses.append(look_at(eye, target))
    return CameraRig.from_poses(poses, k)


# --- textures ---

@functools.lru_cache(maxsize=64)
def _noise_tables(seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256).astype(np.int64)
    values = rng.random(256)
    return np.concatenate([perm, perm]), values


NOISE_OCTAVES = ((1.0, 0.5), (2.2, 0.3), (4.4, 0.2))


TEX_CODES = {"none": _k.TEX_NONE, "checker": _k.TEX_CHECKER, "value_noise": _k.TEX_NOISE}


@functools.lru_cache(maxsize=256)
def _pack_texture(tex: Texture):
    perm = np.zeros((len(NOISE_OCTAVES), 512), dtype=np.int64)
    values = np.zeros((len(NOISE_OCTAVES), 256))
    if tex.kind == "value_noise":
        for i in range(len(NOISE_OCTAVES)):
            perm[i], values[i] = _noise_tables(tex.seed + i)
    return perm, values


def _pack(scene: Scene) -> dict:
    """Scene as flat arrays for the compiled ray caster."""
    prims = scene.primitives
    textures = [_pack_texture(p.texture) for p in prims]
    n = len(prims)
    return dict(
        kinds=np.array([_k.SPHERE if p.kind == "sphere" else _k.QUAD for p in prims], dtype=np.int64),
        centers=np.array([p.center for p in prims], dtype=np.float64).reshape(n, 3),
        albedo=np.array([p.albedo for p in prims], dtype=np.float64).reshape(n, 3),
        radius=np.array([p.radius for p in prims], dtype=np.float64),
        axis_u=np.array([p.axis_u for p in prims], dtype=np.float64).reshape(n, 3),
        axis_v=np.array([p.axis_v for p in prims], dtype=np.float64).reshape(n, 3),
        size_u=np.array([p.size_u for p in prims], dtype=np.float64),
        size_v=np.array([p.size_v for p in prims], dtype=np.float64),
        tex_kind=np.array([TEX_CODES[p.texture.kind] for p in prims], dtype=np.int64),
        tex_period=np.array([p.texture.period for p in prims], dtype=np.float64),
        tex_a=np.array([p.texture.color_a for p in prims], dtype=np.float64).reshape(n, 3),
        tex_b=np.array([p.texture.color_b for p in prims], dtype=np.float64).reshape(n, 3),
        tex_scale=np.array([p.texture.scale for p in prims], dtype=np.float64),
        perm=np.array([t[0] for t in textures], dtype=np.int64).reshape(n, len(NOISE_OCTAVES), 512),
        values=np.array([t[1] for t in textures], dtype=np.float64).reshape(n, len(NOISE_OCTAVES), 256),
    )


_OCTAVES = np.array(NOISE_OCTAVES, dtype=np.float64)


def render_view(scene: Scene, pose: Pose, k: Intrinsics) -> RenderOutput:
    """Nearest-hit ray cast through pixel centers with flat albedo x texture shading.

    Textures: checker parity over the texture coordinates, or fractal lattice
    value noise (``NOISE_OCTAVES``), 2D in quad coordinates and 3D in the
    sphere's radius-normalized local frame. Depth is the camera-frame z of the
    hit, 0 where the ray escapes.
    """
    packed = _pack(scene)
    image, depth, valid = _k.render_kernel(
        np.ascontiguousarray(pose.rotation), pose.center, k.fx, k.fy, k.cx, k.cy, k.width, k.height,
        packed["kinds"], packed["centers"], packed["albedo"], packed["radius"], packed["axis_u"],
        packed["axis_v"], packed["size_u"], packed["size_v"], packed["tex_kind"], packed["tex_period"],
        packed["tex_a"], packed["tex_b"], packed["tex_scale"], packed["perm"], packed["values"],
        _OCTAVES, np.array(scene.background_color), HIT_EPS,
    )
    return RenderOutput(image, depth, valid)


# --- degradation ---

def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian truncated at 3 sigma, renormalized at the borders."""
    # below this the off-center taps underflow to zero anyway
    if sigma <= 1e-6:
        return image
    # taps further out than the image never overlap a pixel and the border
    # renormalization cancels the kernel's scale, so cap the radius there
    radius = min(int(np.ceil(3.0 * sigma)), max(image.shape[:2]) - 1)
    if radius < 1:
        return image
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kern = np.exp(-0.5 * (x / sigma) ** 2)
    kern /= kern.sum()
    ones = np.ones(image.shape[:2])
    norm = ndimage.correlate1d(ones, kern, axis=0, mode="constant", cval=0.0)
    norm = ndimage.correlate1d(norm, kern, axis=1, mode="constant", cval=0.0)
    out = ndimage.correlate1d(image, kern, axis=0, mode="constant", cval=0.0)
    out = ndimage.correlate1d(out, kern, axis=1, mode="constant", cval=0.0)
    if out.ndim == 3:
        norm = norm[..., None]
    return out / norm


def degrade(image: np.ndarray, deg: Degradation) -> np.ndarray:
    out = image
    if deg.contrast != 1.0:
        mean = image.reshape(-1, image.shape[-1]).mean(axis=0)
        out = mean + deg.contrast * (image - mean)
    out = gaussian_blur(out, deg.blur_sigma)
    return np.clip(out, 0.0, 1.0)


def render_candidate(scene: Scene, rig: CameraRig, edit: EditVector) -> list[RenderOutput]:
    if edit.m_views != rig.m_views:
        raise BadConfig(f"edit has {edit.m_views} views, rig has {rig.m_views}")
    views = []
    for pose, dev, deg in zip(rig.poses, edit.per_view, edit.degradation):
        edited = apply_edit(scene, combine(edit.shared, dev))
        out = render_view(edited, jitter_pose(pose, dev), rig.intrinsics)
        views.append(out.with_image(degrade(out.image, deg)))
    return views


def make_anchor(scene: Scene, rig: CameraRig, a: int, shared: SharedEdit) -> RenderOutput:
    """Faithful single-view edit of view ``a``: no jitter, no degradation."""
    if not 0 <= a < rig.m_views:
        raise IndexError(f"anchor index {a} out of range for {rig.m_views} views")
    return render_view(apply_edit(scene, shared), rig.poses[a], rig.intrinsics)


# --- default content ---

def default_scene(seed: int = 0, target_offset=(0.0, 0.0, 0.0)) -> Scene:
    """Textured wall and floor, a textured target sphere (id 0) and a small second sphere."""
    wall = Primitive(
        id=1, kind="quad", center=(0.0, 2.0, 3.5), albedo=(0.85, 0.8, 0.7),
        axis_u=(1.0, 0.0, 0.0), axis_v=(0.0, -1.0, 0.0), size_u=26.0, size_v=14.0,
        texture=Texture("value_noise", color_a=(1.0, 1.0, 1.0), color_b=(0.15, 0.2, 0.25),
                        seed=seed * 7 + 11, scale=0.7),
    )
    floor = Primitive(
        id=2, kind="quad", center=(0.0, -1.0, -1.0), albedo=(0.6, 0.7, 0.55),
        axis_u=(1.0, 0.0, 0.0), axis_v=(0.0, 0.0, 1.0), size_u=26.0, size_v=9.0,
        texture=Texture("value_noise", color_a=(1.0, 1.0, 1.0), color_b=(0.1, 0.15, 0.1),
                        seed=seed * 7 + 23, scale=1.0),
    )
    target = Primitive(
        id=0, kind="sphere", center=tuple(np.add((0.0, 0.0, 0.0), target_offset)),
        albedo=(0.8, 0.45, 0.3), radius=0.8,
        texture=Texture("value_noise", color_a=(1.0, 1.0, 1.0), color_b=(0.2, 0.2, 0.35),
                        seed=seed * 7 + 31, scale=1.5),
    )
    second = Primitive(
        id=3, kind="sphere", center=(-1.5, -0.5, 1.0), albedo=(0.35, 0.55, 0.85), radius=0.5,
        texture=Texture("value_noise", color_a=(1.0, 1.0, 1.0), color_b=(0.3, 0.3, 0.3),
                        seed=seed * 7 + 47, scale=2.0),
    )
    return Scene((target, wall, floor, second), background_color=(0.05, 0.05, 0.1))


def default_rig(m_views: int = 9, size: int = 96) -> CameraRig:
    return build_rig(m_views, 4.0, 60.0, (0.0, 0.0, 0.0), Intrinsics.default(size), height=1.2)


DEFAULT_ANCHOR_EDIT = SharedEdit(
    target=0, color_delta=(-0.3, 0.25, 0.2), translation_delta=(0.2, 0.15, 0.0), radius_scale=1.2,
)
