"""Rigid transforms and pinhole camera math.

Conventions: poses are world-to-camera, cameras are right-handed with +z
forward, +x right and +y down; pixel (0, 0) is the center of the top-left
pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_DEPTH = 1e-9
EPS_TRANSLATION = 1e-9


class NonPositiveDepth(ValueError):
    pass


class BehindCamera(ValueError):
    pass


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    a.setflags(write=False)
    return a


def is_rotation(m: np.ndarray, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(
        np.max(np.abs(m.T @ m - np.eye(3))) <= tol
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) (orthogonal polar factor)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def axis_angle_to_matrix(rotvec) -> np.ndarray:
    """Rodrigues' formula; rotvec is axis * angle in radians."""
    w = np.asarray(rotvec, dtype=np.float64).reshape(3)
    theta = float(np.sqrt(w @ w))
    if theta < 1e-12:
        # first-order expansion keeps tiny jitters exact to rounding
        k = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
        return nearest_rotation(np.eye(3) + k)
    k = w / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def rot_x(angle: float) -> np.ndarray:
    return axis_angle_to_matrix([angle, 0.0, 0.0])


def rot_y(angle: float) -> np.ndarray:
    return axis_angle_to_matrix([0.0, angle, 0.0])


def rot_z(angle: float) -> np.ndarray:
    return axis_angle_to_matrix([0.0, 0.0, angle])


def rotation_angle(m: np.ndarray) -> float:
    """Geodesic angle (radians) of a rotation matrix."""
    c = (np.trace(m) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    return rotation_angle(a @ b.T)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform x_cam = R x_world + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", _vec3(self.translation))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) points."""
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def orthonormalized(self) -> Pose:
        return Pose(nearest_rotation(self.rotation), self.translation)


@dataclass(frozen=True, eq=False)
class RelativePose:
    rotation: np.ndarray
    translation: np.ndarray
    unit_translation: np.ndarray
    # set by estimators that could not produce an estimate
    degenerate: bool = False

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", _vec3(self.translation))
        object.__setattr__(self, "unit_translation", _vec3(self.unit_translation))

    @classmethod
    def from_pose(cls, pose: Pose) -> RelativePose:
        t = pose.translation
        n = float(np.sqrt(t @ t))
        unit = t / n if n >= EPS_TRANSLATION else np.zeros(3)
        return cls(pose.rotation, t, unit)

    @classmethod
    def failed(cls) -> RelativePose:
        return cls(np.eye(3), np.zeros(3), np.zeros(3), degenerate=True)

    def as_pose(self) -> Pose:
        return Pose(self.rotation, self.translation)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls, size: int = 96, fov_degrees: float = 53.13) -> Intrinsics:
        f = (size / 2.0) / np.tan(np.radians(fov_degrees) / 2.0)
        return cls(float(f), float(f), size / 2.0, size / 2.0, size, size)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def in_frame(self, u, v):
        """True where a continuous pixel coordinate can be bilinearly sampled."""
        return (u >= 0.0) & (u <= self.width - 1) & (v >= 0.0) & (v <= self.height - 1)


def compose(a: Pose, b: Pose) -> Pose:
    """a after b."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def relative_transform(t_m: Pose, t_next: Pose) -> RelativePose:
    """T_next * T_m^-1: maps camera-m coordinates into camera-next coordinates."""
    return RelativePose.from_pose(compose(t_next, invert(t_m)))


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z = z / np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    y = down - (down @ z) * z
    ny = np.linalg.norm(y)
    if ny < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    y = y / ny
    x = np.cross(y, z)
    r = np.stack([x, y, z])
    return Pose(r, -r @ eye)


def project(point, k: Intrinsics) -> tuple[np.ndarray, float]:
    x, y, z = np.asarray(point, dtype=np.float64).reshape(3)
    if z <= EPS_DEPTH:
        raise NonPositiveDepth(f"point depth {z} is not positive")
    return np.array([k.fx * x / z + k.cx, k.fy * y / z + k.cy]), float(z)


def unproject(pixel, depth: float, k: Intrinsics) -> np.ndarray:
    if depth <= EPS_DEPTH:
        raise NonPositiveDepth(f"depth {depth} is not positive")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth])


def warp_pixel(pixel, depth_src: float, pose_src: Pose, pose_tgt: Pose, k: Intrinsics):
    """Move a pixel with known depth from the source camera into the target camera.

    Returns ``(pixel_tgt, depth_in_tgt, in_frame)``.
    """
    p_src = unproject(pixel, depth_src, k)
    p_tgt = compose(pose_tgt, invert(pose_src)).apply(p_src)
    if p_tgt[2] <= EPS_DEPTH:
        raise BehindCamera("warped point lies behind the target camera")
    uv, z = project(p_tgt, k)
    return uv, z, bool(k.in_frame(uv[0], uv[1]))


# --- dense helpers used by the renderer and verifiers ---

def pixel_grid(k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0 : k.height, 0 : k.width].astype(np.float64)
    return u, v


def backproject_depth(depth: np.ndarray, k: Intrinsics) -> np.ndarray:
    """(H, W) depth -> (H, W, 3) camera-frame points (garbage where depth == 0)."""
    u, v = pixel_grid(k)
    return np.stack([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth], axis=-1)


def warp_depth_map(depth: np.ndarray, pose_src: Pose, pose_tgt: Pose, k: Intrinsics):
    """Dense warp of every source pixel into the target camera.

    Returns ``(u, v, z)`` arrays of target pixel coordinates and target depth.
    Entries with ``z <= EPS_DEPTH`` are behind the target camera.
    """
    rel = compose(pose_tgt, invert(pose_src))
    p = backproject_depth(depth, k)
    r, t = rel.rotation, rel.translation
    x = p[..., 0] * r[0, 0] + p[..., 1] * r[0, 1] + p[..., 2] * r[0, 2] + t[0]
    y = p[..., 0] * r[1, 0] + p[..., 1] * r[1, 1] + p[..., 2] * r[1, 2] + t[1]
    z = p[..., 0] * r[2, 0] + p[..., 1] * r[2, 1] + p[..., 2] * r[2, 2] + t[2]
    safe = np.where(z > EPS_DEPTH, z, 1.0)
    return k.fx * x / safe + k.cx, k.fy * y / safe + k.cy, z
