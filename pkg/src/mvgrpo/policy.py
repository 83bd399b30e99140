"""Diagonal-Gaussian edit policy over flattened EditVectors.

Flat layout (version 1), for M views::

    shared      color_delta[3] translation_delta[3] log_radius_scale[1]
    per view m  translation_jitter[3] color_jitter[3] camera_rot_jitter[3] camera_trans_jitter[3]
    per view m  contrast[1] blur[1]

Every coordinate is the edit quantity divided by a fixed unit (``Layout``),
offset so that x = 0 is the identity edit. Clamps live in ``decode`` only;
densities are evaluated in the unclamped space.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .scene import (
    RADIUS_SCALE_RANGE,
    Degradation,
    EditVector,
    PerViewDeviation,
    SharedEdit,
)

LAYOUT_VERSION = 1
LOG_STD_RANGE = (-6.0, 2.0)
D_SHARED = 7
D_DEV = 12
D_DEG = 2
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Layout:
    m_views: int = 9
    target: int = 0
    # scene units per policy unit; x = 0 is the identity edit in every block
    color_unit: float = 0.5
    translation_unit: float = 0.5
    radius_unit: float = 0.25  # log radius_scale
    jitter_translation_unit: float = 0.02
    jitter_color_unit: float = 0.05
    camera_rot_unit: float = 0.005  # radians
    camera_trans_unit: float = 0.02
    # wide enough that naive verifiers can be hacked within the default run
    contrast_unit: float = 4.0
    blur_unit: float = 16.0  # pixels

    @property
    def dim(self) -> int:
        return D_SHARED + self.m_views * (D_DEV + D_DEG)

    @property
    def deg_offset(self) -> int:
        return D_SHARED + self.m_views * D_DEV

    def dev_slice(self, m: int) -> slice:
        start = D_SHARED + m * D_DEV
        return slice(start, start + D_DEV)

    def deg_slice(self, m: int) -> slice:
        start = self.deg_offset + m * D_DEG
        return slice(start, start + D_DEG)

    def block_of(self, i: int) -> str:
        if i < D_SHARED:
            return "shared"
        if i < self.deg_offset:
            return "per_view"
        return "degradation"

    def units(self) -> np.ndarray:
        u = np.empty(self.dim)
        u[0:3] = self.color_unit
        u[3:6] = self.translation_unit
        u[6] = self.radius_unit
        for m in range(self.m_views):
            s = self.dev_slice(m).start
            u[s : s + 3] = self.jitter_translation_unit
            u[s + 3 : s + 6] = self.jitter_color_unit
            u[s + 6 : s + 9] = self.camera_rot_unit
            u[s + 9 : s + 12] = self.camera_trans_unit
            g = self.deg_slice(m).start
            u[g] = self.contrast_unit
            u[g + 1] = self.blur_unit
        return u


def decode(x: np.ndarray, layout: Layout) -> EditVector:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layout.dim,):
        raise DimensionMismatch(f"expected {layout.dim} values, got {x.shape}")
    e = x * layout.units()
    shared = SharedEdit(
        target=layout.target,
        color_delta=e[0:3],
        translation_delta=e[3:6],
        # the exponent cap sits above log(4), so it only guards against overflow
        radius_scale=float(np.clip(math.exp(min(e[6], 2.0)), *RADIUS_SCALE_RANGE)),
    )
    per_view, degradation = [], []
    for m in range(layout.m_views):
        s = layout.dev_slice(m).start
        per_view.append(PerViewDeviation(e[s : s + 3], e[s + 3 : s + 6], e[s + 6 : s + 9], e[s + 9 : s + 12]))
        g = layout.deg_slice(m).start
        degradation.append(Degradation(float(np.clip(1.0 + e[g], 0.0, 1.0)), float(max(e[g + 1], 0.0))))
    return EditVector(shared, per_view, degradation)


def encode(edit: EditVector, layout: Layout) -> np.ndarray:
    if edit.m_views != layout.m_views:
        raise DimensionMismatch(f"edit has {edit.m_views} views, layout has {layout.m_views}")
    e = np.empty(layout.dim)
    e[0:3] = edit.shared.color_delta
    e[3:6] = edit.shared.translation_delta
    e[6] = math.log(edit.shared.radius_scale)
    for m, (dev, deg) in enumerate(zip(edit.per_view, edit.degradation)):
        s = layout.dev_slice(m).start
        e[s : s + 3] = dev.translation_jitter
        e[s + 3 : s + 6] = dev.color_jitter
        e[s + 6 : s + 9] = dev.camera_rot_jitter
        e[s + 9 : s + 12] = dev.camera_trans_jitter
        g = layout.deg_slice(m).start
        e[g] = deg.contrast - 1.0
        e[g + 1] = deg.blur_sigma
    return e / layout.units()


@dataclass(frozen=True, eq=False)
class PolicyParams:
    mean: np.ndarray
    log_std: np.ndarray
    layout: Layout = field(default_factory=Layout)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        log_std = np.clip(np.array(self.log_std, dtype=np.float64), *LOG_STD_RANGE)
        if mean.shape != (self.layout.dim,) or log_std.shape != (self.layout.dim,):
            raise DimensionMismatch(
                f"layout needs {self.layout.dim} values, got {mean.shape} / {log_std.shape}"
            )
        mean.setflags(write=False)
        log_std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_std", log_std)

    @property
    def dim(self) -> int:
        return self.layout.dim

    @classmethod
    def initial(cls, layout: Layout, std_edit: float = 0.3, std_degradation: float = 0.1) -> PolicyParams:
        log_std = np.full(layout.dim, math.log(std_edit))
        log_std[layout.deg_offset :] = math.log(std_degradation)
        return cls(np.zeros(layout.dim), log_std, layout)

    def replace(self, mean=None, log_std=None) -> PolicyParams:
        return PolicyParams(
            self.mean if mean is None else mean,
            self.log_std if log_std is None else log_std,
            self.layout,
        )

    def greedy(self) -> EditVector:
        return decode(self.mean, self.layout)


@dataclass(frozen=True, eq=False)
class Candidate:
    x: np.ndarray
    log_prob_old: float
    decoded: EditVector


def log_prob(p: PolicyParams, x: np.ndarray, noise_scale: float) -> float:
    std = noise_scale * np.exp(p.log_std)
    z = (np.asarray(x, dtype=np.float64) - p.mean) / std
    return float(-(0.5 * np.sum(z * z) + np.sum(np.log(std)) + p.dim * HALF_LOG_2PI))


def sample(p: PolicyParams, noise_scale: float, rng: np.random.Generator) -> Candidate:
    if not noise_scale > 0:
        raise ValueError("noise_scale must be positive")
    eps = rng.standard_normal(p.dim)
    x = p.mean + noise_scale * np.exp(p.log_std) * eps
    return Candidate(x, log_prob(p, x, noise_scale), decode(x, p.layout))


def grad_log_prob(p: PolicyParams, x: np.ndarray, noise_scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``log_prob`` w.r.t. (mean, log_std)."""
    var = (noise_scale * np.exp(p.log_std)) ** 2
    diff = np.asarray(x, dtype=np.float64) - p.mean
    return diff / var, diff * diff / var - 1.0


def kl_divergence(p: PolicyParams, ref: PolicyParams) -> float:
    """KL(p || ref) for diagonal Gaussians with std = exp(log_std)."""
    if p.dim != ref.dim:
        raise DimensionMismatch(f"{p.dim} vs {ref.dim}")
    var_p = np.exp(2.0 * p.log_std)
    var_r = np.exp(2.0 * ref.log_std)
    d = p.mean - ref.mean
    return float(np.sum(ref.log_std - p.log_std + (var_p + d * d) / (2.0 * var_r) - 0.5))


def grad_kl(p: PolicyParams, ref: PolicyParams) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``kl_divergence(p, ref)`` w.r.t. p's (mean, log_std)."""
    var_p = np.exp(2.0 * p.log_std)
    var_r = np.exp(2.0 * ref.log_std)
    return (p.mean - ref.mean) / var_r, var_p / var_r - 1.0


# --- checkpoints ---

CHECKPOINT_MAGIC = "mvgrpo-policy"
LAYOUT_FIELDS = (
    "target", "color_unit", "translation_unit", "radius_unit", "jitter_translation_unit",
    "jitter_color_unit", "camera_rot_unit", "camera_trans_unit", "contrast_unit", "blur_unit",
)


def dumps_checkpoint(p: PolicyParams) -> bytes:
    """Text header, ``end_header`` line, then mean[d] and log_std[d] as float64 LE."""
    lines = [CHECKPOINT_MAGIC, f"layout_version {LAYOUT_VERSION}", f"d {p.dim}", f"m_views {p.layout.m_views}"]
    lines += [f"{name} {getattr(p.layout, name)!r}" for name in LAYOUT_FIELDS]
    lines += ["fields mean,log_std", "end_header"]
    header = ("\n".join(lines) + "\n").encode("ascii")
    body = np.concatenate([p.mean, p.log_std]).astype("<f8").tobytes()
    return header + body


def loads_checkpoint(data: bytes) -> PolicyParams:
    buf = io.BytesIO(data)
    if buf.readline().decode("ascii").strip() != CHECKPOINT_MAGIC:
        raise ValueError("not a policy checkpoint")
    meta = {}
    while True:
        line = buf.readline()
        if not line:
            raise ValueError("checkpoint header is not terminated")
        line = line.decode("ascii").strip()
        if line == "end_header":
            break
        key, _, value = line.partition(" ")
        meta[key] = value
    if int(meta["layout_version"]) != LAYOUT_VERSION:
        raise ValueError(f"unsupported layout version {meta['layout_version']}")
    kwargs = {name: (int(meta[name]) if name == "target" else float(meta[name])) for name in LAYOUT_FIELDS}
    layout = Layout(m_views=int(meta["m_views"]), **kwargs)
    d = int(meta["d"])
    if d != layout.dim:
        raise DimensionMismatch(f"header d={d} does not match layout ({layout.dim})")
    body = np.frombuffer(buf.read(), dtype="<f8")
    if body.size != 2 * d:
        raise ValueError(f"checkpoint body has {body.size} values, expected {2 * d}")
    return PolicyParams(body[:d].copy(), body[d:].copy(), layout)
