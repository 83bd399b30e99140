"""Run configuration: a versioned YAML document with a fixed schema.

Every key has a default (``DEFAULTS``); user files may omit keys but may not
add unknown ones. Command-line flags override the merged values.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import formats as F
from .geometry import Intrinsics
from .grpo import MODES, TrainerConfig
from .policy import Layout
from .scene import (
    BadConfig,
    CameraRig,
    Primitive,
    Scene,
    SharedEdit,
    Texture,
    build_rig,
    default_scene,
)

SCHEMA_VERSION = 1
EXPERIMENTS = ("train", "decay", "eval", "render")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "experiment": "train",
    "seed": 0,
    "output_dir": "runs/default",
    "threads": 1,
    "scene": {
        "file": None,  # YAML scene file; the built-in scene when null
        "seed": None,  # texture seed of the built-in scene; null = run seed
    },
    "rig": {
        "m_views": 9,
        "radius": 4.0,
        "arc_degrees": 60.0,
        "height": 1.2,
        "target": [0.0, 0.0, 0.0],
        "image_size": 96,
        "fov_degrees": 53.13,
    },
    "edit": {
        "target": 0,
        "color_delta": [-0.3, 0.25, 0.2],
        "translation_delta": [0.2, 0.15, 0.0],
        "radius_scale": 1.2,
    },
    "trainer": {
        "group_size": 16,
        "noise_scale": 0.8,
        "clip_epsilon": 0.2,
        "kl_beta": 0.01,
        "learning_rate": 0.05,
        "iterations": 300,
        "std_floor": 1e-8,
        "weights": {"d": 0.25, "p": 0.25, "t": 0.25, "a": 0.25},
        "verifier_mode": "full",
        "diagnostics_every": 1,
    },
    "policy": {
        "color_unit": 0.5,
        "translation_unit": 0.5,
        "radius_unit": 0.25,
        "jitter_translation_unit": 0.02,
        "jitter_color_unit": 0.05,
        "camera_rot_unit": 0.005,
        "camera_trans_unit": 0.02,
        "contrast_unit": 4.0,
        "blur_unit": 16.0,
    },
    "verifier": {"kappa": 10.0, "kappa_geo": 5.0, "tau_occ": 0.05, "lambda": 5.0},
    "decay": {"jitter": 0.3},
    "thresholds": {
        "min_composite": None,
        "max_jitter": None,
        "max_dperc_ratio": None,
        "min_texture_ratio": None,
        "max_texture_ratio": None,
        "max_ph_loss": None,
    },
}


def _merge(base: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            # weights may name a subset of the terms
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def resolve(user: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge a user document and flag overrides onto the defaults and validate."""
    user = dict(user or {})
    version = user.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    cfg = _merge(DEFAULTS, user)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown override {dotted!r}")
        node[leaf] = value
    validate(cfg)
    return cfg


def load(path, overrides: dict | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        user = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = resolve(user, overrides)
    scene_file = cfg["scene"]["file"]
    if scene_file is not None and not Path(scene_file).is_absolute():
        cfg["scene"]["file"] = str((Path(path).parent / scene_file).resolve())
    return cfg


def validate(cfg: dict) -> None:
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    if cfg["trainer"]["verifier_mode"] not in MODES:
        raise ConfigError(f"verifier_mode must be one of {tuple(MODES)}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    try:
        trainer_config(cfg)
        build_rig_from(cfg)
        shared_edit(cfg)
        layout(cfg)
    except (BadConfig, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    for name, value in cfg["verifier"].items():
        if not (isinstance(value, (int, float)) and value > 0):
            raise ConfigError(f"verifier.{name} must be positive")


def trainer_config(cfg: dict) -> TrainerConfig:
    t = cfg["trainer"]
    return TrainerConfig(
        group_size=int(t["group_size"]), noise_scale=float(t["noise_scale"]),
        clip_epsilon=float(t["clip_epsilon"]), kl_beta=float(t["kl_beta"]),
        learning_rate=float(t["learning_rate"]), iterations=int(t["iterations"]),
        std_floor=float(t["std_floor"]), weights={k: float(v) for k, v in t["weights"].items()},
        verifier_mode=t["verifier_mode"], seed=int(cfg["seed"]), threads=int(cfg["threads"]),
        diagnostics_every=int(t["diagnostics_every"]),
    )


def layout(cfg: dict) -> Layout:
    return Layout(m_views=int(cfg["rig"]["m_views"]), target=int(cfg["edit"]["target"]),
                  **{k: float(v) for k, v in cfg["policy"].items()})


def shared_edit(cfg: dict) -> SharedEdit:
    e = cfg["edit"]
    return SharedEdit(int(e["target"]), e["color_delta"], e["translation_delta"], float(e["radius_scale"]))


def build_rig_from(cfg: dict) -> CameraRig:
    r = cfg["rig"]
    k = Intrinsics.default(int(r["image_size"]), float(r["fov_degrees"]))
    return build_rig(int(r["m_views"]), float(r["radius"]), float(r["arc_degrees"]), r["target"], k,
                     height=float(r["height"]))


def build_scene(cfg: dict) -> Scene:
    if cfg["scene"]["file"] is None:
        seed = cfg["scene"]["seed"]
        return default_scene(seed=cfg["seed"] if seed is None else int(seed))
    return load_scene(cfg["scene"]["file"])


# --- scene files ---

PRIMITIVE_KEYS = {"id", "kind", "center", "albedo", "radius", "axis_u", "axis_v", "size_u", "size_v", "texture"}
TEXTURE_KEYS = {"kind", "period", "color_a", "color_b", "seed", "scale"}


def scene_from_dict(doc: dict) -> Scene:
    unknown = set(doc) - {"background_color", "primitives"}
    if unknown:
        raise ConfigError(f"unknown scene keys {sorted(unknown)}")
    prims = []
    for i, p in enumerate(doc.get("primitives", [])):
        extra = set(p) - PRIMITIVE_KEYS
        if extra:
            raise ConfigError(f"primitive {i}: unknown keys {sorted(extra)}")
        p = dict(p)
        tex = p.pop("texture", None) or {}
        extra = set(tex) - TEXTURE_KEYS
        if extra:
            raise ConfigError(f"primitive {i} texture: unknown keys {sorted(extra)}")
        try:
            prims.append(Primitive(texture=Texture(**tex), **p))
        except (BadConfig, TypeError, ValueError) as e:
            raise ConfigError(f"primitive {i}: {e}") from e
    return Scene(tuple(prims), doc.get("background_color", (0.0, 0.0, 0.0)))


def scene_to_dict(scene: Scene) -> dict:
    out = []
    for p in scene.primitives:
        d = {"id": p.id, "kind": p.kind, "center": list(p.center), "albedo": list(p.albedo)}
        if p.kind == "sphere":
            d["radius"] = p.radius
        else:
            d.update(axis_u=list(p.axis_u), axis_v=list(p.axis_v), size_u=p.size_u, size_v=p.size_v)
        t = p.texture
        d["texture"] = {"kind": t.kind, "period": t.period, "color_a": list(t.color_a),
                        "color_b": list(t.color_b), "seed": t.seed, "scale": t.scale}
        out.append(d)
    return {"background_color": list(scene.background_color), "primitives": out}


def load_scene(path) -> Scene:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read scene file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: scene file must be a mapping")
    return scene_from_dict(doc)


# keys that change where or how fast a run executes, not what it computes
EXECUTION_KEYS = ("experiment", "output_dir", "threads")


def config_hash(cfg: dict) -> str:
    return F.config_hash({k: v for k, v in cfg.items() if k not in EXECUTION_KEYS})


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


@dataclass(frozen=True)
class Thresholds:
    min_composite: float | None = None
    max_jitter: float | None = None
    max_dperc_ratio: float | None = None
    min_texture_ratio: float | None = None
    max_texture_ratio: float | None = None
    max_ph_loss: float | None = None

    @classmethod
    def from_config(cls, cfg: dict) -> Thresholds:
        return cls(**{k: (None if v is None else float(v)) for k, v in cfg["thresholds"].items()})
