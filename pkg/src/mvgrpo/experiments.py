"""The four experiment commands: train, decay, eval and render."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import config as C
from . import formats as F
from .grpo import (
    Environment,
    GreedyMetrics,
    TrainingRun,
    anchor_dperc,
    evaluate_edit,
    train,
)
from .policy import PolicyParams, dumps_checkpoint, loads_checkpoint
from .scene import (
    CameraRig,
    EditVector,
    PerViewDeviation,
    Scene,
    SharedEdit,
    apply_edit,
    combine,
    render_candidate,
    render_view,
)
from .verifiers import mean_confidence, photoconsistency_confidence

log = logging.getLogger(__name__)

DECAY_STREAM = 7
CHECKPOINT = "policy_final.ckpt"

ITERATION_HEADER = [
    "iteration", "anchor_index", "mean_reward", "max_reward", "kl", "objective", "adv_mean", "adv_std",
    "r_d", "r_p", "r_t", "r_a", "r_sfm", "r_warp", "greedy_texture_energy", "greedy_hf_energy", "mean_std",
]
CANDIDATE_HEADER = [
    "run_id", "iteration", "member", "anchor_index", "r_d", "r_p", "r_t", "r_a", "r_sfm", "r_warp",
    "composite", "advantage", "hf_energy",
]
METRIC_FIELDS = [
    "composite", "r_d", "r_p", "r_t", "r_a", "ph_loss", "texture_energy", "hf_energy",
    "rotation_error_deg", "anchor_dperc", "jitter",
]
DECAY_HEADER = ["k", "mean_conf_depth", "mean_conf_point", "replaced_view"]


class MissingCheckpoint(FileNotFoundError):
    pass


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    return out


def _setup(cfg: dict):
    scene = C.build_scene(cfg)
    rig = C.build_rig_from(cfg)
    shared = C.shared_edit(cfg)
    v = cfg["verifier"]
    env = Environment.build(scene, rig, shared, kappa=float(v["kappa"]), kappa_geo=float(v["kappa_geo"]),
                            tau_occ=float(v["tau_occ"]), lam=float(v["lambda"]))
    return scene, rig, shared, env


def run_id(cfg: dict) -> str:
    return f"{cfg['trainer']['verifier_mode']}-s{cfg['seed']}-{C.config_hash(cfg)[:8]}"


def zero_edit_dperc(env: Environment) -> float:
    """Perceptual distance to the anchors of the unedited scene (the untrained editor's output)."""
    views = render_candidate(env.scene, env.rig, EditVector.consistent(SharedEdit(env.shared_star.target),
                                                                     env.rig.m_views))
    return anchor_dperc(views, env)


def check_thresholds(cfg: dict, final: GreedyMetrics, texture_ratio: float, dperc_ratio: float) -> dict:
    th = C.Thresholds.from_config(cfg)
    checks = {
        "min_composite": (final.composite, th.min_composite, lambda v, t: v >= t),
        "max_jitter": (final.jitter, th.max_jitter, lambda v, t: v <= t),
        "max_dperc_ratio": (dperc_ratio, th.max_dperc_ratio, lambda v, t: v <= t),
        "min_texture_ratio": (texture_ratio, th.min_texture_ratio, lambda v, t: v >= t),
        "max_texture_ratio": (texture_ratio, th.max_texture_ratio, lambda v, t: v <= t),
        "max_ph_loss": (final.ph_loss, th.max_ph_loss, lambda v, t: v <= t),
    }
    return {name: {"value": float(v), "limit": t, "passed": bool(ok(v, t))}
            for name, (v, t, ok) in checks.items() if t is not None}


def _block_stats(p: PolicyParams) -> dict:
    lay = p.layout
    blocks = {"shared": slice(0, 7), "per_view": slice(7, lay.deg_offset), "degradation": slice(lay.deg_offset, lay.dim)}
    return {name: {"mean_abs_mean": float(np.mean(np.abs(p.mean[s]))),
                   "mean_std": float(np.mean(np.exp(p.log_std[s])))}
            for name, s in blocks.items()}


def summarize(cfg: dict, run: TrainingRun) -> dict:
    env = run.env
    initial = evaluate_edit(env, run.initial.greedy())
    final = evaluate_edit(env, run.final.greedy())
    base = zero_edit_dperc(env)
    texture_ratio = final.texture_energy / initial.texture_energy if initial.texture_energy > 0 else float("nan")
    dperc_ratio = final.anchor_dperc / base if base > 0 else float("nan")
    thresholds = check_thresholds(cfg, final, texture_ratio, dperc_ratio)
    shared = run.final.greedy().shared
    return {
        "config_hash": C.config_hash(cfg),
        "run_id": run_id(cfg),
        "verifier_mode": cfg["trainer"]["verifier_mode"],
        "seed": cfg["seed"],
        "iterations": len(run.logs),
        "initial": asdict(initial),
        "final": asdict(final),
        "zero_edit_dperc": base,
        "texture_ratio": texture_ratio,
        "dperc_ratio": dperc_ratio,
        "final_shared_edit": {
            "color_delta": list(shared.color_delta), "translation_delta": list(shared.translation_delta),
            "radius_scale": shared.radius_scale,
        },
        "policy": _block_stats(run.final),
        "thresholds": thresholds,
        "passed": all(t["passed"] for t in thresholds.values()),
    }


def _floats(obj):
    if isinstance(obj, dict):
        return {k: _floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_floats(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(yaml.safe_dump(_floats(summary), sort_keys=False))


def cmd_train(cfg: dict, progress=None) -> dict:
    out = _out_dir(cfg["output_dir"])
    scene, rig, shared, env = _setup(cfg)
    tcfg = C.trainer_config(cfg)
    (out / "config.yaml").write_text(C.dump(cfg))
    t0 = time.perf_counter()
    run = train(scene, rig, shared, tcfg, layout=C.layout(cfg), env=env, progress=progress)
    log.info("trained %d iterations in %.1f s", len(run.logs), time.perf_counter() - t0)
    rid = run_id(cfg)
    F.write_csv(out / "iterations.csv", ITERATION_HEADER,
                [[getattr(l, h) for h in ITERATION_HEADER] for l in run.logs])
    rows = []
    for it, (a, rewards, adv, hf) in enumerate(run.rollouts):
        for i, r in enumerate(rewards):
            rows.append([rid, it, i, a, r.r_d, r.r_p, r.r_t, r.r_a, r.r_sfm, r.r_warp, r.composite, adv[i], hf[i]])
    F.write_csv(out / "candidates.csv", CANDIDATE_HEADER, rows)
    (out / "policy_initial.ckpt").write_bytes(dumps_checkpoint(run.initial))
    (out / CHECKPOINT).write_bytes(dumps_checkpoint(run.final))
    summary = summarize(cfg, run)
    write_summary(out / "summary.yaml", summary)
    for m, view in enumerate(render_candidate(scene, rig, run.final.greedy())):
        F.write_ppm(out / f"greedy_view_{m}.ppm", view.image)
    return summary


def cmd_eval(cfg: dict, run_dir=None) -> dict:
    """Score the greedy action of a saved policy; writes ``metrics.csv`` into the run directory."""
    run_dir = Path(run_dir if run_dir is not None else cfg["output_dir"])
    ckpt = run_dir / CHECKPOINT
    if not ckpt.exists():
        raise MissingCheckpoint(f"no checkpoint at {ckpt}")
    params = loads_checkpoint(ckpt.read_bytes())
    _, rig, _, env = _setup(cfg)
    if params.layout.m_views != rig.m_views:
        raise C.ConfigError(f"checkpoint has {params.layout.m_views} views, rig has {rig.m_views}")
    metrics = evaluate_edit(env, params.greedy())
    row = [getattr(metrics, f) for f in METRIC_FIELDS]
    F.write_csv(run_dir / "metrics.csv", ["config_hash"] + METRIC_FIELDS, [[C.config_hash(cfg)] + row])
    return asdict(metrics)


# --- consistency decay ---

def decay_sweep(scene: Scene, rig: CameraRig, shared: SharedEdit, seed: int, jitter: float = 0.3,
                kappa: float = 10.0, kappa_geo: float = 5.0, tau_occ: float = 0.05):
    """Mean confidence as k of the M views are swapped for independently jittered renders.

    Each replacement moves the edited target by ``jitter`` scene units in its
    own random direction. Returns ``(rows, maps)``: rows are
    ``(k, mean_conf_depth, mean_conf_point, replaced_view)``, maps the
    per-k (conf_depth, conf_point) lists.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, DECAY_STREAM]))
    m_views = rig.m_views
    consistent = render_candidate(scene, rig, EditVector.consistent(shared, m_views))
    replacements = []
    for m in range(m_views):
        d = rng.standard_normal(3)
        dev = PerViewDeviation(translation_jitter=jitter * d / np.linalg.norm(d))
        replacements.append(render_view(apply_edit(scene, combine(shared, dev)), rig.poses[m], rig.intrinsics))
    order = rng.permutation(m_views)
    rows, maps = [], []
    for k in range(m_views):
        views = list(consistent)
        for m in order[:k]:
            views[m] = replacements[m]
        cd, cp = photoconsistency_confidence(views, rig, kappa, kappa_geo, tau_occ)
        rows.append((k, mean_confidence(cd), mean_confidence(cp), int(order[k - 1]) if k else -1))
        maps.append((cd, cp))
    return rows, maps


def _tile(maps: list) -> np.ndarray:
    return np.concatenate([np.where(c.valid, c.values, 0.0) for c in maps], axis=1)


def cmd_decay(cfg: dict) -> list:
    out = _out_dir(cfg["output_dir"])
    scene, rig, shared, env = _setup(cfg)
    rows, maps = decay_sweep(scene, rig, shared, cfg["seed"], float(cfg["decay"]["jitter"]),
                             env.kappa, env.kappa_geo, env.tau_occ)
    F.write_csv(out / "decay.csv", DECAY_HEADER, [list(r) for r in rows])
    for (k, *_), (cd, cp) in zip(rows, maps):
        F.write_pgm8(out / f"conf_depth_k{k}.pgm", _tile(cd))
        F.write_pgm8(out / f"conf_point_k{k}.pgm", _tile(cp))
    return rows


def cmd_render(cfg: dict) -> list:
    """Views, depths and confidence heatmaps of the consistent target edit."""
    out = _out_dir(cfg["output_dir"])
    scene, rig, shared, env = _setup(cfg)
    views = render_candidate(scene, rig, EditVector.consistent(shared, rig.m_views))
    cd, cp = photoconsistency_confidence(views, rig, env.kappa, env.kappa_geo, env.tau_occ)
    written = []
    for m, v in enumerate(views):
        files = {
            f"view_{m}.ppm": lambda p, v=v: F.write_ppm(p, v.image),
            f"depth_{m}.pgm": lambda p, v=v: F.write_depth_pgm(p, v.depth),
            f"conf_depth_{m}.pgm": lambda p, m=m: F.write_pgm8(p, np.where(cd[m].valid, cd[m].values, 0.0)),
            f"conf_point_{m}.pgm": lambda p, m=m: F.write_pgm8(p, np.where(cp[m].valid, cp[m].values, 0.0)),
        }
        for name, write in files.items():
            write(out / name)
            written.append(out / name)
    return written
