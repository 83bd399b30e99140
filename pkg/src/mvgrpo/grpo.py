"""Group-relative policy optimization of the edit policy against the verifiers."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from .geometry import geodesic_distance
from .policy import Candidate, Layout, PolicyParams
from .imaging import high_frequency_energy
from .scene import CameraRig, EditVector, Scene, SharedEdit, make_anchor, render_candidate
from .verifiers import (
    KAPPA_GEO,
    KAPPA_PHOTO,
    LAMBDA_ANCHOR,
    PAPER_WEIGHTS,
    TAU_OCC,
    LengthMismatch,
    RewardBreakdown,
    anchor_reward,
    diagnostics,
    estimate_relative_poses,
    geometric_rewards,
    perceptual_distance,
    photoconsistency_confidence,
    pose_reward,
    sfm_reward,
    views_ph_loss,
    warp_reward,
)

log = logging.getLogger(__name__)

# reward terms each verifier mode scores, and whether the anchor view is substituted
MODES = {
    "full": (("d", "p", "t", "a"), True),
    "no_geo": (("t", "a"), True),
    "no_pose": (("d", "p", "a"), True),
    "no_anchor": (("d", "p", "t"), False),
    "sfm_only": (("sfm",), False),
    "warp_only": (("warp",), False),
}
ANCHOR_STREAM = 1
MEMBER_STREAM = 0


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    group_size: int = 16
    noise_scale: float = 0.8
    clip_epsilon: float = 0.2
    kl_beta: float = 0.01
    learning_rate: float = 0.05
    iterations: int = 300
    std_floor: float = 1e-8
    weights: dict = field(default_factory=lambda: dict(PAPER_WEIGHTS))
    verifier_mode: str = "full"
    seed: int = 0
    threads: int = 1
    # evaluate the greedy candidate's diagnostics every n iterations (0 = never)
    diagnostics_every: int = 1

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        for name in ("noise_scale", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.verifier_mode not in MODES:
            raise ValueError(f"unknown verifier_mode {self.verifier_mode!r}")
        if set(self.weights) - {"d", "p", "t", "a"}:
            raise ValueError("weights are keyed by d, p, t, a")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def mode_weights(self) -> dict:
        return mode_weights(self.verifier_mode, self.weights)


def mode_weights(mode: str, weights: dict) -> dict:
    """Weights of the terms scored in ``mode``, renormalized to sum to 1."""
    terms, _ = MODES[mode]
    if terms in (("sfm",), ("warp",)):
        return {terms[0]: 1.0}
    w = {t: float(weights.get(t, 0.0)) for t in terms}
    total = sum(w.values())
    if total <= 0:
        raise ValueError(f"weights of mode {mode!r} sum to zero")
    return {t: v / total for t, v in w.items()}


@dataclass(frozen=True, eq=False)
class Environment:
    """Scene, rig, the target edit and its pre-rendered anchor views."""

    scene: Scene
    rig: CameraRig
    shared_star: SharedEdit
    anchors: tuple
    kappa: float = KAPPA_PHOTO
    kappa_geo: float = KAPPA_GEO
    tau_occ: float = TAU_OCC
    lam: float = LAMBDA_ANCHOR

    @classmethod
    def build(cls, scene: Scene, rig: CameraRig, shared_star: SharedEdit, **kw) -> Environment:
        anchors = tuple(make_anchor(scene, rig, a, shared_star) for a in range(rig.m_views))
        return cls(scene, rig, shared_star, anchors, **kw)

    def substitute(self, views: list, a: int) -> list:
        out = list(views)
        out[a] = self.anchors[a]
        return out

    def score(self, views: list, a: int, mode: str, weights: dict) -> RewardBreakdown:
        """Reward of rendered candidate views under ``mode`` with anchor index ``a``."""
        terms, substitute = MODES[mode]
        vset = self.substitute(views, a) if substitute else views
        r = {}
        if "d" in terms or "p" in terms:
            cd, cp = photoconsistency_confidence(vset, self.rig, self.kappa, self.kappa_geo, self.tau_occ)
            r["r_d"], r["r_p"] = geometric_rewards(cd, cp)
        if "t" in terms:
            r["r_t"] = pose_reward(estimate_relative_poses(vset, self.rig), list(self.rig.gt_relative))
        if "a" in terms:
            r["r_a"] = anchor_reward(views[a].image, self.anchors[a].image, self.lam)
        if "sfm" in terms:
            r["r_sfm"] = sfm_reward(views, self.rig.intrinsics)
        if "warp" in terms:
            r["r_warp"] = warp_reward(views, self.rig)
        return RewardBreakdown.from_terms(weights, **r)

    def evaluate(self, edit: EditVector, a: int, mode: str, weights: dict):
        views = render_candidate(self.scene, self.rig, edit)
        return self.score(views, a, mode, weights), views


@dataclass(frozen=True, eq=False)
class GroupRollout:
    iteration: int
    anchor_index: int
    candidates: tuple
    rewards: tuple
    advantages: np.ndarray
    # mean high-frequency energy of each candidate's raw views
    hf_energy: tuple = ()

    @property
    def composites(self) -> np.ndarray:
        return np.array([r.composite for r in self.rewards])


def member_rng(seed: int, iteration: int, member: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, iteration, MEMBER_STREAM, member]))


def anchor_index(seed: int, iteration: int, m_views: int) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([seed, iteration, ANCHOR_STREAM]))
    return int(rng.integers(m_views))


def compute_advantages(rewards, eps: float = 1e-8) -> np.ndarray:
    """Group-standardized rewards with the population std; all zero for flat groups."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a group needs at least two rewards")
    std = r.std()
    if not std > eps:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def _map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def rollout_group(params: PolicyParams, env: Environment, cfg: TrainerConfig, iteration: int,
                  forced: list | None = None) -> GroupRollout:
    """Sample, render and score one group; ``forced`` replaces the sampled actions."""
    a = anchor_index(cfg.seed, iteration, env.rig.m_views)
    if forced is not None:
        if len(forced) != cfg.group_size:
            raise LengthMismatch(f"{len(forced)} forced actions for a group of {cfg.group_size}")
        cands = [
            Candidate(np.asarray(x, dtype=np.float64), pol.log_prob(params, x, cfg.noise_scale),
                      pol.decode(x, params.layout))
            for x in forced
        ]
    else:
        cands = [pol.sample(params, cfg.noise_scale, member_rng(cfg.seed, iteration, i))
                 for i in range(cfg.group_size)]
    weights = cfg.mode_weights()

    def run(c: Candidate):
        reward, views = env.evaluate(c.decoded, a, cfg.verifier_mode, weights)
        hf = float(np.mean([high_frequency_energy(v.image) for v in views]))
        return reward, hf

    results = _map(run, cands, cfg.threads)
    rewards = tuple(r for r, _ in results)
    adv = compute_advantages([r.composite for r in rewards], cfg.std_floor)
    return GroupRollout(iteration, a, tuple(cands), rewards, adv, tuple(h for _, h in results))


def clipped_objective(params: PolicyParams, old_log_probs, xs, advantages, clip_epsilon: float,
                      noise_scale: float, kl_beta: float = 0.0, ref: PolicyParams | None = None):
    """Clipped surrogate minus ``kl_beta * KL(params || ref)``.

    Returns ``(value, (grad_mean, grad_log_std))``. A term contributes gradient
    only where the unclipped branch attains the minimum.
    """
    old = np.asarray(old_log_probs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if not len(old) == len(xs) == len(adv):
        raise LengthMismatch(f"{len(old)} log-probs, {len(xs)} actions, {len(adv)} advantages")
    g = len(adv)
    value = 0.0
    g_mean = np.zeros(params.dim)
    g_log_std = np.zeros(params.dim)
    for i in range(g):
        log_ratio = pol.log_prob(params, xs[i], noise_scale) - old[i]
        # a ratio beyond float range is clipped for A > 0 and diverges for A < 0
        ratio = math.exp(log_ratio) if log_ratio < 709.0 else math.inf
        clipped = min(max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon)
        unclipped_term = ratio * adv[i]
        clipped_term = clipped * adv[i]
        if unclipped_term <= clipped_term:
            value += unclipped_term
            dm, ds = pol.grad_log_prob(params, xs[i], noise_scale)
            g_mean += adv[i] * ratio * dm
            g_log_std += adv[i] * ratio * ds
        else:
            value += clipped_term
    value /= g
    g_mean /= g
    g_log_std /= g
    if kl_beta and ref is not None:
        value -= kl_beta * pol.kl_divergence(params, ref)
        km, ks = pol.grad_kl(params, ref)
        g_mean -= kl_beta * km
        g_log_std -= kl_beta * ks
    return value, (g_mean, g_log_std)


# --- evaluation of a policy's greedy action ---

@dataclass(frozen=True)
class GreedyMetrics:
    composite: float
    r_d: float
    r_p: float
    r_t: float
    r_a: float
    ph_loss: float
    texture_energy: float
    hf_energy: float
    rotation_error_deg: float
    anchor_dperc: float
    jitter: float


def jitter_magnitude(edit: EditVector) -> float:
    """Largest per-view translation jitter (world or camera) in scene units."""
    mags = [0.0]
    for dev in edit.per_view:
        mags.append(float(np.linalg.norm(dev.translation_jitter)))
        mags.append(float(np.linalg.norm(dev.camera_trans_jitter)))
    return max(mags)


def rotation_error_deg(views: list, rig: CameraRig) -> float:
    """Mean geodesic error of estimated adjacent rotations; failed pairs count 180 degrees."""
    est = estimate_relative_poses(views, rig)
    errs = [math.pi if e.degenerate else geodesic_distance(e.rotation, g.rotation)
            for e, g in zip(est, rig.gt_relative)]
    return math.degrees(float(np.mean(errs)))


def anchor_dperc(views: list, env: Environment) -> float:
    """Mean over views of the perceptual distance to that view's anchor."""
    return float(np.mean([perceptual_distance(v.image, an.image) for v, an in zip(views, env.anchors)]))


def evaluate_edit(env: Environment, edit: EditVector, weights: dict | None = None) -> GreedyMetrics:
    """Score an edit with the full reward averaged over every anchor index, plus metrics."""
    weights = mode_weights("full", PAPER_WEIGHTS if weights is None else weights)
    views = render_candidate(env.scene, env.rig, edit)
    rewards = [env.score(views, a, "full", weights) for a in range(env.rig.m_views)]
    te, hf = diagnostics(views)

    def avg(name):
        return float(np.mean([getattr(r, name) for r in rewards]))

    return GreedyMetrics(
        composite=avg("composite"), r_d=avg("r_d"), r_p=avg("r_p"), r_t=avg("r_t"), r_a=avg("r_a"),
        ph_loss=views_ph_loss(views, env.rig), texture_energy=te, hf_energy=hf,
        rotation_error_deg=rotation_error_deg(views, env.rig), anchor_dperc=anchor_dperc(views, env),
        jitter=jitter_magnitude(edit),
    )


# --- training ---

@dataclass(frozen=True)
class IterationLog:
    iteration: int
    anchor_index: int
    mean_reward: float
    max_reward: float
    kl: float
    objective: float
    adv_mean: float
    adv_std: float
    r_d: float
    r_p: float
    r_t: float
    r_a: float
    r_sfm: float
    r_warp: float
    greedy_texture_energy: float
    greedy_hf_energy: float
    mean_std: float


@dataclass(eq=False)
class TrainingRun:
    config: TrainerConfig
    env: Environment
    initial: PolicyParams
    final: PolicyParams
    logs: list
    rollouts: list  # per iteration: (anchor_index, rewards, advantages, hf_energy)
    trajectory: list  # PolicyParams after each update


def _nanmean(values) -> float:
    a = np.array(values, dtype=np.float64)
    if np.all(np.isnan(a)):
        return float("nan")
    return float(np.nanmean(a))


def train(scene: Scene, rig: CameraRig, shared_star: SharedEdit, cfg: TrainerConfig,
          layout: Layout | None = None, env: Environment | None = None, progress=None) -> TrainingRun:
    if layout is None:
        layout = Layout(m_views=rig.m_views, target=shared_star.target)
    if env is None:
        env = Environment.build(scene, rig, shared_star)
    params = PolicyParams.initial(layout)
    ref = params
    logs, rollouts, trajectory = [], [], []
    for it in range(cfg.iterations):
        group = rollout_group(params, env, cfg, it)
        adv = group.advantages
        adv_mean, adv_std = float(adv.mean()), float(adv.std())
        if np.any(adv != 0.0):
            assert abs(adv_mean) <= 1e-12 and abs(adv_std - 1.0) <= 1e-9, (adv_mean, adv_std)
        old = [c.log_prob_old for c in group.candidates]
        xs = [c.x for c in group.candidates]
        value, (g_mean, g_log_std) = clipped_objective(
            params, old, xs, adv, cfg.clip_epsilon, cfg.noise_scale, cfg.kl_beta, ref)
        if not (np.all(np.isfinite(g_mean)) and np.all(np.isfinite(g_log_std)) and math.isfinite(value)):
            bad = np.flatnonzero(~np.isfinite(g_mean) | ~np.isfinite(g_log_std))
            raise TrainingDiverged(
                f"non-finite gradient at iteration {it} (objective {value}); "
                f"coordinates {bad[:10].tolist()}, composites {group.composites.tolist()}")
        params = params.replace(mean=params.mean + cfg.learning_rate * g_mean,
                                log_std=params.log_std + cfg.learning_rate * g_log_std)
        te = hf = float("nan")
        if cfg.diagnostics_every and (it % cfg.diagnostics_every == 0 or it == cfg.iterations - 1):
            te, hf = diagnostics(render_candidate(env.scene, env.rig, params.greedy()))
        comps = group.composites
        logs.append(IterationLog(
            iteration=it, anchor_index=group.anchor_index,
            mean_reward=float(comps.mean()), max_reward=float(comps.max()),
            kl=pol.kl_divergence(params, ref), objective=value, adv_mean=adv_mean, adv_std=adv_std,
            r_d=_nanmean([r.r_d for r in group.rewards]), r_p=_nanmean([r.r_p for r in group.rewards]),
            r_t=_nanmean([r.r_t for r in group.rewards]), r_a=_nanmean([r.r_a for r in group.rewards]),
            r_sfm=_nanmean([r.r_sfm for r in group.rewards]),
            r_warp=_nanmean([r.r_warp for r in group.rewards]),
            greedy_texture_energy=te, greedy_hf_energy=hf,
            mean_std=float(np.mean(np.exp(params.log_std))),
        ))
        rollouts.append((group.anchor_index, group.rewards, adv, group.hf_energy))
        trajectory.append(params)
        if progress is not None:
            progress(logs[-1])
    return TrainingRun(cfg, env, ref, params, logs, rollouts, trajectory)
