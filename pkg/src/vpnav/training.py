"""Imitation training: behavior cloning plus DAgger fine-tuning.

The learned head is log-linear in the candidate features and the fusion
scalar is a sigmoid of one logit, so the softmax cross-entropy gradient is
exact. Teacher-forced rollouts supply ground-truth action labels; on-policy
rollouts are sampled from the current softmax and labeled by the shortest
path pseudo-demonstrator over the agent's partial graph.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .agents import GuideOptions, GuideSet, candidate_features
from .episodes import Episode
from .metrics import goal_distances
from .policy import NEG_INF, PolicyParams, STOP_ID, pseudo_label
from .topo import NAVIGABLE, TopoGraph, update_graph
from .world import Scene, observe_step


class DegenerateBatchError(ValueError):
    """A sample offered no unmasked candidate to score."""


class DivergenceError(RuntimeError):
    """Training loss exceeded 10x its initial value."""


@dataclass(frozen=True)
class TrainingSample:
    candidate_ids: tuple[int, ...]
    phi_global: np.ndarray         # (m, F)
    phi_local: np.ndarray          # (m, F), backtrack-effective rows
    mask: np.ndarray               # (m,) bool
    label: int                     # candidate id (STOP_ID for stop)
    on_policy: bool

    @property
    def label_index(self) -> int:
        return self.candidate_ids.index(self.label)


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 8
    inner_steps: int = 40
    lr: float = 0.5
    step_limit: int = 30
    seed: int = 0
    patience: int = 2


def _sample_terms(sample: TrainingSample, params: PolicyParams):
    sigma = params.sigma
    phi_c = sigma * sample.phi_global + (1.0 - sigma) * sample.phi_local
    s = phi_c @ params.w
    s = np.where(sample.mask, NEG_INF, s)
    if not np.isfinite(s).any():
        raise DegenerateBatchError("sample has zero unmasked candidates")
    m = s - s[np.isfinite(s)].max()
    e = np.where(np.isfinite(m), np.exp(np.where(np.isfinite(m), m, 0.0)), 0.0)
    p = e / e.sum()
    return phi_c, p


def loss_and_grad(batch: Sequence[TrainingSample],
                  params: PolicyParams) -> tuple[float, np.ndarray, float]:
    """Mixed objective lambda * L_BC + (1 - lambda) * L_DAG with analytic
    gradients over the feature weights and the fusion logit."""
    lam = params.lam
    sums = {False: 0.0, True: 0.0}
    counts = {False: 0, True: 0}
    gw = {False: np.zeros_like(params.w), True: np.zeros_like(params.w)}
    gs = {False: 0.0, True: 0.0}
    sigma = params.sigma
    for sample in batch:
        phi_c, p = _sample_terms(sample, params)
        idx = sample.label_index
        if sample.mask[idx]:
            raise DegenerateBatchError(f"label {sample.label} is masked")
        sums[sample.on_policy] += -float(np.log(max(p[idx], 1e-300)))
        counts[sample.on_policy] += 1
        delta = p.copy()
        delta[idx] -= 1.0
        gw[sample.on_policy] += phi_c.T @ delta
        diff = (sample.phi_global - sample.phi_local) @ params.w
        gs[sample.on_policy] += float(delta @ diff) * sigma * (1.0 - sigma)

    loss = 0.0
    grad_w = np.zeros_like(params.w)
    grad_s = 0.0
    for on_policy, weight in ((False, lam), (True, 1.0 - lam)):
        if counts[on_policy] == 0 or weight == 0.0:
            continue
        n = counts[on_policy]
        loss += weight * sums[on_policy] / n
        grad_w += weight * gw[on_policy] / n
        grad_s += weight * gs[on_policy] / n
    return loss, grad_w, grad_s


# --------------------------------------------------------------------------
# sample collection

def collect_bc_samples(scene: Scene, episode: Episode, options: GuideOptions,
                       guides: Optional[GuideSet] = None) -> list[TrainingSample]:
    """Teacher-forced walk along the ground-truth path; every step is
    labeled with the next ground-truth action."""
    if guides is None:
        guides = GuideSet(episode.prompt, options, scene.node(episode.start).position[:2])
    graph = TopoGraph()
    samples = []
    path = episode.gt_path
    for t, nid in enumerate(path):
        update_graph(graph, observe_step(scene, nid, episode.initial_heading,
                                         with_visuals=False))
        ids, phi_g, phi_l, mask = candidate_features(graph, guides, options)
        label = STOP_ID if t == len(path) - 1 else path[t + 1]
        samples.append(TrainingSample(tuple(ids), phi_g, phi_l, mask, label, False))
        if t < len(path) - 1:
            graph.move_to(path[t + 1])
    return samples


def collect_dagger_samples(scene: Scene, episode: Episode, params: PolicyParams,
                           options: GuideOptions, rng: np.random.Generator,
                           step_limit: int = 30,
                           guides: Optional[GuideSet] = None) -> list[TrainingSample]:
    """On-policy rollout with softmax action sampling (temperature 1);
    labels come from the partial-graph shortest-path demonstrator."""
    if guides is None:
        guides = GuideSet(episode.prompt, options, scene.node(episode.start).position[:2])
    dist_to_goal = goal_distances(scene, episode.goal)
    graph = TopoGraph()
    pos = episode.start
    samples = []
    for _ in range(step_limit):
        update_graph(graph, observe_step(scene, pos, episode.initial_heading,
                                         with_visuals=False))
        ids, phi_g, phi_l, mask = candidate_features(graph, guides, options)
        label = pseudo_label(graph, episode.goal, dist_to_goal)
        samples.append(TrainingSample(tuple(ids), phi_g, phi_l, mask, label, True))

        sample = samples[-1]
        _phi, p = _sample_terms(sample, params)
        choice = int(rng.choice(len(ids), p=p))
        if ids[choice] == STOP_ID:
            break
        target = ids[choice]
        if graph.nodes[target].status != NAVIGABLE:
            break   # defensive: sampled probability mass should be masked
        graph.move_to(target)
        pos = target
    return samples


@dataclass
class TrainResult:
    params: PolicyParams
    history: list[float] = field(default_factory=list)
    dagger_rollouts: int = 0
    bc_samples: int = 0
    dagger_samples: int = 0


def train(scenes: Mapping[str, Scene], episodes: Sequence[Episode],
          params0: PolicyParams, schedule: TrainSchedule = TrainSchedule(),
          options: GuideOptions = GuideOptions()) -> TrainResult:
    """Alternate teacher-forced and on-policy sample collection with
    full-batch gradient descent; aggregates DAgger samples across epochs."""
    rng = np.random.default_rng(schedule.seed)
    params = PolicyParams(w=params0.w.copy(), sigma_logit=params0.sigma_logit,
                          lam=params0.lam, attention=params0.attention)
    guide_cache: dict[str, GuideSet] = {}

    def guides_for(ep: Episode) -> GuideSet:
        if ep.episode_id not in guide_cache:
            scene = scenes[ep.scene_id]
            guide_cache[ep.episode_id] = GuideSet(
                ep.prompt, options, scene.node(ep.start).position[:2])
        return guide_cache[ep.episode_id]

    result = TrainResult(params)
    samples: list[TrainingSample] = []
    for ep in episodes:
        samples.extend(collect_bc_samples(scenes[ep.scene_id], ep, options, guides_for(ep)))
    result.bc_samples = len(samples)

    initial_loss: Optional[float] = None
    best = np.inf
    worse_epochs = 0
    for _epoch in range(schedule.epochs):
        if params.lam < 1.0:
            for ep in episodes:
                new = collect_dagger_samples(scenes[ep.scene_id], ep, params, options,
                                             rng, schedule.step_limit, guides_for(ep))
                samples.extend(new)
                result.dagger_rollouts += 1
                result.dagger_samples += len(new)
        loss = np.inf
        for _it in range(schedule.inner_steps):
            loss, gw, gs = loss_and_grad(samples, params)
            if initial_loss is None:
                initial_loss = float(loss)
            if not math.isfinite(loss) or loss > 10.0 * max(initial_loss, 1e-9):
                raise DivergenceError(f"loss {loss:.3f} exceeded 10x initial "
                                      f"{initial_loss:.3f}; lower the step size")
            params.w = params.w - schedule.lr * gw
            params.sigma_logit = params.sigma_logit - schedule.lr * gs
        result.history.append(float(loss))
        if loss < best - 1e-9:
            best = float(loss)
            worse_epochs = 0
        else:
            worse_epochs += 1
            if worse_epochs >= schedule.patience:
                break
    result.params = params
    return result
