"""Fit the log-linear policy with behavior cloning plus on-policy
fine-tuning and compare held-out success before and after.

Run: python demos/05_train_policy.py  (about a minute)
"""

import numpy as np

from vpnav import (EpisodeConfig, LearnedAgent, PolicyParams, PromptOptions,
                   SceneConfig, TrainSchedule, aggregate, attach_prompt,
                   evaluate_split, generate_scene, sample_episode, train)

train_scenes = {s.scene_id: s for s in
                (generate_scene(seed, SceneConfig(floor_count=1, rooms_per_floor=5))
                 for seed in (41, 42, 43))}
held_scene = generate_scene(99, SceneConfig(floor_count=1, rooms_per_floor=5))
held_scenes = {held_scene.scene_id: held_scene}

rng = np.random.default_rng(1)


def make_split(scenes, count, prefix):
    out = []
    pool = list(scenes.values())
    for i in range(count):
        scene = pool[i % len(pool)]
        ep = sample_episode(scene, rng, EpisodeConfig(), episode_id=f"{prefix}{i:03d}")
        out.append(attach_prompt(scene, ep, PromptOptions(), rng))
    return out


train_eps = make_split(train_scenes, 60, "tr")
held_eps = make_split(held_scenes, 30, "he")

params0 = PolicyParams.initial(seed=5)
before, _ = evaluate_split(held_scenes, held_eps, lambda: LearnedAgent(params0))
print(f"untrained held-out SR: {aggregate(before)['SR']:.1f}%")

result = train(train_scenes, train_eps, params0,
               TrainSchedule(epochs=4, inner_steps=40, lr=0.5, seed=2))
print("epoch losses:", [round(h, 3) for h in result.history],
      f"({result.dagger_rollouts} on-policy rollouts)")

after, _ = evaluate_split(held_scenes, held_eps, lambda: LearnedAgent(result.params))
print(f"trained held-out SR:   {aggregate(after)['SR']:.1f}%")
print("feature weights:", np.round(result.params.w, 2),
      f"fusion sigma: {result.params.sigma:.2f}")
