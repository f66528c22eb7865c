"""Run the oracle and geometric agents on a small split and print the
standard navigation metrics, including a cross-success table.

Run: python demos/04_agents_and_metrics.py
"""

import numpy as np

from vpnav import (EpisodeConfig, GeometricAgent, GuideOptions, OracleAgent,
                   PromptOptions, SceneConfig, attach_prompt, cross_success,
                   aggregate, evaluate_split, generate_scene, sample_episode)
from vpnav.metrics import format_summary

scenes = {s.scene_id: s for s in
          (generate_scene(seed, SceneConfig(floor_count=1, rooms_per_floor=5))
           for seed in (31, 32, 33))}

rng = np.random.default_rng(0)
episodes = []
for i in range(30):
    scene = list(scenes.values())[i % 3]
    ep = sample_episode(scene, rng, EpisodeConfig(), episode_id=f"demo_{i:03d}")
    episodes.append(attach_prompt(scene, ep, PromptOptions(rotation="random"), rng))

oracle_recs, _ = evaluate_split(scenes, episodes, OracleAgent)
geo_recs, _ = evaluate_split(
    scenes, episodes,
    lambda: GeometricAgent(GuideOptions(registration_mode="unknown_rotation")))

print(format_summary("oracle   ", aggregate(oracle_recs)))
print(format_summary("geometric", aggregate(geo_recs)))
counts = cross_success(oracle_recs, geo_recs)
print(f"cross-success (oracle x geometric): SS={counts['SS']} SF={counts['SF']} "
      f"FS={counts['FS']} FF={counts['FF']}")
