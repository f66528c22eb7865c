"""Build visual prompts in every style, plus rotation and noise variants.

Run: python demos/02_prompt_pipeline.py
Outputs: demos/out/prompt_style_*.png, prompt_rot*.png, prompt_noise_*.png
"""

from pathlib import Path

import numpy as np
from PIL import Image

from vpnav import (NoiseKind, NoiseSpec, PromptStyle, SceneConfig, apply_noise,
                   crop_pipeline, finalize_fullmap, generate_scene,
                   overlay_trajectory, rotate_prompt, shortest_path)
from vpnav.promptmap import render_topview

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

scene = generate_scene(seed=7, cfg=SceneConfig(floor_count=1, rooms_per_floor=5))
path, _ = shortest_path(scene.graph, 0, len(scene.graph) - 1)
waypoints = np.array([scene.node(n).position[:2] for n in path])
base = render_topview(scene, 0)

for style in PromptStyle:
    overlaid = overlay_trajectory(base, waypoints, style)
    final = finalize_fullmap(overlaid) if style == PromptStyle.FULL_MAP \
        else crop_pipeline(overlaid)
    Image.fromarray(final.pixels).save(OUT / f"prompt_style_{style.value}.png")
    print(f"style {style.value}: side before resize "
          f"{final.meta.get('step_c_side', 'n/a')}, "
          f"{final.meters_per_pixel:.3f} m/px")

clean = crop_pipeline(overlay_trajectory(base, waypoints, PromptStyle.LINES))
for k in range(4):
    Image.fromarray(rotate_prompt(clean, k).pixels).save(OUT / f"prompt_rot{k}.png")

rng = np.random.default_rng(0)
for name, spec in [("salt_pepper", NoiseSpec(NoiseKind.SALT_PEPPER, 0.2)),
                   ("drop_first", NoiseSpec(NoiseKind.DROP_FIRST_STEP))]:
    noisy = apply_noise(clean, spec, rng)
    Image.fromarray(noisy.pixels).save(OUT / f"prompt_noise_{name}.png")
print(f"wrote style/rotation/noise variants to {OUT}")
