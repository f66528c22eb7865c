"""Round-trip a prompt: render, rotate, parse the ink back out, recover the
rotation, and compare the registered polyline against the source waypoints.

Run: python demos/03_parse_and_register.py
Outputs: demos/out/parse_roundtrip.png
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from vpnav import (PromptStyle, SceneConfig, crop_pipeline, extract_polyline,
                   generate_scene, overlay_trajectory, register, rotate_prompt,
                   shortest_path)
from vpnav.geometry import project_onto_polyline
from vpnav.promptmap import render_topview

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

scene = generate_scene(seed=13, cfg=SceneConfig(floor_count=1, rooms_per_floor=5))
path, _ = shortest_path(scene.graph, 2, len(scene.graph) - 3)
waypoints = np.array([scene.node(n).position[:2] for n in path])

base = render_topview(scene, 0)
prompt = crop_pipeline(overlay_trajectory(base, waypoints, PromptStyle.LINES))
rotated = rotate_prompt(prompt, 3)

parsed = extract_polyline(rotated)
reg = register(parsed, rotated, agent_start_world=tuple(waypoints[0]),
               mode="unknown_rotation")
print(f"parsed {len(parsed.polyline_px)} vertices, confidence {parsed.confidence:.2f}")
print(f"recovered rotation k={reg.registration.rotation_quarter_turns} (true 3)")

_prog, dev = project_onto_polyline(waypoints, reg.polyline_world)
print(f"worst waypoint deviation from recovered polyline: {dev.max():.3f} m")

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 5))
ax1.imshow(rotated.pixels)
ax1.plot(parsed.polyline_px[:, 0], parsed.polyline_px[:, 1], "c.-", lw=1, ms=4)
ax1.set_title("rotated prompt + parsed chain")
ax2.plot(waypoints[:, 0], waypoints[:, 1], "ko-", label="ground truth")
ax2.plot(reg.polyline_world[:, 0], reg.polyline_world[:, 1], "r.--",
         label="registered parse")
ax2.set_aspect("equal")
ax2.legend()
ax2.set_title("world frame comparison")
fig.tight_layout()
fig.savefig(OUT / "parse_roundtrip.png", dpi=120)
print(f"wrote {OUT / 'parse_roundtrip.png'}")
