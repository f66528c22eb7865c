"""Generate a procedural multi-floor world and poke at its nav graph.

Run: python demos/01_build_a_world.py
Outputs: demos/out/world_floor*.png
"""

from pathlib import Path

from PIL import Image

from vpnav import SceneConfig, generate_scene, observe, shortest_path
from vpnav.promptmap import render_topview

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

scene = generate_scene(seed=2024, cfg=SceneConfig(floor_count=2, rooms_per_floor=5))
print(f"scene {scene.scene_id}: {len(scene.graph)} nodes, "
      f"{len(scene.graph.edges)} edges, {len(scene.floors)} floors")

for floor in scene.floors:
    raster = render_topview(scene, floor.floor_index, tint=True)
    path = OUT / f"world_floor{floor.floor_index}.png"
    Image.fromarray(raster.pixels).save(path)
    print(f"  floor {floor.floor_index}: {len(floor.rooms)} rooms, "
          f"{len(floor.doors)} doors -> {path}")

stairs = [(a, b) for (a, b) in scene.graph.edges
          if scene.node(a).floor_index != scene.node(b).floor_index]
print(f"stair edges: {stairs}")

a, b = 0, len(scene.graph) - 1
path, length = shortest_path(scene.graph, a, b)
print(f"shortest {a} -> {b}: {len(path) - 1} edges, {length:.2f} m")

views = observe(scene, a, initial_heading=0.0)
navigable = [v.leads_to for v in views if v.leads_to is not None]
print(f"panorama at node {a}: {len(views)} views, neighbors seen: {sorted(navigable)}")
