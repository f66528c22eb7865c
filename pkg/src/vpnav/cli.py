"""Command-line entry points: world gen, dataset build, train, run, report,
and serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import agents as ag
from . import episodes as ep
from . import metrics as mt
from . import policy as pol
from . import promptmap as pm
from . import training as tr
from .world import Scene, SceneConfig, canonical_json, dump_scene, generate_scene, load_scene


def _parse_counts(text: str) -> dict[str, int]:
    counts = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        counts[name.strip()] = int(value)
    return counts


def _load_scenes_dir(path: str | Path) -> dict[str, Scene]:
    scenes = {}
    for f in sorted(Path(path).glob("*.json")):
        scene = load_scene(f)
        scenes[scene.scene_id] = scene
    if not scenes:
        raise SystemExit(f"no scene JSON files found in {path}")
    return scenes


def _dataset_episodes(dataset: Path, split: str) -> tuple[dict[str, Scene], list[ep.Episode]]:
    manifest = dataset / f"{split}.json"
    if not manifest.exists():
        raise SystemExit(f"missing manifest {manifest}")
    _doc, episodes = ep.load_split_manifest(manifest)
    scenes = _load_scenes_dir(dataset / "scenes")
    return scenes, episodes


def cmd_world_gen(args: argparse.Namespace) -> None:
    cfg = SceneConfig(floor_count=args.floors, rooms_per_floor=args.rooms,
                      node_spacing_m=args.spacing)
    scene = generate_scene(args.seed, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_scene(scene, out)
    print(f"wrote {out} ({len(scene.graph)} nodes, {len(scene.graph.edges)} edges, "
          f"{len(scene.floors)} floors)")


def cmd_dataset_build(args: argparse.Namespace) -> None:
    scenes = _load_scenes_dir(args.scenes)
    ordered = [scenes[k] for k in sorted(scenes)]
    counts = _parse_counts(args.counts)
    options = ep.PromptOptions(
        style=pm.PromptStyle(args.style),
        rotation="random" if args.rotation == "random" else int(args.rotation))
    cfg = ep.EpisodeConfig(min_edges=args.min_edges, max_edges=args.max_edges,
                           agent_view_aug=args.agent_view_aug)
    splits = ep.build_split(ordered, counts, args.seed, cfg, options)
    out = Path(args.out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    for scene in ordered:
        dump_scene(scene, out / "scenes" / f"{scene.scene_id}.json")
    ids = [s.scene_id for s in ordered]
    for split, episodes in splits.items():
        path = ep.write_split_manifest(episodes, split, out, args.seed, ids)
        print(f"wrote {path} ({len(episodes)} episodes)")


def cmd_train(args: argparse.Namespace) -> None:
    scenes, episodes = _dataset_episodes(Path(args.dataset), args.split)
    params0 = pol.PolicyParams.initial(seed=args.seed, lam=args.lam)
    schedule = tr.TrainSchedule(epochs=args.epochs, inner_steps=args.steps,
                                lr=args.lr, seed=args.seed)
    result = tr.train(scenes, episodes, params0, schedule)
    pol.save_params(result.params, args.out)
    print(f"trained on {len(episodes)} episodes: loss {result.history[0]:.4f} -> "
          f"{result.history[-1]:.4f} over {len(result.history)} epochs "
          f"({result.dagger_rollouts} on-policy rollouts)")
    print(f"wrote {args.out}")


def cmd_run(args: argparse.Namespace) -> None:
    scenes, episodes = _dataset_episodes(Path(args.dataset), args.split)
    params = pol.load_params(args.ckpt) if args.ckpt else None
    if args.policy == "learned" and params is None:
        raise SystemExit("--ckpt is required for the learned policy")
    options = ag.GuideOptions(registration_mode=args.registration)
    records, trajs = ag.evaluate_split(
        scenes, episodes, lambda: ag.make_agent(args.policy, params, options))
    mt.write_run_report(records, trajs, args.out,
                        csv_path=args.csv if args.csv else None)
    print(mt.format_summary(f"{args.policy}/{args.split}", mt.aggregate(records)))
    print(f"wrote {args.out}")


def cmd_report(args: argparse.Namespace) -> None:
    runs = []
    for path in args.runs:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        runs.append((Path(path).name, doc))
        print(mt.format_summary(Path(path).name, doc["summary"]))
    if args.cross:
        if len(runs) != 2:
            raise SystemExit("--cross needs exactly two runs")

        def to_records(doc: dict) -> list[mt.MetricsRecord]:
            return [mt.MetricsRecord(e["episode_id"], e["TL"], e["NE"], e["SR"],
                                     e["OSR"], e["SPL"]) for e in doc["episodes"]]

        counts = mt.cross_success(to_records(runs[0][1]), to_records(runs[1][1]))
        print("cross-success (SS, SF, FS, FF):",
              counts["SS"], counts["SF"], counts["FS"], counts["FF"])


def cmd_serve(args: argparse.Namespace) -> None:
    from .service import serve

    scenes_dir = args.scenes_dir or os.environ.get("VPN_DATA_DIR")
    if not scenes_dir:
        raise SystemExit("pass --scenes-dir or set VPN_DATA_DIR")
    serve(scenes_dir, port=args.port, checkpoint=args.ckpt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpnav",
                                     description="visual prompt navigation bench")
    sub = parser.add_subparsers(dest="command", required=True)

    world = sub.add_parser("world", help="world generation").add_subparsers(
        dest="world_command", required=True)
    gen = world.add_parser("gen", help="generate a scene")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--floors", type=int, default=1)
    gen.add_argument("--rooms", type=int, default=5)
    gen.add_argument("--spacing", type=float, default=2.0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_world_gen)

    dataset = sub.add_parser("dataset", help="dataset building").add_subparsers(
        dest="dataset_command", required=True)
    build = dataset.add_parser("build", help="sample episodes and render prompts")
    build.add_argument("--scenes", required=True, help="directory of scene JSON files")
    build.add_argument("--out", required=True)
    build.add_argument("--counts", required=True,
                       help="e.g. train=100,val_seen=10,val_unseen=20")
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--style", default="e", choices=[s.value for s in pm.PromptStyle])
    build.add_argument("--rotation", default="0", help="0..3 or 'random'")
    build.add_argument("--min-edges", type=int, default=4)
    build.add_argument("--max-edges", type=int, default=7)
    build.add_argument("--agent-view-aug", action="store_true")
    build.set_defaults(func=cmd_dataset_build)

    train = sub.add_parser("train", help="fit the log-linear policy")
    train.add_argument("--dataset", required=True)
    train.add_argument("--split", default="train")
    train.add_argument("--lambda", dest="lam", type=float, default=0.5)
    train.add_argument("--steps", type=int, default=40, help="gradient steps per epoch")
    train.add_argument("--epochs", type=int, default=8)
    train.add_argument("--lr", type=float, default=0.5)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    run = sub.add_parser("run", help="evaluate a policy on a split")
    run.add_argument("--dataset", required=True)
    run.add_argument("--split", default="val_unseen")
    run.add_argument("--policy", choices=["oracle", "geometric", "learned"],
                     default="geometric")
    run.add_argument("--ckpt")
    run.add_argument("--registration", default="known_transform",
                     choices=["known_transform", "unknown_rotation"])
    run.add_argument("--out", required=True)
    run.add_argument("--csv")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="summarize run records")
    report.add_argument("--runs", nargs="+", required=True)
    report.add_argument("--cross", action="store_true")
    report.set_defaults(func=cmd_report)

    serve_p = sub.add_parser("serve", help="launch the HTTP service")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.add_argument("--scenes-dir")
    serve_p.add_argument("--ckpt")
    serve_p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main(sys.argv[1:])
