"""Navigation metrics and the benchmark analysis tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .episodes import Episode, floor_runs
from .world import Scene, canonical_json, geodesic_distances

SUCCESS_THRESHOLD_M = 3.0
STEP_LIMIT = 30


@dataclass(frozen=True)
class TrajectoryRecord:
    episode_id: str
    nodes: tuple[int, ...]
    terminated_by: str                      # stop_action | step_limit
    per_step_scores: Optional[tuple[tuple[float, ...], ...]] = None


@dataclass(frozen=True)
class MetricsRecord:
    episode_id: str
    tl: float
    ne: float
    sr: int
    osr: int
    spl: float

    def validate(self) -> None:
        if not (self.spl <= self.sr + 1e-12 and self.osr >= self.sr and self.tl >= 0):
            raise ValueError(f"metric invariants violated: {self}")


_GOAL_DIST_CACHE: dict[tuple[str, int], dict[int, float]] = {}
_OPT_LEN_CACHE: dict[tuple[str, int, int], float] = {}


def goal_distances(scene: Scene, goal: int) -> dict[int, float]:
    key = (scene.scene_id, goal)
    if key not in _GOAL_DIST_CACHE:
        _GOAL_DIST_CACHE[key] = geodesic_distances(scene.graph, goal)
    return _GOAL_DIST_CACHE[key]


def optimal_length(scene: Scene, start: int, goal: int) -> float:
    from .world import shortest_path

    key = (scene.scene_id, start, goal)
    if key not in _OPT_LEN_CACHE:
        _OPT_LEN_CACHE[key] = shortest_path(scene.graph, start, goal)[1]
    return _OPT_LEN_CACHE[key]


def path_metrics(scene: Scene, episode: Episode, traj: TrajectoryRecord,
                 threshold_m: float = SUCCESS_THRESHOLD_M,
                 euclidean_ne: bool = False) -> MetricsRecord:
    """TL, NE, SR, OSR, SPL for one executed trajectory.

    NE and OSR use graph geodesics by default (the navigation-graph
    convention); ``euclidean_ne`` switches to straight-line distances for
    sensitivity checks.
    """
    nodes = traj.nodes
    if nodes[0] != episode.start:
        raise ValueError("trajectory must begin at the episode start")
    # exactly-rounded sum: an agent replaying the shortest path gets TL == L
    tl = math.fsum(scene.graph.edge_length(a, b)   # KeyError if not adjacent
                   for a, b in zip(nodes[:-1], nodes[1:]))

    if euclidean_ne:
        gp = np.array(scene.node(episode.goal).position)

        def dist(nid: int) -> float:
            return float(np.linalg.norm(np.array(scene.node(nid).position) - gp))
    else:
        dists = goal_distances(scene, episode.goal)

        def dist(nid: int) -> float:
            return dists[nid]

    ne = dist(nodes[-1])
    sr = 1 if ne < threshold_m else 0
    osr = 1 if any(dist(n) < threshold_m for n in nodes) else 0
    # SPL's reference length is the geodesic optimum, fsum-rounded like TL
    l_opt = optimal_length(scene, episode.start, episode.goal)
    denom = max(l_opt, tl)
    spl = sr * (l_opt / denom) if denom > 0 else float(sr)
    rec = MetricsRecord(episode.episode_id, tl, ne, sr, osr, spl)
    rec.validate()
    return rec


def aggregate(records: Sequence[MetricsRecord]) -> dict[str, float]:
    """Split summary: mean TL/NE/SPL, SR and OSR as percentages."""
    if not records:
        raise ValueError("cannot aggregate an empty record set")
    n = len(records)
    return {
        "count": n,
        "TL": sum(r.tl for r in records) / n,
        "NE": sum(r.ne for r in records) / n,
        "SR": 100.0 * sum(r.sr for r in records) / n,
        "OSR": 100.0 * sum(r.osr for r in records) / n,
        "SPL": sum(r.spl for r in records) / n,
    }


def cross_success(run_a: Sequence[MetricsRecord],
                  run_b: Sequence[MetricsRecord]) -> dict[str, int]:
    """2x2 success counts of paired runs in (SS, SF, FS, FF) order."""
    a_by_id = {r.episode_id: r for r in run_a}
    b_by_id = {r.episode_id: r for r in run_b}
    if set(a_by_id) != set(b_by_id):
        raise ValueError("paired runs must cover the same episode ids")
    counts = {"SS": 0, "SF": 0, "FS": 0, "FF": 0}
    for eid, ra in a_by_id.items():
        rb = b_by_id[eid]
        key = ("S" if ra.sr else "F") + ("S" if rb.sr else "F")
        counts[key] += 1
    return counts


def expected_floor_count(scene: Scene, episode: Episode) -> int:
    return len(floor_runs(scene, episode.gt_path))


def floorwise_success(records: Sequence[MetricsRecord], episodes: Sequence[Episode],
                      scenes: Mapping[str, Scene]) -> dict[int, dict[str, float]]:
    """Success bucketed by the number of floors the ground-truth path
    traverses."""
    eps_by_id = {e.episode_id: e for e in episodes}
    table: dict[int, dict[str, float]] = {}
    for rec in records:
        ep = eps_by_id[rec.episode_id]
        nf = expected_floor_count(scenes[ep.scene_id], ep)
        bucket = table.setdefault(nf, {"count": 0, "successes": 0, "rate": 0.0})
        bucket["count"] += 1
        bucket["successes"] += rec.sr
    for bucket in table.values():
        bucket["rate"] = 100.0 * bucket["successes"] / bucket["count"]
    return table


# --------------------------------------------------------------------------
# report emission

def run_report_dict(records: Sequence[MetricsRecord],
                    trajectories: Sequence[TrajectoryRecord]) -> dict:
    return {
        "summary": aggregate(records),
        "episodes": [
            {"episode_id": r.episode_id, "TL": r.tl, "NE": r.ne, "SR": r.sr,
             "OSR": r.osr, "SPL": r.spl,
             "terminated_by": t.terminated_by, "nodes": list(t.nodes)}
            for r, t in zip(records, trajectories)
        ],
    }


def write_run_report(records: Sequence[MetricsRecord],
                     trajectories: Sequence[TrajectoryRecord],
                     json_path: str | Path, csv_path: Optional[str | Path] = None) -> None:
    doc = run_report_dict(records, trajectories)
    Path(json_path).write_text(canonical_json(doc), encoding="utf-8")
    if csv_path is not None:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["episode_id", "TL", "NE", "SR", "OSR", "SPL", "terminated_by"])
        for row in doc["episodes"]:
            writer.writerow([row["episode_id"], f"{row['TL']:.6f}", f"{row['NE']:.6f}",
                             row["SR"], row["OSR"], f"{row['SPL']:.6f}", row["terminated_by"]])
        Path(csv_path).write_text(buf.getvalue(), encoding="utf-8")


def format_summary(name: str, summary: Mapping[str, float]) -> str:
    return (f"{name}: n={summary['count']}  TL={summary['TL']:.2f}m  "
            f"NE={summary['NE']:.2f}m  OSR={summary['OSR']:.2f}%  "
            f"SR={summary['SR']:.2f}%  SPL={summary['SPL']:.4f}")
