from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest


def cli(*args: str) -> str:
    r = subprocess.run([sys.executable, "-m", "vpnav.cli", *args],
                       capture_output=True, text=True)
    assert r.returncode == 0, f"{args}: {r.stderr}"
    return r.stdout


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    scenes = tmp / "scenes"
    for s in range(3):
        cli("world", "gen", "--seed", str(s), "--floors", "1", "--rooms", "4",
            "--out", str(scenes / f"s{s}.json"))
    dataset = tmp / "dataset"
    cli("dataset", "build", "--scenes", str(scenes), "--out", str(dataset),
        "--counts", "train=6,val_unseen=4", "--seed", "2")
    return tmp


def test_world_gen_writes_scene(tmp_path):
    out = tmp_path / "scene.json"
    msg = cli("world", "gen", "--seed", "9", "--floors", "2", "--rooms", "3",
              "--out", str(out))
    assert out.exists() and "2 floors" in msg
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == 1


def test_dataset_layout(workspace):
    dataset = workspace / "dataset"
    assert (dataset / "train.json").exists()
    assert (dataset / "val_unseen.json").exists()
    assert len(list((dataset / "scenes").glob("*.json"))) == 3
    assert list((dataset / "rasters").glob("*.png"))
    manifest = json.loads((dataset / "train.json").read_text())
    assert len(manifest["episodes"]) == 6


def test_train_run_report_cycle(workspace):
    dataset = workspace / "dataset"
    ckpt = workspace / "ckpt.json"
    out = cli("train", "--dataset", str(dataset), "--lambda", "0.5",
              "--epochs", "2", "--steps", "10", "--out", str(ckpt))
    assert "trained on 6 episodes" in out and ckpt.exists()

    run_a = workspace / "oracle.json"
    run_b = workspace / "geo.json"
    cli("run", "--dataset", str(dataset), "--split", "val_unseen",
        "--policy", "oracle", "--out", str(run_a))
    cli("run", "--dataset", str(dataset), "--split", "val_unseen",
        "--policy", "geometric", "--out", str(run_b), "--csv",
        str(workspace / "geo.csv"))
    doc = json.loads(run_a.read_text())
    assert doc["summary"]["SR"] == 100.0
    assert (workspace / "geo.csv").read_text().startswith("episode_id")

    report = cli("report", "--runs", str(run_a), str(run_b), "--cross")
    assert "cross-success" in report


def test_learned_run_requires_ckpt(workspace):
    r = subprocess.run([sys.executable, "-m", "vpnav.cli", "run",
                        "--dataset", str(workspace / "dataset"),
                        "--policy", "learned", "--out", "x.json"],
                       capture_output=True, text=True)
    assert r.returncode != 0
