from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

from teachgym.cli import main
from teachgym.config import dump_toml
from teachgym.core import canonical_json, save_dataset
from teachgym.datasets import build_simulated_dataset
from teachgym.forest import SkillForest, SkillTree, SubskillNode


@pytest.fixture()
def config_path(tmp_path) -> Path:
    raw = {
        "episode": {"seed": 0, "max_iterations": 12, "saturation_patience": 3},
        "environment": {
            "variant": "skill-tree",
            "domain": "simulated",
            "data_budget": 100,
            "forest": {"per_action_cap": 100, "per_subskill_cap": 100, "max_subskills_per_tree": 2},
        },
        "dataset": {"kind": "simulated", "n_items": 120, "test_n_items": 60},
        "provider": {"kind": "mock"},
        "policy": {"kind": "handcrafted-skill-tree", "k_new": 2},
    }
    path = tmp_path / "config.toml"
    path.write_text(dump_toml(raw))
    return path


def test_run_then_replay_then_analyze(config_path, tmp_path, capsys):
    out = tmp_path / "episode"
    assert main(["run", "--config", str(config_path), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "status: completed" in printed
    assert "trajectory digest:" in printed

    assert main(["replay", "--episode", str(out)]) == 0
    assert "identical" in capsys.readouterr().out

    assert main(["analyze", "--episode", str(out)]) == 0
    assert (out / "analysis" / "per_skill.csv").exists()


def test_run_seed_flag_overrides_config(config_path, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(config_path), "--out", str(a), "--seed", "3"])
    main(["run", "--config", str(config_path), "--out", str(b), "--seed", "3"])
    digest_a = json.loads((a / "summary.json").read_text())["trajectory_digest"]
    digest_b = json.loads((b / "summary.json").read_text())["trajectory_digest"]
    assert digest_a == digest_b


def test_forest_dump_formats(tmp_path, capsys):
    forest = SkillForest((SkillTree("Algebra", (SubskillNode("Algebra::sub1", 40),)),))
    path = tmp_path / "forest.json"
    path.write_text(canonical_json(forest.to_dict()))

    assert main(["forest", "dump", "--forest", str(path)]) == 0
    table = capsys.readouterr().out
    assert "Algebra" in table and "40" in table

    assert main(["forest", "dump", "--forest", str(path), "--format", "json"]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["trees"][0]["skill_name"] == "Algebra"


def test_skills_discover_writes_outputs(tmp_path, capsys):
    items = build_simulated_dataset(0, 60, id_prefix="cli")
    items_path = tmp_path / "items.jsonl"
    save_dataset(items_path, items)
    out = tmp_path / "skills"
    assert main(["skills", "discover", "--items", str(items_path), "--out", str(out)]) == 0
    skills = json.loads((out / "skills.json").read_text())
    assert set(skills) == {"Algebra", "Geometry", "Counting", "Logic"}
    lines = (out / "assignments.jsonl").read_text().splitlines()
    assert len(lines) == 60
    first = json.loads(lines[0])
    assert first["assigned_skill"] in skills


def test_sweep_emits_summary_table(config_path, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(config_path), "--seeds", "1", "--out", str(out)]) == 0
    assert (out / "sweep_summary.txt").exists()
    assert (out / "sweep.csv").read_text().startswith("seed,with_state,no_state")


def test_trainer_conformance_against_stub(tmp_path, capsys):
    from test_protocol import STUB_WORKER

    script = tmp_path / "stub.py"
    script.write_text(STUB_WORKER)
    code = main(["trainer-conformance", "--command", f"{sys.executable} {script}"])
    printed = capsys.readouterr().out
    assert code == 0, printed
    assert "all checks passed" in printed


def test_error_paths_return_nonzero(tmp_path, capsys):
    assert main(["replay", "--episode", str(tmp_path / "missing")]) == 1
    assert "error:" in capsys.readouterr().err
