"""Acceptance suite: one test per exit criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Episodes here run at full scale (200-item validation set, 4 hidden
skills x 3 subskills); the slower multi-seed criteria share session fixtures.
"""

from __future__ import annotations

import functools
import json
import random
import time
from decimal import Decimal
from pathlib import Path

import pytest

from teachgym.analyze import analyze, load_before_after_fixture
from teachgym.config import config_from_dict
from teachgym.core import load_dataset
from teachgym.forest import (
    empty_forest,
    forest_digest,
    forest_is_full,
    grow_tree,
    rebalance_tree,
    reset_allocations,
    total_allocation,
    validate_forest,
)
from teachgym.runner import (
    replay,
    run_episode,
    run_state_ablation_sweep,
    select_best_checkpoint,
)


def criterion(name: str):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] {name}")
                raise
            print(f"[PASS] {name}")

        return run

    return wrap


def tree_raw(seed: int = 0, **overrides):
    raw = {
        "episode": {"seed": seed, "max_iterations": 40, "saturation_patience": 3},
        "environment": {
            "variant": "skill-tree",
            "domain": "simulated",
            "data_budget": 200,
            "forest": {"per_action_cap": 100, "per_subskill_cap": 300, "max_subskills_per_tree": 4},
        },
        "dataset": {"kind": "simulated", "n_items": 200, "test_n_items": 200},
        "provider": {"kind": "mock", "confusion_rate": 0.0},
        "policy": {"kind": "handcrafted-skill-tree", "k_new": 2},
    }
    raw.update(overrides)
    return raw


def list_raw(seed: int = 0, confusion: float = 0.0, **overrides):
    raw = {
        "episode": {"seed": seed, "max_iterations": 8, "saturation_patience": 3},
        "environment": {"variant": "skill-list", "domain": "simulated", "data_budget": 150},
        "dataset": {"kind": "simulated", "n_items": 200, "test_n_items": 200},
        "provider": {"kind": "mock", "confusion_rate": confusion},
        "policy": {"kind": "skill-list"},
    }
    raw.update(overrides)
    return raw


@pytest.fixture(scope="module")
def workdir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def tree_episode(workdir) -> Path:
    out = workdir / "tree_episode"
    result = run_episode(config_from_dict(tree_raw()), out)
    assert result.status == "completed"
    return out


# ---------------------------------------------------------------------------
# skill-forest property suite
# ---------------------------------------------------------------------------

def _random_forest_action(forest, rng, counter):
    kind = rng.choice(["grow", "rebalance", "rebalance", "reset"])
    skill = rng.choice(list(forest.skill_names))
    tree = forest.tree(skill)
    if kind == "grow":
        room = forest.max_subskills_per_tree - len(tree.subskills)
        if room == 0:
            return forest, None
        names = [f"n{counter}-{i}" for i in range(rng.randint(1, room))]
        return grow_tree(forest, skill, names).forest, None
    if kind == "reset":
        return reset_allocations(forest, skill), None
    if not tree.subskills:
        return forest, None
    deltas = {}
    for node in tree.subskills:
        lo = -min(node.data_allocation, forest.per_action_cap)
        hi = min(forest.per_subskill_cap - node.data_allocation, forest.per_action_cap)
        deltas[node.subskill_name] = rng.randint(lo, hi)
    return rebalance_tree(forest, skill, deltas), deltas


@criterion("skill-forest properties: 10 seeds x 1000 random legal sequences, zero violations, <30s")
def test_forest_property_suite_at_scale():
    started = time.monotonic()
    violations = 0
    for seed in range(10):
        seeder = random.Random(seed)
        for s in range(1000):
            start = empty_forest(["A", "B", "C"], max_subskills_per_tree=4)
            forest = start
            salts = [seeder.randrange(10**9) for _ in range(seeder.randint(3, 10))]
            subskill_sets = None
            for counter, salt in enumerate(salts):
                before_total = total_allocation(forest)
                before_sets = {
                    t.skill_name: tuple(n.subskill_name for n in t.subskills)
                    for t in forest.trees
                }
                forest, deltas = _random_forest_action(forest, random.Random(salt), counter)
                validate_forest(forest)  # caps hold after every accepted transition
                if deltas is not None:
                    if total_allocation(forest) - before_total != sum(deltas.values()):
                        violations += 1  # conservation
                    after_sets = {
                        t.skill_name: tuple(n.subskill_name for n in t.subskills)
                        for t in forest.trees
                    }
                    if after_sets != before_sets:
                        violations += 1  # exploit must not edit subskill sets
            replayed = start
            for counter, salt in enumerate(salts):
                replayed, _ = _random_forest_action(replayed, random.Random(salt), counter)
            if forest_digest(replayed) != forest_digest(forest):
                violations += 1
    elapsed = time.monotonic() - started
    assert violations == 0
    assert elapsed < 30.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# hand-crafted policy fixpoint
# ---------------------------------------------------------------------------

@criterion("hand-crafted policy: 3 trees reach exactly 4 x 300 uniform within the action bound, <5s")
def test_handcrafted_policy_fixpoint():
    import math

    from teachgym.discovery import propose_subskills
    from teachgym.core import Exploit, Explore, SkillTreeState
    from teachgym.policies import HandcraftedSkillTreePolicy, SkillTreePolicyConfig
    from teachgym.provider import MockProvider

    started = time.monotonic()
    forest = empty_forest(
        ["A", "B", "C"], per_action_cap=100, per_subskill_cap=300, max_subskills_per_tree=4
    )
    policy = HandcraftedSkillTreePolicy(
        SkillTreePolicyConfig(max_subskills=4, per_subskill_cap=300, per_action_cap=100, k_new=2)
    )
    provider = MockProvider(seed=0)
    bound = 3 * (2 * 4 // 2 + 4 * math.ceil(300 / 100))
    actions = 0
    while True:
        state = SkillTreeState(forest, {n: 0.5 for n in forest.skill_names})
        action = policy(state)
        if isinstance(action, Exploit) and action.is_noop() and forest_is_full(forest):
            break
        actions += 1
        assert actions <= bound, "exceeded the closed-form action bound"
        if isinstance(action, Explore):
            tree = forest.tree(action.skill)
            names = propose_subskills(
                action.skill, [n.subskill_name for n in tree.subskills],
                action.num_new_subskills, provider,
            ).names
            forest = grow_tree(forest, action.skill, names).forest
        else:
            forest = rebalance_tree(forest, action.skill, action.deltas)

    for tree in forest.trees:
        assert len(tree.subskills) == 4
        assert all(n.data_allocation == 300 for n in tree.subskills)  # uniform, exact
    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# with-state beats no-state
# ---------------------------------------------------------------------------

@criterion("with-state beats no-state by >= 2 accuracy points on mean over 10 seeds, <2min")
def test_with_state_beats_no_state(workdir):
    started = time.monotonic()
    config = config_from_dict(tree_raw())
    rows = run_state_ablation_sweep(config, range(10), workdir / "state_sweep")
    mean_ws = sum(r.with_state_accuracy for r in rows) / len(rows)
    mean_ns = sum(r.no_state_accuracy for r in rows) / len(rows)
    margin = mean_ws - mean_ns
    elapsed = time.monotonic() - started
    print(f"  with-state mean {mean_ws:.4f}, no-state mean {mean_ns:.4f}, margin {margin:.4f}")
    assert margin >= 0.02, f"margin {margin:.4f} below 2 accuracy points"
    assert elapsed < 120.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# skill discovery quality ordering
# ---------------------------------------------------------------------------

@criterion("oracle skills (confusion 0) >= inferred-with-noise (confusion 0.3) on mean over 10 seeds, <2min")
def test_skill_quality_ordering(workdir):
    started = time.monotonic()
    finals = {0.0: [], 0.3: []}
    for seed in range(10):
        for confusion in (0.0, 0.3):
            out = workdir / "confusion" / f"seed_{seed}_{confusion}"
            result = run_episode(config_from_dict(list_raw(seed, confusion)), out)
            assert result.status == "completed"
            finals[confusion].append(result.best_validation_accuracy)
    mean_clean = sum(finals[0.0]) / 10
    mean_noisy = sum(finals[0.3]) / 10
    elapsed = time.monotonic() - started
    print(f"  confusion 0.0 mean {mean_clean:.4f}, confusion 0.3 mean {mean_noisy:.4f}")
    assert mean_clean >= mean_noisy
    assert elapsed < 120.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# difficulty / rarity phenomenology
# ---------------------------------------------------------------------------

@criterion("uniform-allocation episode: difficulty-gain argmax in the bin containing 3.5; gain non-increasing in rarity, <30s")
def test_difficulty_and_rarity_phenomenology(tree_episode):
    started = time.monotonic()
    bundle = analyze(tree_episode)
    gains = {row["bin"]: row["gain"] for row in bundle.difficulty_rows}
    assert max(gains, key=gains.get) == "3-4"  # the unit bin containing 3.5

    rarity_gains = [row["gain"] for row in bundle.rarity_rows]  # rows sorted by rarity
    assert all(a >= b for a, b in zip(rarity_gains, rarity_gains[1:]))
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# monotone learning
# ---------------------------------------------------------------------------

@criterion("monotone learning: per-subskill accuracy non-decreasing; overall non-decreasing on training iterations")
def test_monotone_learning(tree_episode):
    items = load_dataset(tree_episode / "datasets" / "validation.jsonl")
    subskill_of = {i.item_id: i.true_subskill for i in items}
    snapshots = sorted((tree_episode / "snapshots").glob("iter_*.json"))
    assert len(snapshots) > 1

    last_by_sub: dict[str, float] = {}
    last_overall = -1.0
    for path in snapshots:
        snap = json.loads(path.read_text())
        by_sub: dict[str, list[bool]] = {}
        for item_id, correct, _ in snap["predictions"]:
            by_sub.setdefault(subskill_of[item_id], []).append(correct)
        acc_by_sub = {s: sum(v) / len(v) for s, v in by_sub.items()}
        for sub, acc in acc_by_sub.items():
            assert acc >= last_by_sub.get(sub, 0.0) - 1e-12, f"{sub} regressed at {path.name}"
        last_by_sub = acc_by_sub

        overall = snap["report"]["overall_accuracy"]
        assert overall >= last_overall - 1e-12
        last_overall = overall


# ---------------------------------------------------------------------------
# reproducibility
# ---------------------------------------------------------------------------

@criterion("reproducibility: identical config+seed give digest-identical trajectories; replay verifies")
def test_reproducibility_and_replay(workdir):
    config = config_from_dict(tree_raw(seed=4))
    a = run_episode(config, workdir / "repro_a")
    b = run_episode(config, workdir / "repro_b")
    assert a.trajectory_digest == b.trajectory_digest
    report = replay(workdir / "repro_a")
    assert report.match, report.detail
    assert report.recorded_digest == report.replayed_digest


# ---------------------------------------------------------------------------
# checkpoint selection
# ---------------------------------------------------------------------------

@criterion("checkpoint selection: argmax with earliest tie-break over 10^4 random sequences")
def test_checkpoint_selection_property():
    rng = random.Random(0)
    for _ in range(10_000):
        n = rng.randint(1, 30)
        accs = [rng.choice([0.0, 0.25, 0.5, 0.75, 1.0, rng.random()]) for _ in range(n)]
        oracle = min(i for i, a in enumerate(accs) if a == max(accs))
        assert select_best_checkpoint(accs) == oracle


# ---------------------------------------------------------------------------
# analysis fixture
# ---------------------------------------------------------------------------

@criterion("analysis fixture: before 44.18, after 47.90, delta exactly +3.72")
def test_analysis_fixture_exact_delta(tmp_path):
    fixture = tmp_path / "report_fixture.json"
    fixture.write_text(
        json.dumps(
            {
                "setting": "open-ended, multimodal benchmark",
                "rows": [{"name": "overall", "before": 44.18, "after": 47.90}],
            }
        )
    )
    [row] = load_before_after_fixture(fixture)
    assert row.before == Decimal("44.18")
    assert row.after == Decimal("47.90")
    assert row.delta == Decimal("3.72")


# ---------------------------------------------------------------------------
# epoch-scaling ablation
# ---------------------------------------------------------------------------

@criterion("epoch scaling: 20% data x 5x epochs scores strictly below 100% data x 1x over 10 seeds")
def test_epoch_scaling_ablation(workdir):
    finals = {"full": [], "scaled": []}
    for seed in range(10):
        full = run_episode(
            config_from_dict(list_raw(seed)), workdir / "epochs" / f"full_{seed}"
        )
        scaled = run_episode(
            config_from_dict(
                list_raw(seed, **{"ablation": {"data_fraction": 0.2, "epochs_multiplier": 5.0}})
            ),
            workdir / "epochs" / f"scaled_{seed}",
        )
        assert full.status == scaled.status == "completed"
        finals["full"].append(full.best_validation_accuracy)
        finals["scaled"].append(scaled.best_validation_accuracy)
    mean_full = sum(finals["full"]) / 10
    mean_scaled = sum(finals["scaled"]) / 10
    print(f"  full-data mean {mean_full:.4f}, less-data/more-epochs mean {mean_scaled:.4f}")
    assert mean_scaled < mean_full
