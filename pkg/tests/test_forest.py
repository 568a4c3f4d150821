from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from teachgym.forest import (
    CapExceededError,
    NegativeAllocationError,
    SkillForest,
    SkillTree,
    SubskillNode,
    UnknownSkillError,
    UnknownSubskillError,
    dump_text_table,
    empty_forest,
    forest_digest,
    forest_is_full,
    grow_tree,
    materialize_quota,
    rebalance_tree,
    reset_allocations,
    total_allocation,
    validate_forest,
)


def forest_with(allocations: dict[str, dict[str, int]], **caps) -> SkillForest:
    trees = tuple(
        SkillTree(skill, tuple(SubskillNode(s, a) for s, a in subs.items()))
        for skill, subs in allocations.items()
    )
    return SkillForest(trees, **caps)


# ---------------------------------------------------------------------------
# grow
# ---------------------------------------------------------------------------

def test_grow_appends_zero_allocation_subskills():
    forest = empty_forest(["Algebra"])
    result = grow_tree(forest, "Algebra", ["Solving Linear Equations", "Polynomial Factorization"])
    tree = result.forest.tree("Algebra")
    assert [n.subskill_name for n in tree.subskills] == [
        "Solving Linear Equations",
        "Polynomial Factorization",
    ]
    assert all(n.data_allocation == 0 for n in tree.subskills)
    assert result.added == ("Solving Linear Equations", "Polynomial Factorization")
    assert result.dropped_duplicates == ()


def test_grow_drops_case_insensitive_duplicates_and_reports():
    forest = grow_tree(empty_forest(["A"]), "A", ["X"]).forest
    result = grow_tree(forest, "A", ["x"])
    assert forest_digest(result.forest) == forest_digest(forest)
    assert result.dropped_duplicates == ("x",)
    assert result.added == ()


def test_grow_over_cap_errors_before_applying():
    forest = grow_tree(empty_forest(["A"], max_subskills_per_tree=6), "A", ["a", "b", "c"]).forest
    with pytest.raises(CapExceededError) as err:
        grow_tree(forest, "A", ["d", "e", "f", "g", "h"])  # 3 + 5 > 6
    assert "A" in str(err.value) and "6" in str(err.value)
    assert len(forest.tree("A").subskills) == 3  # untouched


def test_grow_unknown_skill():
    with pytest.raises(UnknownSkillError):
        grow_tree(empty_forest(["A"]), "B", ["x"])


def test_grow_never_removes_or_renames():
    forest = grow_tree(empty_forest(["A"]), "A", ["one", "two"]).forest
    grown = grow_tree(forest, "A", ["three"]).forest
    old = [n.subskill_name for n in forest.tree("A").subskills]
    new = [n.subskill_name for n in grown.tree("A").subskills]
    assert new[: len(old)] == old


# ---------------------------------------------------------------------------
# rebalance
# ---------------------------------------------------------------------------

def test_rebalance_zero_deltas_leave_forest_unchanged():
    forest = forest_with({"T": {"a": 50, "b": 100}})
    out = rebalance_tree(forest, "T", {"a": 0, "b": 0})
    assert forest_digest(out) == forest_digest(forest)


def test_rebalance_negative_result_errors():
    forest = forest_with({"T": {"a": 50}})
    with pytest.raises(NegativeAllocationError):
        rebalance_tree(forest, "T", {"a": -60})


def test_rebalance_applies_deltas_and_conserves_sum():
    forest = forest_with({"T": {"a": 0, "b": 0}}, per_subskill_cap=100, per_action_cap=50)
    out = rebalance_tree(forest, "T", {"a": 50, "b": 50})
    assert out.tree("T").subskill("a").data_allocation == 50
    assert out.tree("T").subskill("b").data_allocation == 50
    # re-sum by brute force
    assert total_allocation(out) - total_allocation(forest) == 100


def test_rebalance_cap_violations():
    forest = forest_with({"T": {"a": 280}}, per_action_cap=100, per_subskill_cap=300)
    with pytest.raises(CapExceededError):
        rebalance_tree(forest, "T", {"a": 101})  # per-action cap
    with pytest.raises(CapExceededError):
        rebalance_tree(forest, "T", {"a": 30})  # 310 > per-subskill cap
    with pytest.raises(UnknownSubskillError):
        rebalance_tree(forest, "T", {"zz": 1})


def test_rebalance_touches_only_named_subskills():
    forest = forest_with({"T": {"a": 10, "b": 20, "c": 30}})
    out = rebalance_tree(forest, "T", {"b": 5})
    assert out.tree("T").subskill("a").data_allocation == 10
    assert out.tree("T").subskill("c").data_allocation == 30


# ---------------------------------------------------------------------------
# reset / quota / totals
# ---------------------------------------------------------------------------

def test_reset_zeroes_one_tree_only():
    forest = forest_with({"T": {"a": 50, "b": 30}, "U": {"x": 10}, "V": {"y": 5}})
    out = reset_allocations(forest, "T")
    assert [n.data_allocation for n in out.tree("T").subskills] == [0, 0]
    # the other trees are bit-identical
    assert forest_digest(
        SkillForest((out.tree("U"), out.tree("V")))
    ) == forest_digest(SkillForest((forest.tree("U"), forest.tree("V"))))


def test_reset_is_idempotent():
    forest = forest_with({"T": {"a": 0, "b": 0}})
    out = reset_allocations(forest, "T")
    assert forest_digest(out) == forest_digest(forest)


def test_materialize_quota_subtracts_produced_counts():
    forest = forest_with({"T": {"sub": 40}})
    assert materialize_quota(forest) == [("T", "sub", 40)]
    assert materialize_quota(forest, {("T", "sub"): 40}) == []
    assert materialize_quota(forest, {("T", "sub"): 45}) == []  # never negative


def test_materialize_quota_orders_and_sums():
    forest = forest_with({"T": {"a": 10, "b": 20}, "U": {"c": 5}})
    quota = materialize_quota(forest)
    assert quota == [("T", "a", 10), ("T", "b", 20), ("U", "c", 5)]
    assert sum(c for _, _, c in quota) == total_allocation(forest) == 35


def test_total_allocation_matches_independent_fold():
    import random

    rng = random.Random(4)
    allocations = {
        f"T{i}": {f"s{j}": rng.randrange(0, 300) for j in range(5)} for i in range(10)
    }
    forest = forest_with(allocations)
    brute = sum(sum(subs.values()) for subs in allocations.values())
    assert total_allocation(forest) == brute


def test_empty_forest_total_is_zero():
    assert total_allocation(empty_forest(["A", "B"])) == 0


def test_dump_text_table_lists_every_subskill():
    forest = forest_with({"T": {"a": 50}, "Empty": {}})
    table = dump_text_table(forest)
    assert "T" in table and "a" in table and "50" in table and "Empty" in table


def test_forest_is_full():
    caps = dict(per_subskill_cap=100, max_subskills_per_tree=1)
    assert forest_is_full(forest_with({"T": {"a": 100}}, **caps))
    assert not forest_is_full(forest_with({"T": {"a": 99}}, **caps))
    assert not forest_is_full(forest_with({"T": {}}, **caps))


# ---------------------------------------------------------------------------
# transition properties (small-scale; the acceptance suite runs these at scale)
# ---------------------------------------------------------------------------

action_st = st.tuples(
    st.sampled_from(["grow", "rebalance", "reset"]),
    st.integers(min_value=0, max_value=999),
)


def apply_random_action(forest: SkillForest, kind: str, salt: int, counter: int):
    """Build a legal action from (kind, salt) and apply it; returns (forest, delta_sum)."""
    import random

    rng = random.Random(salt)
    skill = rng.choice(list(forest.skill_names))
    tree = forest.tree(skill)
    if kind == "grow":
        room = forest.max_subskills_per_tree - len(tree.subskills)
        if room == 0:
            return forest, 0
        names = [f"n{counter}-{i}" for i in range(rng.randint(1, room))]
        return grow_tree(forest, skill, names).forest, 0
    if kind == "reset":
        removed = sum(n.data_allocation for n in tree.subskills)
        return reset_allocations(forest, skill), -removed
    if not tree.subskills:
        return forest, 0
    deltas = {}
    for node in tree.subskills:
        lo = -min(node.data_allocation, forest.per_action_cap)
        hi = min(forest.per_subskill_cap - node.data_allocation, forest.per_action_cap)
        deltas[node.subskill_name] = rng.randint(lo, hi)
    return rebalance_tree(forest, skill, deltas), sum(deltas.values())


@settings(max_examples=60, deadline=None)
@given(st.lists(action_st, max_size=30))
def test_random_legal_sequences_conserve_and_replay(actions):
    start = empty_forest(["A", "B", "C"], per_action_cap=100, per_subskill_cap=300,
                         max_subskills_per_tree=4)
    forest = start
    for counter, (kind, salt) in enumerate(actions):
        before_total = total_allocation(forest)
        before_sets = {t.skill_name: [n.subskill_name for n in t.subskills] for t in forest.trees}
        forest, delta_sum = apply_random_action(forest, kind, salt, counter)
        validate_forest(forest)
        if kind == "rebalance":
            # conservation: total change equals the sum of deltas
            assert total_allocation(forest) - before_total == delta_sum
            after_sets = {t.skill_name: [n.subskill_name for n in t.subskills] for t in forest.trees}
            assert after_sets == before_sets  # exploit never edits the subskill sets
    # pure transitions: replaying the same sequence gives a digest-identical forest
    replayed = start
    for counter, (kind, salt) in enumerate(actions):
        replayed, _ = apply_random_action(replayed, kind, salt, counter)
    assert forest_digest(replayed) == forest_digest(forest)
