"""Skill forest: a depth-2 skill/subskill hierarchy with budgeted data allocations.

The forest supports exactly two structural verbs, growing (add subskills) and
rebalancing (shift allocations), plus a reset helper. All transitions are pure:
they return a new forest and never mutate the input, so replaying an action
sequence from the same start yields a digest-identical forest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from teachgym.core import TeachGymError, digest

DEFAULT_PER_ACTION_CAP = 100
DEFAULT_PER_SUBSKILL_CAP = 300
DEFAULT_MAX_SUBSKILLS = 5


class ForestError(TeachGymError):
    """Base for illegal forest transitions."""


class UnknownSkillError(ForestError):
    pass


class UnknownSubskillError(ForestError):
    pass


class CapExceededError(ForestError):
    pass


class NegativeAllocationError(ForestError):
    pass


@dataclass(frozen=True)
class SubskillNode:
    subskill_name: str
    data_allocation: int = 0
    training_performance: float | None = None

    def __post_init__(self) -> None:
        if self.data_allocation < 0:
            raise NegativeAllocationError(
                f"subskill {self.subskill_name!r} allocation {self.data_allocation} < 0"
            )
        tp = self.training_performance
        if tp is not None and not 0.0 <= tp <= 1.0:
            raise ValueError(f"training_performance must be in [0,1], got {tp}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "subskill_name": self.subskill_name,
            "data_allocation": self.data_allocation,
            "training_performance": self.training_performance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SubskillNode":
        return cls(d["subskill_name"], d["data_allocation"], d.get("training_performance"))


@dataclass(frozen=True)
class SkillTree:
    skill_name: str
    subskills: tuple[SubskillNode, ...] = ()
    created_at_iteration: int = 0

    def __post_init__(self) -> None:
        seen = set()
        for node in self.subskills:
            key = node.subskill_name.casefold()
            if key in seen:
                raise ForestError(
                    f"duplicate subskill {node.subskill_name!r} in tree {self.skill_name!r}"
                )
            seen.add(key)

    def subskill(self, name: str) -> SubskillNode:
        for node in self.subskills:
            if node.subskill_name == name:
                return node
        raise UnknownSubskillError(f"tree {self.skill_name!r} has no subskill {name!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "skill_name": self.skill_name,
            "subskills": [n.to_dict() for n in self.subskills],
            "created_at_iteration": self.created_at_iteration,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SkillTree":
        return cls(
            d["skill_name"],
            tuple(SubskillNode.from_dict(n) for n in d["subskills"]),
            d.get("created_at_iteration", 0),
        )


@dataclass(frozen=True)
class SkillForest:
    """Ordered collection of skill trees plus the budget caps that bound transitions."""

    trees: tuple[SkillTree, ...] = ()
    per_action_cap: int = DEFAULT_PER_ACTION_CAP
    per_subskill_cap: int = DEFAULT_PER_SUBSKILL_CAP
    max_subskills_per_tree: int = DEFAULT_MAX_SUBSKILLS

    def __post_init__(self) -> None:
        seen = set()
        for tree in self.trees:
            if tree.skill_name in seen:
                raise ForestError(f"duplicate tree {tree.skill_name!r}")
            seen.add(tree.skill_name)

    @property
    def skill_names(self) -> tuple[str, ...]:
        return tuple(t.skill_name for t in self.trees)

    def tree(self, skill: str) -> SkillTree:
        for t in self.trees:
            if t.skill_name == skill:
                return t
        raise UnknownSkillError(f"forest has no tree {skill!r}")

    def _replace_tree(self, new_tree: SkillTree) -> "SkillForest":
        trees = tuple(new_tree if t.skill_name == new_tree.skill_name else t for t in self.trees)
        return SkillForest(trees, self.per_action_cap, self.per_subskill_cap, self.max_subskills_per_tree)

    def to_dict(self) -> dict[str, Any]:
        # trees stay a list so insertion order survives key-sorted serialization
        return {
            "trees": [t.to_dict() for t in self.trees],
            "per_action_cap": self.per_action_cap,
            "per_subskill_cap": self.per_subskill_cap,
            "max_subskills_per_tree": self.max_subskills_per_tree,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SkillForest":
        return cls(
            tuple(SkillTree.from_dict(t) for t in d["trees"]),
            d["per_action_cap"],
            d["per_subskill_cap"],
            d["max_subskills_per_tree"],
        )


def empty_forest(
    skills: Iterable[str],
    *,
    per_action_cap: int = DEFAULT_PER_ACTION_CAP,
    per_subskill_cap: int = DEFAULT_PER_SUBSKILL_CAP,
    max_subskills_per_tree: int = DEFAULT_MAX_SUBSKILLS,
    iteration: int = 0,
) -> SkillForest:
    """One empty tree per skill, allocations all zero."""
    trees = tuple(SkillTree(s, (), iteration) for s in skills)
    return SkillForest(trees, per_action_cap, per_subskill_cap, max_subskills_per_tree)


def forest_digest(forest: SkillForest) -> str:
    return digest(forest.to_dict())


@dataclass(frozen=True)
class GrowResult:
    forest: SkillForest
    added: tuple[str, ...]
    dropped_duplicates: tuple[str, ...]


def grow_tree(forest: SkillForest, skill: str, new_subskill_names: Sequence[str]) -> GrowResult:
    """Append genuinely-new subskills at zero allocation.

    Names that collide case-insensitively with existing subskills (or repeat
    within the request) are dropped and reported, not errored; exceeding the
    per-tree subskill cap is an error before anything is applied.
    """
    tree = forest.tree(skill)
    existing = {n.subskill_name.casefold() for n in tree.subskills}

    added: list[str] = []
    dropped: list[str] = []
    for name in new_subskill_names:
        if not name:
            raise ForestError("subskill names must be non-empty")
        key = name.casefold()
        if key in existing:
            dropped.append(name)
        else:
            existing.add(key)
            added.append(name)

    total = len(tree.subskills) + len(added)
    if total > forest.max_subskills_per_tree:
        raise CapExceededError(
            f"growing tree {skill!r} to {total} subskills exceeds cap "
            f"{forest.max_subskills_per_tree}"
        )

    new_nodes = tree.subskills + tuple(SubskillNode(n, 0) for n in added)
    new_tree = SkillTree(tree.skill_name, new_nodes, tree.created_at_iteration)
    return GrowResult(forest._replace_tree(new_tree), tuple(added), tuple(dropped))


def rebalance_tree(forest: SkillForest, skill: str, deltas: Mapping[str, int]) -> SkillForest:
    """Apply signed allocation deltas to existing subskills of one tree."""
    tree = forest.tree(skill)
    known = {n.subskill_name for n in tree.subskills}
    for name in deltas:
        if name not in known:
            raise UnknownSubskillError(f"tree {skill!r} has no subskill {name!r}")

    new_nodes = []
    for node in tree.subskills:
        delta = deltas.get(node.subskill_name, 0)
        if abs(delta) > forest.per_action_cap:
            raise CapExceededError(
                f"delta {delta:+d} for {node.subskill_name!r} exceeds per-action cap "
                f"{forest.per_action_cap}"
            )
        alloc = node.data_allocation + delta
        if alloc < 0:
            raise NegativeAllocationError(
                f"delta {delta:+d} would drive {node.subskill_name!r} to {alloc}"
            )
        if alloc > forest.per_subskill_cap:
            raise CapExceededError(
                f"allocation {alloc} for {node.subskill_name!r} exceeds per-subskill cap "
                f"{forest.per_subskill_cap}"
            )
        new_nodes.append(SubskillNode(node.subskill_name, alloc, node.training_performance))

    new_tree = SkillTree(tree.skill_name, tuple(new_nodes), tree.created_at_iteration)
    return forest._replace_tree(new_tree)


def reset_allocations(forest: SkillForest, skill: str) -> SkillForest:
    """Drive every allocation in one tree to zero; the subskill set is untouched."""
    tree = forest.tree(skill)
    new_nodes = tuple(
        SubskillNode(n.subskill_name, 0, n.training_performance) for n in tree.subskills
    )
    return forest._replace_tree(SkillTree(tree.skill_name, new_nodes, tree.created_at_iteration))


def record_training_performance(
    forest: SkillForest, performance: Mapping[tuple[str, str], float]
) -> SkillForest:
    """Attach observed training-split performance to subskill nodes."""
    out = forest
    for tree in forest.trees:
        changed = False
        nodes = []
        for node in tree.subskills:
            perf = performance.get((tree.skill_name, node.subskill_name))
            if perf is not None and perf != node.training_performance:
                nodes.append(SubskillNode(node.subskill_name, node.data_allocation, perf))
                changed = True
            else:
                nodes.append(node)
        if changed:
            out = out._replace_tree(SkillTree(tree.skill_name, tuple(nodes), tree.created_at_iteration))
    return out


def materialize_quota(
    forest: SkillForest,
    produced: Mapping[tuple[str, str], int] | None = None,
) -> list[tuple[str, str, int]]:
    """Outstanding datum counts per subskill: allocation minus what this episode produced.

    Zero-count entries are omitted; order is tree insertion order, then
    subskill insertion order.
    """
    produced = produced or {}
    quota: list[tuple[str, str, int]] = []
    for tree in forest.trees:
        for node in tree.subskills:
            done = produced.get((tree.skill_name, node.subskill_name), 0)
            remaining = max(node.data_allocation - done, 0)
            if remaining > 0:
                quota.append((tree.skill_name, node.subskill_name, remaining))
    return quota


def total_allocation(forest: SkillForest) -> int:
    return sum(n.data_allocation for t in forest.trees for n in t.subskills)


def forest_is_full(forest: SkillForest) -> bool:
    """True when every tree is at max subskills and every allocation at the cap."""
    for tree in forest.trees:
        if len(tree.subskills) < forest.max_subskills_per_tree:
            return False
        if any(n.data_allocation < forest.per_subskill_cap for n in tree.subskills):
            return False
    return True


def validate_forest(forest: SkillForest) -> None:
    """Invariant check used by property tests after every transition."""
    for tree in forest.trees:
        if len(tree.subskills) > forest.max_subskills_per_tree:
            raise ForestError(
                f"tree {tree.skill_name!r} has {len(tree.subskills)} subskills, "
                f"cap {forest.max_subskills_per_tree}"
            )
        names = [n.subskill_name.casefold() for n in tree.subskills]
        if len(names) != len(set(names)):
            raise ForestError(f"tree {tree.skill_name!r} has duplicate subskills")
        for node in tree.subskills:
            if node.data_allocation < 0:
                raise NegativeAllocationError(f"{node.subskill_name!r} allocation < 0")
            if node.data_allocation > forest.per_subskill_cap:
                raise CapExceededError(
                    f"{node.subskill_name!r} allocation {node.data_allocation} over cap"
                )


def dump_text_table(forest: SkillForest) -> str:
    """Aligned text snapshot: skill, subskills, allocations, performance."""
    rows = [("skill", "subskill", "allocation", "performance")]
    for tree in forest.trees:
        if not tree.subskills:
            rows.append((tree.skill_name, "-", "0", "-"))
        for node in tree.subskills:
            perf = "-" if node.training_performance is None else f"{node.training_performance:.3f}"
            rows.append((tree.skill_name, node.subskill_name, str(node.data_allocation), perf))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
