"""Two-stage skill discovery: per-item annotation, then aggregation into categories.

Also hosts the subskill proposer used by skill-tree growth. Everything here
talks to the model only through the provider port, so the deterministic mock
makes the whole pipeline reproducible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from teachgym.core import TaskItem, TeachGymError
from teachgym.provider import ChatProvider, CompletionRequest, StructuredParseFailure

UNCATEGORIZED = "Uncategorized"


class PartitionViolationError(TeachGymError):
    pass


class EmptySkillNameError(TeachGymError):
    pass


@dataclass(frozen=True)
class SkillAssignment:
    """Raw per-item labels plus the raw-label to category map (a partition)."""

    item_to_raw: Mapping[str, str]
    category_map: Mapping[str, str]

    def category_for_item(self, item_id: str) -> str:
        raw = self.item_to_raw.get(item_id)
        if raw is None:
            return UNCATEGORIZED
        return self.category_map.get(raw, UNCATEGORIZED)


@dataclass(frozen=True)
class DiscoveryResult:
    skills: tuple[str, ...]
    assignment: SkillAssignment

    def skill_of(self, item_id: str) -> str:
        return self.assignment.category_for_item(item_id)


def annotate_instance(item: TaskItem, provider: ChatProvider) -> str:
    """Stage 1: name the high-level skill one item requires."""
    request = CompletionRequest(
        template_id="skill_annotation",
        variables={
            "item_id": item.item_id,
            "instruction": item.instruction,
            "true_skill": item.true_skill,
        },
        schema_id="skill_label",
    )
    skill = provider.complete(request).payload["skill"].strip()
    if not skill:
        raise EmptySkillNameError(f"empty skill name for item {item.item_id}")
    return skill


def aggregate_skills(
    raw_labels: Sequence[str],
    provider: ChatProvider,
    max_categories: int = 15,
    max_retries: int = 2,
) -> dict[str, str]:
    """Stage 2: partition raw labels into mutually exclusive categories.

    The provider sees the deduplicated label set with counts, not the full
    list. An output that drops or double-assigns a label is retried, then
    rejected.
    """
    if not raw_labels:
        raise ValueError("aggregate_skills needs at least one raw label")
    counts: dict[str, int] = {}
    for label in raw_labels:
        counts[label] = counts.get(label, 0) + 1

    last_error = ""
    for _ in range(max_retries + 1):
        variables = {"label_counts": counts, "max_categories": max_categories}
        if last_error:
            variables["previous_error"] = last_error
        response = provider.complete(
            CompletionRequest("skill_aggregation", variables, "skill_categories")
        )
        categories: dict[str, list[str]] = response.payload["categories"]

        mapping: dict[str, str] = {}
        double = False
        for category, labels in categories.items():
            for label in labels:
                if label in mapping:
                    double = True
                mapping[label] = category
        missing = set(counts) - set(mapping)
        extras = set(mapping) - set(counts)
        if not double and not missing and not extras and len(categories) <= max_categories:
            return mapping
        last_error = (
            f"double-assigned={double} missing={sorted(missing)} extras={sorted(extras)} "
            f"categories={len(categories)}/{max_categories}"
        )
    raise PartitionViolationError(f"aggregation is not a valid partition: {last_error}")


def _nearest_category(raw: str, categories: Sequence[str]) -> str:
    folded = raw.casefold()
    for cat in categories:
        if cat.casefold() == folded:
            return cat
    raw_tokens = set(folded.split())
    best, best_score = UNCATEGORIZED, 0.0
    for cat in categories:
        cat_tokens = set(cat.casefold().split())
        union = raw_tokens | cat_tokens
        score = len(raw_tokens & cat_tokens) / len(union) if union else 0.0
        if score > best_score:
            best, best_score = cat, score
    return best


def discover(
    items: Sequence[TaskItem],
    provider: ChatProvider,
    user_skills: Sequence[str] | None = None,
    max_categories: int = 15,
    max_concurrency: int = 1,
) -> DiscoveryResult:
    """Run both stages over the validation items.

    With ``user_skills`` the category set is taken verbatim and stage-1 labels
    map onto the nearest given skill instead of being aggregated.
    """
    if not items:
        raise ValueError("discover needs a non-empty item list")

    def annotate(item: TaskItem) -> str:
        try:
            return annotate_instance(item, provider)
        except (StructuredParseFailure, EmptySkillNameError):
            return UNCATEGORIZED

    if max_concurrency > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            labels = list(pool.map(annotate, items))
    else:
        labels = [annotate(item) for item in items]
    item_to_raw = {item.item_id: label for item, label in zip(items, labels)}

    real_labels = [l for l in labels if l != UNCATEGORIZED]
    if user_skills is not None:
        skills = tuple(user_skills)
        category_map = {raw: _nearest_category(raw, skills) for raw in set(real_labels)}
    else:
        if not real_labels:
            raise EmptySkillNameError("no item could be annotated")
        category_map = aggregate_skills(real_labels, provider, max_categories)
        skills = tuple(sorted(set(category_map.values())))

    assignment = SkillAssignment(item_to_raw, category_map)
    used = {assignment.category_for_item(i.item_id) for i in items}
    if UNCATEGORIZED in used and UNCATEGORIZED not in skills:
        skills = skills + (UNCATEGORIZED,)
    return DiscoveryResult(skills, assignment)


@dataclass(frozen=True)
class SubskillProposal:
    names: tuple[str, ...]
    requested: int

    @property
    def shortfall(self) -> int:
        return self.requested - len(self.names)


def propose_subskills(
    skill: str,
    existing: Sequence[str],
    k: int,
    provider: ChatProvider,
) -> SubskillProposal:
    """Ask for k new subskills; duplicates are dropped, a short list is reported."""
    if k < 1:
        raise ValueError("k must be >= 1")
    response = provider.complete(
        CompletionRequest(
            "subskill_proposal",
            {"skill": skill, "existing": list(existing), "k": k},
            "subskill_proposals",
        )
    )
    taken = {name.casefold() for name in existing}
    names: list[str] = []
    for name in response.payload["proposals"]:
        key = name.casefold()
        if key in taken:
            continue
        taken.add(key)
        names.append(name)
        if len(names) == k:
            break
    return SubskillProposal(tuple(names), k)
