"""Baseline data-generation policies and the no-state ablation wrapper.

A policy maps the environment state to the next action. The provider-backed
policies verbalize the state into a prompt; the skill-tree baseline is a
hand-written controller that grows every tree to a fixed size and then fills
allocations uniformly.
"""

from __future__ import annotations

import json
import random
import subprocess
from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Sequence

from teachgym.core import (
    Action,
    DataSpec,
    EvaluatedPrediction,
    Explore,
    Exploit,
    GenerateData,
    OpenEndedState,
    SkillListState,
    SkillSlice,
    SkillTreeState,
    State,
    TaskDomain,
    TaskItem,
    TeachGymError,
    action_from_dict,
    canonical_json,
)
from teachgym.discovery import UNCATEGORIZED
from teachgym.provider import ChatProvider, CompletionRequest

DEFAULT_ERROR_SAMPLE_CAP = 50


class PolicyError(TeachGymError):
    pass


class Policy(Protocol):
    def __call__(self, state: State) -> Action: ...


def _sample_errors(
    predictions: Sequence[EvaluatedPrediction],
    cap: int,
    items_by_id: Mapping[str, TaskItem],
) -> list[dict[str, Any]]:
    """Capped error sample for prompts, stratified by skill when tags exist."""
    errors = [p for p in predictions if not p.correct]
    tagged = [p for p in errors if p.assigned_skill is not None]
    if tagged and len(errors) > cap:
        by_skill: dict[str, list[EvaluatedPrediction]] = {}
        for p in errors:
            by_skill.setdefault(p.assigned_skill or UNCATEGORIZED, []).append(p)
        from teachgym.provider import largest_remainder_allocation

        counts = largest_remainder_allocation(
            {k: float(len(v)) for k, v in by_skill.items()}, cap
        )
        picked: list[EvaluatedPrediction] = []
        for skill in sorted(by_skill):
            picked.extend(by_skill[skill][: counts[skill]])
    else:
        picked = errors[:cap]
    out = []
    for p in picked:
        item = items_by_id.get(p.item_id)
        out.append(
            {
                "item_id": p.item_id,
                "instruction": item.instruction if item else "",
                "assigned_skill": p.assigned_skill,
            }
        )
    return out


class OpenEndedPolicy:
    """Plans datum specs straight from the raw error list."""

    def __init__(
        self,
        provider: ChatProvider,
        budget: int,
        domain: TaskDomain,
        items_by_id: Mapping[str, TaskItem] | None = None,
        error_sample_cap: int = DEFAULT_ERROR_SAMPLE_CAP,
    ) -> None:
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.provider = provider
        self.budget = budget
        self.domain = domain
        self.items_by_id = items_by_id or {}
        self.error_sample_cap = error_sample_cap

    def __call__(self, state: State) -> Action:
        if not isinstance(state, OpenEndedState):
            raise PolicyError("open-ended policy expects an open-ended state")
        errors = _sample_errors(state.predictions, self.error_sample_cap, self.items_by_id)
        samples = [
            {"item_id": p.item_id}
            for p in state.predictions
            if p.correct
        ][: self.error_sample_cap]
        payload = self.provider.complete(
            CompletionRequest(
                "policy_open_ended",
                {
                    "domain": self.domain.value,
                    "budget": self.budget,
                    "errors": errors,
                    "samples": samples,
                },
                "data_specs",
            )
        ).payload
        specs = []
        for raw in payload["specs"][: self.budget]:
            hints = {}
            anchor = _anchor_from_instruction(raw["instruction"], errors or samples)
            if anchor:
                hints["anchor_item_id"] = anchor
            specs.append(
                DataSpec(
                    instruction=raw["instruction"],
                    domain=self.domain,
                    target_skill=raw.get("target_skill"),
                    target_subskill=raw.get("target_subskill"),
                    rendering_hints=hints,
                )
            )
        return GenerateData(tuple(specs))


def _anchor_from_instruction(instruction: str, candidates: Sequence[Mapping[str, Any]]) -> str | None:
    """Recover which sampled item a spec is targeting, if the text names one."""
    for c in candidates:
        item_id = c.get("item_id")
        if item_id and item_id in instruction:
            return item_id
    return None


class SkillListPolicy:
    """Plans specs per skill, weighting the weak skills."""

    def __init__(
        self,
        provider: ChatProvider,
        budget: int,
        domain: TaskDomain,
        items_by_id: Mapping[str, TaskItem] | None = None,
        error_sample_cap: int = DEFAULT_ERROR_SAMPLE_CAP,
        errors_per_skill: int = 5,
    ) -> None:
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.provider = provider
        self.budget = budget
        self.domain = domain
        self.items_by_id = items_by_id or {}
        self.error_sample_cap = error_sample_cap
        self.errors_per_skill = errors_per_skill

    def __call__(self, state: State) -> Action:
        if not isinstance(state, SkillListState):
            raise PolicyError("skill-list policy expects a skill-list state")
        skills_var: dict[str, Any] = {}
        for skill in sorted(state.per_skill):
            part = state.per_skill[skill]
            errs = [
                {
                    "item_id": p.item_id,
                    "instruction": self.items_by_id.get(p.item_id).instruction
                    if p.item_id in self.items_by_id
                    else "",
                }
                for p in part.predictions
                if not p.correct
            ][: self.errors_per_skill]
            skills_var[skill] = {"accuracy": part.accuracy, "errors": errs}
        payload = self.provider.complete(
            CompletionRequest(
                "policy_skill_list",
                {"domain": self.domain.value, "budget": self.budget, "skills": skills_var},
                "data_specs",
            )
        ).payload
        known = set(state.per_skill)
        specs = []
        for raw in payload["specs"][: self.budget]:
            skill = raw.get("target_skill")
            hints: dict[str, str] = {}
            if skill not in known:
                hints["remapped_from"] = str(skill)
                skill = UNCATEGORIZED
            specs.append(
                DataSpec(
                    instruction=raw["instruction"],
                    domain=self.domain,
                    target_skill=skill,
                    target_subskill=raw.get("target_subskill"),
                    rendering_hints=hints,
                )
            )
        return GenerateData(tuple(specs))


# ---------------------------------------------------------------------------
# Hand-crafted skill-tree policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SkillTreePolicyConfig:
    max_subskills: int = 4
    per_subskill_cap: int = 300
    per_action_cap: int = 100
    k_new: int = 2


class HandcraftedSkillTreePolicy:
    """Grow each tree to a fixed size, then fill allocations uniformly to the cap.

    Per tree, the growth phase alternates Explore (add subskills) with Exploit
    (drive allocations back toward zero); once a tree has max_subskills, the
    filling phase tops every subskill up by at most the per-action cap until
    all sit exactly at the per-subskill cap. Trees are serviced round-robin in
    name order; with everything full the policy emits an all-zero Exploit.
    """

    def __init__(self, config: SkillTreePolicyConfig | None = None) -> None:
        self.config = config or SkillTreePolicyConfig()
        self._visits: dict[str, int] = {}
        self._pointer = 0

    def _tree_complete(self, tree: Any) -> bool:
        cfg = self.config
        return len(tree.subskills) >= cfg.max_subskills and all(
            n.data_allocation >= cfg.per_subskill_cap for n in tree.subskills
        )

    def __call__(self, state: State) -> Action:
        if not isinstance(state, SkillTreeState):
            raise PolicyError("skill-tree policy expects a skill-tree state")
        cfg = self.config
        forest = state.forest
        names = sorted(forest.skill_names)
        if not names:
            raise PolicyError("forest has no trees")

        for offset in range(len(names)):
            name = names[(self._pointer + offset) % len(names)]
            tree = forest.tree(name)
            if self._tree_complete(tree):
                continue
            self._pointer = (self._pointer + offset + 1) % len(names)

            if len(tree.subskills) < cfg.max_subskills:
                visit = self._visits.get(name, 0)
                self._visits[name] = visit + 1
                if visit % 2 == 0:
                    room = cfg.max_subskills - len(tree.subskills)
                    return Explore(name, min(cfg.k_new, room))
                deltas = {
                    n.subskill_name: -min(n.data_allocation, cfg.per_action_cap)
                    for n in tree.subskills
                }
                return Exploit(name, deltas)

            deltas = {
                n.subskill_name: min(
                    cfg.per_action_cap, cfg.per_subskill_cap - n.data_allocation
                )
                for n in tree.subskills
            }
            return Exploit(name, deltas)

        # every tree complete: signal the fixpoint with a no-op
        first = forest.tree(names[0])
        return Exploit(names[0], {n.subskill_name: 0 for n in first.subskills})


# ---------------------------------------------------------------------------
# No-state ablation
# ---------------------------------------------------------------------------

class RandomSkillTreePolicy:
    """Equal-probability explore/exploit with uniformly chosen targets, clipped at caps."""

    def __init__(self, seed: int, k_new: int = 2) -> None:
        self.rng = random.Random(f"no-state-tree-{seed}")
        self.k_new = k_new
        self.explore_draws = 0
        self.total_draws = 0

    def __call__(self, state: State) -> Action:
        if not isinstance(state, SkillTreeState):
            raise PolicyError("random skill-tree policy expects a skill-tree state")
        forest = state.forest
        names = sorted(forest.skill_names)
        self.total_draws += 1
        explore = self.rng.random() < 0.5
        if explore:
            self.explore_draws += 1
        name = self.rng.choice(names)
        tree = forest.tree(name)
        room = forest.max_subskills_per_tree - len(tree.subskills)

        if explore and room > 0:
            return Explore(name, min(self.k_new, room))
        if not tree.subskills:
            # cannot exploit an empty tree; fall back to growing it
            return Explore(name, min(self.k_new, room))
        node = self.rng.choice([n.subskill_name for n in tree.subskills])
        alloc = tree.subskill(node).data_allocation
        delta = min(forest.per_action_cap, forest.per_subskill_cap - alloc)
        return Exploit(name, {node: delta})


class NoStatePolicy:
    """Feeds the wrapped policy masked states built from random train samples.

    Direct-generation states lose the real error list; skill-list states also
    lose their accuracies (every skill reads 0.5). Skill-tree states bypass the
    wrapped policy entirely in favor of coin-flip actions.
    """

    def __init__(
        self,
        inner: Policy | None,
        seed: int,
        pool_items: Sequence[TaskItem],
        sample_size: int = DEFAULT_ERROR_SAMPLE_CAP,
        k_new: int = 2,
    ) -> None:
        self.inner = inner
        self.rng = random.Random(f"no-state-{seed}")
        self.pool = list(pool_items)
        self.sample_size = sample_size
        self._tree_policy = RandomSkillTreePolicy(seed, k_new)

    def _pseudo_errors(self, iteration: int, skill: str | None = None) -> tuple[EvaluatedPrediction, ...]:
        k = min(self.sample_size, len(self.pool))
        picks = self.rng.sample(self.pool, k) if k else []
        return tuple(
            EvaluatedPrediction(
                item_id=item.item_id,
                predicted_answer="",
                correct=False,
                iteration=iteration,
                assigned_skill=skill,
            )
            for item in picks
        )

    def __call__(self, state: State) -> Action:
        if isinstance(state, SkillTreeState):
            return self._tree_policy(state)
        if self.inner is None:
            raise PolicyError("no wrapped policy for a direct-generation state")
        if isinstance(state, OpenEndedState):
            iteration = state.predictions[0].iteration if state.predictions else 0
            masked: State = OpenEndedState(self._pseudo_errors(iteration))
            return self.inner(masked)
        if isinstance(state, SkillListState):
            per_skill: dict[str, SkillSlice] = {}
            for skill in sorted(state.per_skill):
                preds = self._pseudo_errors(0, skill)
                per_skill[skill] = SkillSlice(preds, 0.5)
            return self.inner(SkillListState(per_skill))
        raise PolicyError(f"unsupported state type: {type(state).__name__}")


def no_state_wrapper(
    policy: Policy | None,
    seed: int,
    pool_items: Sequence[TaskItem],
    sample_size: int = DEFAULT_ERROR_SAMPLE_CAP,
    k_new: int = 2,
) -> NoStatePolicy:
    return NoStatePolicy(policy, seed, pool_items, sample_size, k_new)


# ---------------------------------------------------------------------------
# External policy process
# ---------------------------------------------------------------------------

class ExternalPolicy:
    """Runs a subprocess per decision: state JSON on stdin, action JSON on stdout."""

    def __init__(self, command: Sequence[str], timeout: float = 60.0) -> None:
        self.command = list(command)
        self.timeout = timeout

    def __call__(self, state: State) -> Action:
        proc = subprocess.run(
            self.command,
            input=canonical_json(state.to_dict()),
            capture_output=True,
            text=True,
            timeout=self.timeout,
        )
        if proc.returncode != 0:
            raise PolicyError(f"external policy failed: {proc.stderr.strip()[:500]}")
        try:
            return action_from_dict(json.loads(proc.stdout))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise PolicyError(f"external policy emitted invalid action: {exc}") from exc
