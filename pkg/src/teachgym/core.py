"""Shared domain vocabulary: tasks, items, predictions, datums, states, actions, reports.

Every value type here is immutable after construction and serializes to JSON
with a stable layout, so states and trajectories can be digested and compared
bit-for-bit across runs.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, Union


class TeachGymError(Exception):
    """Base class for all package errors."""


class NotSupportedError(TeachGymError):
    """Raised for comparison modes that the in-process evaluator does not run."""


class UnderstockedStratumError(TeachGymError):
    def __init__(self, stratum: str, have: int, need: int) -> None:
        super().__init__(f"stratum {stratum!r} has {have} items, need {need}")
        self.stratum = stratum


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace; the digestable form."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj: Any) -> str:
    """sha256 hex digest of the canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def stable_unit_float(*parts: Any) -> float:
    """Deterministic pseudo-uniform draw in [0, 1) from arbitrary key parts.

    Used wherever a reproducible 'random' value must be a pure function of
    its inputs (mock confusion, latent thresholds for generated datums).
    """
    h = hashlib.sha256(canonical_json(list(parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2**64


def write_jsonl(path: Path | str, rows: Iterable[Mapping[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_json(row) + "\n")


def read_jsonl(path: Path | str) -> list[dict[str, Any]]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# ---------------------------------------------------------------------------
# Domains and answer comparison
# ---------------------------------------------------------------------------

class ComparisonMode(str, Enum):
    EXACT_MATCH_NORMALIZED = "exact-match-normalized"
    BOOLEAN_STRING = "boolean-string"
    TEST_EXECUTION_STUB = "test-execution-stub"
    PROFICIENCY_THRESHOLD = "proficiency-threshold"


class TaskDomain(str, Enum):
    MATH = "math"
    VQA = "vqa"
    CODE = "code"
    SIMULATED = "simulated"

    @property
    def comparison_mode(self) -> ComparisonMode:
        return _DOMAIN_MODES[self]


_DOMAIN_MODES = {
    TaskDomain.MATH: ComparisonMode.EXACT_MATCH_NORMALIZED,
    TaskDomain.VQA: ComparisonMode.BOOLEAN_STRING,
    TaskDomain.CODE: ComparisonMode.TEST_EXECUTION_STUB,
    TaskDomain.SIMULATED: ComparisonMode.PROFICIENCY_THRESHOLD,
}

_WS = re.compile(r"\s+")

_BOOL_CANON = {
    "yes": "yes", "true": "yes", "1": "yes",
    "no": "no", "false": "no", "0": "no",
}


def normalize_answer(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return _WS.sub(" ", text.strip().lower())


def compare_answers(predicted: str, gold: str, mode: ComparisonMode) -> bool:
    """Deterministic correctness decision for one (prediction, gold) pair.

    ``proficiency-threshold`` interprets both strings as floats and scores
    correct iff predicted > gold; it exists so the simulated student's
    correctness stays a pure function of the stored prediction strings.
    """
    if mode is ComparisonMode.EXACT_MATCH_NORMALIZED:
        return normalize_answer(predicted) == normalize_answer(gold)
    if mode is ComparisonMode.BOOLEAN_STRING:
        p, g = normalize_answer(predicted), normalize_answer(gold)
        return _BOOL_CANON.get(p, p) == _BOOL_CANON.get(g, g)
    if mode is ComparisonMode.PROFICIENCY_THRESHOLD:
        return float(predicted) > float(gold)
    if mode is ComparisonMode.TEST_EXECUTION_STUB:
        raise NotSupportedError("test execution scoring is not available in-process")
    raise ValueError(f"unknown comparison mode: {mode}")


# ---------------------------------------------------------------------------
# Items, predictions, datums
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskItem:
    """One evaluation item. Hidden ``true_*`` tags exist only in the simulated domain."""

    item_id: str
    instruction: str
    gold_answer: str
    domain: TaskDomain
    media_ref: str | None = None
    difficulty: int | None = None
    true_skill: str | None = None
    true_subskill: str | None = None
    latent_pass_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.difficulty is not None and not 1 <= self.difficulty <= 5:
            raise ValueError(f"difficulty must be in 1..5, got {self.difficulty}")
        if self.domain is TaskDomain.MATH and self.difficulty is None:
            raise ValueError(f"math item {self.item_id} needs a difficulty level")
        t = self.latent_pass_threshold
        if t is not None and not 0.0 <= t < 1.0:
            raise ValueError(f"latent_pass_threshold must be in [0,1), got {t}")
        if t is not None and self.domain is not TaskDomain.SIMULATED:
            raise ValueError("latent_pass_threshold exists only in the simulated domain")

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "instruction": self.instruction,
            "gold_answer": self.gold_answer,
            "domain": self.domain.value,
            "media_ref": self.media_ref,
            "difficulty": self.difficulty,
            "true_skill": self.true_skill,
            "true_subskill": self.true_subskill,
            "latent_pass_threshold": self.latent_pass_threshold,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TaskItem":
        return cls(
            item_id=d["item_id"],
            instruction=d["instruction"],
            gold_answer=d["gold_answer"],
            domain=TaskDomain(d["domain"]),
            media_ref=d.get("media_ref"),
            difficulty=d.get("difficulty"),
            true_skill=d.get("true_skill"),
            true_subskill=d.get("true_subskill"),
            latent_pass_threshold=d.get("latent_pass_threshold"),
        )


def save_dataset(path: Path | str, items: Sequence[TaskItem]) -> None:
    write_jsonl(path, (it.to_dict() for it in items))


def load_dataset(path: Path | str) -> list[TaskItem]:
    items = [TaskItem.from_dict(d) for d in read_jsonl(path)]
    seen: set[str] = set()
    for it in items:
        if it.item_id in seen:
            raise ValueError(f"duplicate item_id in dataset: {it.item_id}")
        seen.add(it.item_id)
    return items


def dataset_digest(items: Sequence[TaskItem]) -> str:
    return digest([it.to_dict() for it in items])


@dataclass(frozen=True)
class EvaluatedPrediction:
    item_id: str
    predicted_answer: str
    correct: bool
    iteration: int
    assigned_skill: str | None = None

    def __post_init__(self) -> None:
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "predicted_answer": self.predicted_answer,
            "correct": self.correct,
            "iteration": self.iteration,
            "assigned_skill": self.assigned_skill,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvaluatedPrediction":
        return cls(
            item_id=d["item_id"],
            predicted_answer=d["predicted_answer"],
            correct=d["correct"],
            iteration=d["iteration"],
            assigned_skill=d.get("assigned_skill"),
        )


@dataclass(frozen=True)
class DataSpec:
    """One planned training datum, before rendering."""

    instruction: str
    domain: TaskDomain
    target_skill: str | None = None
    target_subskill: str | None = None
    rendering_hints: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "instruction": self.instruction,
            "domain": self.domain.value,
            "target_skill": self.target_skill,
            "target_subskill": self.target_subskill,
            "rendering_hints": dict(self.rendering_hints),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DataSpec":
        return cls(
            instruction=d["instruction"],
            domain=TaskDomain(d["domain"]),
            target_skill=d.get("target_skill"),
            target_subskill=d.get("target_subskill"),
            rendering_hints=dict(d.get("rendering_hints", {})),
        )

    def digest(self) -> str:
        return digest(self.to_dict())


@dataclass(frozen=True)
class Provenance:
    iteration: int
    skill: str | None
    subskill: str | None
    spec_digest: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "skill": self.skill,
            "subskill": self.subskill,
            "spec_digest": self.spec_digest,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Provenance":
        return cls(d["iteration"], d.get("skill"), d.get("subskill"), d["spec_digest"])


@dataclass(frozen=True)
class TrainingDatum:
    """A rendered instruction/response training example."""

    instruction: str
    response: str
    provenance: Provenance
    media_ref: str | None = None

    def __post_init__(self) -> None:
        if not self.response:
            raise ValueError("training datum response must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "instruction": self.instruction,
            "response": self.response,
            "media_ref": self.media_ref,
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainingDatum":
        return cls(
            instruction=d["instruction"],
            response=d["response"],
            provenance=Provenance.from_dict(d["provenance"]),
            media_ref=d.get("media_ref"),
        )

    def digest(self) -> str:
        return digest(self.to_dict())


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpenEndedState:
    """Unstructured state: the full list of evaluated predictions."""

    predictions: tuple[EvaluatedPrediction, ...]

    kind = "open-ended"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "predictions": [p.to_dict() for p in self.predictions]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OpenEndedState":
        return cls(tuple(EvaluatedPrediction.from_dict(p) for p in d["predictions"]))


@dataclass(frozen=True)
class SkillSlice:
    predictions: tuple[EvaluatedPrediction, ...]
    accuracy: float

    def to_dict(self) -> dict[str, Any]:
        return {"predictions": [p.to_dict() for p in self.predictions], "accuracy": self.accuracy}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SkillSlice":
        return cls(
            tuple(EvaluatedPrediction.from_dict(p) for p in d["predictions"]),
            d["accuracy"],
        )


def make_skill_slice(predictions: Sequence[EvaluatedPrediction]) -> SkillSlice:
    preds = tuple(predictions)
    acc = sum(1 for p in preds if p.correct) / len(preds) if preds else 0.0
    return SkillSlice(preds, acc)


@dataclass(frozen=True)
class SkillListState:
    """Predictions partitioned by skill, with per-skill accuracy."""

    per_skill: Mapping[str, SkillSlice]

    kind = "skill-list"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "per_skill": {k: v.to_dict() for k, v in self.per_skill.items()}}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SkillListState":
        return cls({k: SkillSlice.from_dict(v) for k, v in d["per_skill"].items()})


@dataclass(frozen=True)
class SkillTreeState:
    """Skill forest plus per-skill accuracy; forest import is deferred to avoid a cycle."""

    forest: Any  # teachgym.forest.SkillForest
    per_skill_accuracy: Mapping[str, float]

    kind = "skill-tree"

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "forest": self.forest.to_dict(),
            "per_skill_accuracy": dict(self.per_skill_accuracy),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SkillTreeState":
        from teachgym.forest import SkillForest

        return cls(SkillForest.from_dict(d["forest"]), dict(d["per_skill_accuracy"]))


State = Union[OpenEndedState, SkillListState, SkillTreeState]

_STATE_KINDS = {
    "open-ended": OpenEndedState,
    "skill-list": SkillListState,
    "skill-tree": SkillTreeState,
}


def state_from_dict(d: Mapping[str, Any]) -> State:
    try:
        cls = _STATE_KINDS[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown state kind: {d.get('kind')!r}") from None
    return cls.from_dict(d)


def state_digest(state: State) -> str:
    return digest(state.to_dict())


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerateData:
    specs: tuple[DataSpec, ...]

    kind = "generate-data"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "specs": [s.to_dict() for s in self.specs]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GenerateData":
        return cls(tuple(DataSpec.from_dict(s) for s in d["specs"]))


@dataclass(frozen=True)
class Explore:
    skill: str
    num_new_subskills: int

    kind = "explore"

    def __post_init__(self) -> None:
        if self.num_new_subskills < 1:
            raise ValueError("num_new_subskills must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "skill": self.skill, "num_new_subskills": self.num_new_subskills}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Explore":
        return cls(d["skill"], d["num_new_subskills"])


@dataclass(frozen=True)
class Exploit:
    skill: str
    deltas: Mapping[str, int]

    kind = "exploit"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "skill": self.skill, "deltas": dict(self.deltas)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Exploit":
        return cls(d["skill"], {k: int(v) for k, v in d["deltas"].items()})

    def is_noop(self) -> bool:
        return all(v == 0 for v in self.deltas.values())


Action = Union[GenerateData, Explore, Exploit]

_ACTION_KINDS = {
    "generate-data": GenerateData,
    "explore": Explore,
    "exploit": Exploit,
}


def action_from_dict(d: Mapping[str, Any]) -> Action:
    try:
        cls = _ACTION_KINDS[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown action kind: {d.get('kind')!r}") from None
    return cls.from_dict(d)


# ---------------------------------------------------------------------------
# Performance reports
# ---------------------------------------------------------------------------

DIFFICULTY_BINS = ("1", "2", "3", "4", "5")


@dataclass(frozen=True)
class PerformanceReport:
    overall_accuracy: float
    per_skill: Mapping[str, float]
    per_difficulty_bin: Mapping[str, float]
    iteration: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_skill": dict(self.per_skill),
            "per_difficulty_bin": dict(self.per_difficulty_bin),
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PerformanceReport":
        return cls(
            overall_accuracy=d["overall_accuracy"],
            per_skill=dict(d["per_skill"]),
            per_difficulty_bin=dict(d["per_difficulty_bin"]),
            iteration=d["iteration"],
        )


def build_report(
    predictions: Sequence[EvaluatedPrediction],
    items_by_id: Mapping[str, TaskItem],
    iteration: int,
) -> PerformanceReport:
    """Aggregate predictions into a report; overall accuracy is stored unrounded."""
    if not predictions:
        raise ValueError("cannot build a report from zero predictions")
    overall = sum(1 for p in predictions if p.correct) / len(predictions)

    by_skill: dict[str, list[bool]] = {}
    by_bin: dict[str, list[bool]] = {}
    for p in predictions:
        if p.assigned_skill is not None:
            by_skill.setdefault(p.assigned_skill, []).append(p.correct)
        item = items_by_id.get(p.item_id)
        if item is not None and item.difficulty is not None:
            by_bin.setdefault(str(item.difficulty), []).append(p.correct)

    per_skill = {k: sum(v) / len(v) for k, v in sorted(by_skill.items())}
    per_bin = {k: sum(v) / len(v) for k, v in sorted(by_bin.items())}
    return PerformanceReport(overall, per_skill, per_bin, iteration)


# ---------------------------------------------------------------------------
# Stratified splits
# ---------------------------------------------------------------------------

def build_stratified_split(
    items: Sequence[TaskItem],
    strata: Callable[[TaskItem], Any],
    per_stratum: int,
    seed: int,
) -> list[TaskItem]:
    """Pick exactly ``per_stratum`` items from every stratum.

    Selection is a pure function of (dataset digest, seed): the RNG is keyed
    on both, strata are visited in sorted order, and picks keep dataset order.
    """
    groups: dict[str, list[TaskItem]] = {}
    for item in items:
        groups.setdefault(str(strata(item)), []).append(item)

    for name in sorted(groups):
        if len(groups[name]) < per_stratum:
            raise UnderstockedStratumError(name, len(groups[name]), per_stratum)

    key = hashlib.sha256(f"{dataset_digest(items)}:{seed}".encode()).digest()
    rng = random.Random(int.from_bytes(key[:8], "big"))

    out: list[TaskItem] = []
    for name in sorted(groups):
        members = groups[name]
        picked = sorted(rng.sample(range(len(members)), per_stratum))
        out.extend(members[i] for i in picked)
    return out
