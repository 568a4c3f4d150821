"""Deterministic simulated student: Train and Eval against a latent proficiency model.

Each hidden subskill follows a saturating learning curve in the cumulative
amount of training data it has received, modulated by how far the subskill's
mean item difficulty sits from the student's sweet spot and by how rare the
parent skill is in the validation set:

    p(N) = p0 + (cap - p0) * (1 - exp(-eta * e(d) * f(r) * N))
    e(d) = exp(-(d - mu)^2 / (2 * sigma^2))
    f(r) = (1 - r)^rho,  r = 1 - validation frequency share of the skill

Correctness of an item is proficiency > its fixed latent threshold, so whole
episodes replay bit-exactly and accuracy never decreases with more data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from teachgym.core import (
    ComparisonMode,
    EvaluatedPrediction,
    PerformanceReport,
    TaskItem,
    TeachGymError,
    TrainingDatum,
    build_report,
    compare_answers,
    stable_unit_float,
)


class EvaluationMismatchError(TeachGymError):
    """An item references a subskill the student's parameter set does not know."""


class TrainerUnavailableError(TeachGymError):
    pass


@dataclass(frozen=True)
class SimulatedStudentParams:
    base_proficiency: float = 0.2
    ceiling: float = 0.9
    learning_rate: float = 0.01
    difficulty_width: float = 1.5
    difficulty_peak: float = 3.5
    rarity_exponent: float = 1.0
    epoch_saturation: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.base_proficiency <= 1.0:
            raise ValueError("base_proficiency must be in [0,1]")
        if not self.base_proficiency <= self.ceiling <= 1.0:
            raise ValueError("ceiling must be in [base_proficiency, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.difficulty_width <= 0:
            raise ValueError("difficulty_width must be > 0")
        if self.rarity_exponent < 0:
            raise ValueError("rarity_exponent must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_proficiency": self.base_proficiency,
            "ceiling": self.ceiling,
            "learning_rate": self.learning_rate,
            "difficulty_width": self.difficulty_width,
            "difficulty_peak": self.difficulty_peak,
            "rarity_exponent": self.rarity_exponent,
            "epoch_saturation": self.epoch_saturation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimulatedStudentParams":
        return cls(**dict(d))


@dataclass(frozen=True)
class StudentCheckpoint:
    """Immutable snapshot of the student after some amount of training."""

    checkpoint_id: str
    iteration: int
    proficiency: Mapping[str, float] = field(default_factory=dict)
    effective_counts: Mapping[str, float] = field(default_factory=dict)
    external_handle: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "checkpoint_id": self.checkpoint_id,
            "iteration": self.iteration,
            "proficiency": dict(self.proficiency),
            "effective_counts": dict(self.effective_counts),
            "external_handle": self.external_handle,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StudentCheckpoint":
        return cls(
            checkpoint_id=d["checkpoint_id"],
            iteration=d["iteration"],
            proficiency=dict(d.get("proficiency", {})),
            effective_counts=dict(d.get("effective_counts", {})),
            external_handle=d.get("external_handle"),
        )


@dataclass(frozen=True)
class DatasetProfile:
    """What the learning model needs to know about the validation set."""

    subskill_mean_difficulty: Mapping[str, float]
    subskill_skill: Mapping[str, str]
    skill_share: Mapping[str, float]
    subskills_by_skill: Mapping[str, tuple[str, ...]]

    @classmethod
    def from_items(cls, items: Sequence[TaskItem]) -> "DatasetProfile":
        diff_sum: dict[str, float] = {}
        diff_n: dict[str, int] = {}
        sub_skill: dict[str, str] = {}
        skill_n: dict[str, int] = {}
        order: dict[str, list[str]] = {}
        for item in items:
            if item.true_subskill is None or item.true_skill is None:
                raise EvaluationMismatchError(
                    f"item {item.item_id} lacks hidden skill tags; "
                    "the simulated student needs a simulated dataset"
                )
            sub = item.true_subskill
            sub_skill[sub] = item.true_skill
            skill_n[item.true_skill] = skill_n.get(item.true_skill, 0) + 1
            if sub not in order.setdefault(item.true_skill, []):
                order[item.true_skill].append(sub)
            if item.difficulty is not None:
                diff_sum[sub] = diff_sum.get(sub, 0.0) + item.difficulty
                diff_n[sub] = diff_n.get(sub, 0) + 1
        total = sum(skill_n.values())
        return cls(
            subskill_mean_difficulty={
                s: diff_sum[s] / diff_n[s] for s in diff_sum
            },
            subskill_skill=sub_skill,
            skill_share={k: n / total for k, n in skill_n.items()},
            subskills_by_skill={k: tuple(v) for k, v in order.items()},
        )


class SimulatedStudent:
    """Train/Eval pair that is a pure function of (params, datum sequence)."""

    def __init__(self, params: SimulatedStudentParams, validation_items: Sequence[TaskItem]):
        self.params = params
        self.profile = DatasetProfile.from_items(validation_items)

    # -- learning model -------------------------------------------------------

    def _difficulty_response(self, subskill: str) -> float:
        d = self.profile.subskill_mean_difficulty.get(subskill, self.params.difficulty_peak)
        z = (d - self.params.difficulty_peak) / self.params.difficulty_width
        return math.exp(-0.5 * z * z)

    def _rarity_response(self, subskill: str) -> float:
        skill = self.profile.subskill_skill[subskill]
        share = self.profile.skill_share[skill]
        return share ** self.params.rarity_exponent

    def _proficiency(self, subskill: str, effective_count: float) -> float:
        p = self.params
        rate = p.learning_rate * self._difficulty_response(subskill) * self._rarity_response(subskill)
        return p.base_proficiency + (p.ceiling - p.base_proficiency) * (
            1.0 - math.exp(-rate * effective_count)
        )

    def resolve_subskill(self, skill: str | None, subskill: str | None, key: str) -> str | None:
        """Map a datum's provenance onto a hidden subskill, or None if it teaches nothing.

        Exact subskill tags win; a known skill without a known subskill spreads
        deterministically (by provenance digest) across that skill's subskills.
        """
        if subskill is not None and subskill in self.profile.subskill_skill:
            return subskill
        if skill is not None and skill in self.profile.subskills_by_skill:
            members = self.profile.subskills_by_skill[skill]
            pick = int(stable_unit_float("spread", skill, key) * len(members))
            return members[min(pick, len(members) - 1)]
        return None

    # -- Train ----------------------------------------------------------------

    def initial_checkpoint(self) -> StudentCheckpoint:
        subskills = sorted(self.profile.subskill_skill)
        return StudentCheckpoint(
            checkpoint_id="ckpt-0000",
            iteration=0,
            proficiency={s: self.params.base_proficiency for s in subskills},
            effective_counts={s: 0.0 for s in subskills},
        )

    def train(
        self,
        checkpoint: StudentCheckpoint,
        datums: Sequence[TrainingDatum],
        iteration: int,
        epochs_multiplier: float = 1.0,
    ) -> StudentCheckpoint:
        if not datums:
            return checkpoint
        boost = min(epochs_multiplier, self.params.epoch_saturation)
        counts = dict(checkpoint.effective_counts)
        for datum in datums:
            prov = datum.provenance
            sub = self.resolve_subskill(prov.skill, prov.subskill, prov.spec_digest)
            if sub is None:
                continue  # data for an unknown skill teaches nothing
            counts[sub] = counts.get(sub, 0.0) + boost
        proficiency = {s: self._proficiency(s, counts[s]) for s in counts}
        return StudentCheckpoint(
            checkpoint_id=f"ckpt-{iteration:04d}",
            iteration=iteration,
            proficiency=proficiency,
            effective_counts=counts,
        )

    # -- Eval -----------------------------------------------------------------

    def evaluate(
        self,
        checkpoint: StudentCheckpoint,
        items: Sequence[TaskItem],
        iteration: int,
        skill_assignment: Mapping[str, str] | None = None,
    ) -> tuple[list[EvaluatedPrediction], PerformanceReport]:
        if not items:
            raise ValueError("evaluate needs a non-empty dataset")
        predictions = []
        for item in items:
            if item.true_subskill not in checkpoint.proficiency:
                raise EvaluationMismatchError(
                    f"item {item.item_id} references unknown subskill {item.true_subskill!r}"
                )
            p = checkpoint.proficiency[item.true_subskill]
            predicted = repr(p)
            correct = compare_answers(
                predicted, item.gold_answer, ComparisonMode.PROFICIENCY_THRESHOLD
            )
            predictions.append(
                EvaluatedPrediction(
                    item_id=item.item_id,
                    predicted_answer=predicted,
                    correct=correct,
                    iteration=iteration,
                    assigned_skill=(skill_assignment or {}).get(item.item_id),
                )
            )
        items_by_id = {i.item_id: i for i in items}
        return predictions, build_report(predictions, items_by_id, iteration)

    def _datum_correct(self, checkpoint: StudentCheckpoint, datum: TrainingDatum) -> bool:
        prov = datum.provenance
        sub = self.resolve_subskill(prov.skill, prov.subskill, prov.spec_digest)
        if sub is None or sub not in checkpoint.proficiency:
            return False
        threshold = stable_unit_float("generated-threshold", datum.digest())
        return checkpoint.proficiency[sub] > threshold

    def evaluate_on_generated(
        self, checkpoint: StudentCheckpoint, datums: Sequence[TrainingDatum]
    ) -> float:
        """Accuracy on generated data the student has not trained on yet."""
        if not datums:
            raise ValueError("evaluate_on_generated needs at least one datum")
        correct = sum(1 for d in datums if self._datum_correct(checkpoint, d))
        return correct / len(datums)

    def training_performance(
        self, checkpoint: StudentCheckpoint, datums: Sequence[TrainingDatum]
    ) -> dict[tuple[str, str], float]:
        """Per-(skill, subskill) accuracy on generated datums, for forest bookkeeping."""
        by_pair: dict[tuple[str, str], list[bool]] = {}
        for d in datums:
            prov = d.provenance
            if prov.skill is None or prov.subskill is None:
                continue
            by_pair.setdefault((prov.skill, prov.subskill), []).append(
                self._datum_correct(checkpoint, d)
            )
        return {pair: sum(v) / len(v) for pair, v in by_pair.items()}
