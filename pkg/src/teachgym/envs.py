"""Teacher environments: reset builds the initial evaluated state, step runs
Engine -> Train -> Eval and reports the student's accuracy as the reward.

Three variants share the interface: open-ended (raw error list), skill-list
(errors partitioned by discovered skills), and skill-tree (a skill forest
edited through explore/exploit actions).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

from teachgym.core import (
    Action,
    EvaluatedPrediction,
    Explore,
    Exploit,
    GenerateData,
    OpenEndedState,
    PerformanceReport,
    SkillListState,
    SkillTreeState,
    State,
    TaskDomain,
    TaskItem,
    TeachGymError,
    TrainingDatum,
    make_skill_slice,
)
from teachgym.discovery import DiscoveryResult, discover, propose_subskills
from teachgym.engine import DataEngine, EngineResult, execute_forest, execute_plan
from teachgym.forest import (
    SkillForest,
    empty_forest,
    grow_tree,
    rebalance_tree,
    record_training_performance,
)
from teachgym.provider import ChatProvider


class ActionTypeError(TeachGymError):
    pass


class EnvVariant(str, Enum):
    OPEN_ENDED = "open-ended"
    SKILL_LIST = "skill-list"
    SKILL_TREE = "skill-tree"


@dataclass(frozen=True)
class ForestCapsConfig:
    per_action_cap: int = 100
    per_subskill_cap: int = 300
    max_subskills_per_tree: int = 5


@dataclass(frozen=True)
class EnvironmentConfig:
    variant: EnvVariant
    domain: TaskDomain
    data_budget: int = 500
    validation_ref: str = ""
    test_ref: str = ""
    skill_source: str = "discovered"  # or "user-specified"
    user_skills: tuple[str, ...] = ()
    max_categories: int = 15
    forest_caps: ForestCapsConfig | None = None

    def __post_init__(self) -> None:
        if (self.variant is EnvVariant.SKILL_TREE) != (self.forest_caps is not None):
            raise ValueError("forest caps must be present exactly when variant is skill-tree")
        if self.skill_source not in ("discovered", "user-specified"):
            raise ValueError(f"unknown skill source {self.skill_source!r}")
        if self.skill_source == "user-specified" and not self.user_skills:
            raise ValueError("user-specified skill source needs a non-empty skill list")


@dataclass(frozen=True)
class StepInfo:
    report: PerformanceReport
    accuracy_delta: float
    trained: bool
    datums: tuple[TrainingDatum, ...] = ()
    manifest: Mapping[str, int] = field(default_factory=dict)
    dropped: tuple[tuple[str, str], ...] = ()
    forward_accuracy: float | None = None
    subskills_added: tuple[str, ...] = ()
    subskills_dropped: tuple[str, ...] = ()


@dataclass(frozen=True)
class StepOutcome:
    state: State
    reward: float
    info: StepInfo


class TeacherEnvironment:
    """One episode's worth of environment state; step() is strictly sequential."""

    def __init__(
        self,
        config: EnvironmentConfig,
        student: Any,
        engine: DataEngine,
        provider: ChatProvider,
        validation_items: Sequence[TaskItem],
        data_fraction: float = 1.0,
        epochs_multiplier: float = 1.0,
        subsample_seed: int = 0,
    ) -> None:
        if not 0.0 < data_fraction <= 1.0:
            raise ValueError("data_fraction must be in (0,1]")
        self.config = config
        self.student = student
        self.engine = engine
        self.provider = provider
        self.validation_items = list(validation_items)
        self.items_by_id = {i.item_id: i for i in self.validation_items}
        self.data_fraction = data_fraction
        self.epochs_multiplier = epochs_multiplier
        self._subsample_rng = random.Random(f"subsample-{subsample_seed}")

        self.iteration = 0
        self.checkpoint: Any = None
        self.report: PerformanceReport | None = None
        self.state: State | None = None
        self.discovery: DiscoveryResult | None = None
        self.forest: SkillForest | None = None
        self.produced: dict[tuple[str, str], int] = {}
        self._last_predictions: list[EvaluatedPrediction] = []

    @property
    def last_predictions(self) -> list[EvaluatedPrediction]:
        """Predictions from the most recent evaluation, for snapshots and analysis."""
        return self._last_predictions

    # -- reset ---------------------------------------------------------------

    def _assignment_map(self) -> dict[str, str] | None:
        if self.discovery is None:
            return None
        return {i.item_id: self.discovery.skill_of(i.item_id) for i in self.validation_items}

    def reset(self) -> State:
        self.iteration = 0
        self.produced = {}
        self.checkpoint = self.student.initial_checkpoint()

        if self.config.variant in (EnvVariant.SKILL_LIST, EnvVariant.SKILL_TREE):
            user = (
                list(self.config.user_skills)
                if self.config.skill_source == "user-specified"
                else None
            )
            self.discovery = discover(
                self.validation_items,
                self.provider,
                user_skills=user,
                max_categories=self.config.max_categories,
            )
        else:
            self.discovery = None

        predictions, self.report = self.student.evaluate(
            self.checkpoint, self.validation_items, 0, self._assignment_map()
        )
        self._last_predictions = predictions

        if self.config.variant is EnvVariant.SKILL_TREE:
            caps = self.config.forest_caps
            assert caps is not None and self.discovery is not None
            self.forest = empty_forest(
                self.discovery.skills,
                per_action_cap=caps.per_action_cap,
                per_subskill_cap=caps.per_subskill_cap,
                max_subskills_per_tree=caps.max_subskills_per_tree,
            )
        else:
            self.forest = None

        self.state = self._build_state(predictions)
        return self.state

    def _build_state(self, predictions: Sequence[EvaluatedPrediction]) -> State:
        variant = self.config.variant
        if variant is EnvVariant.OPEN_ENDED:
            return OpenEndedState(tuple(predictions))
        if variant is EnvVariant.SKILL_LIST:
            by_skill: dict[str, list[EvaluatedPrediction]] = {}
            assert self.discovery is not None
            for skill in self.discovery.skills:
                by_skill[skill] = []
            for p in predictions:
                by_skill.setdefault(p.assigned_skill or "Uncategorized", []).append(p)
            per_skill = {
                skill: make_skill_slice(preds) for skill, preds in by_skill.items() if preds
            }
            return SkillListState(per_skill)
        assert self.forest is not None and self.report is not None
        return SkillTreeState(self.forest, dict(self.report.per_skill))

    # -- step ----------------------------------------------------------------

    def _check_legal(self, action: Action) -> None:
        variant = self.config.variant
        if isinstance(action, GenerateData):
            if variant is EnvVariant.SKILL_TREE:
                raise ActionTypeError("generate-data actions are illegal in the skill-tree environment")
        elif isinstance(action, (Explore, Exploit)):
            if variant is not EnvVariant.SKILL_TREE:
                raise ActionTypeError(
                    f"{action.kind} actions are only legal in the skill-tree environment"
                )
        else:
            raise ActionTypeError(f"unknown action type {type(action).__name__}")

    def _subsample(self, datums: Sequence[TrainingDatum]) -> list[TrainingDatum]:
        if self.data_fraction >= 1.0 or not datums:
            return list(datums)
        k = max(1, round(len(datums) * self.data_fraction))
        picks = sorted(self._subsample_rng.sample(range(len(datums)), k))
        return [datums[i] for i in picks]

    def _train_eval(self, result: EngineResult) -> StepInfo:
        assert self.report is not None
        forward = None
        if result.datums:
            forward = self.student.evaluate_on_generated(self.checkpoint, result.datums)
        train_datums = self._subsample(result.datums)
        self.checkpoint = self.student.train(
            self.checkpoint, train_datums, self.iteration, self.epochs_multiplier
        )
        predictions, report = self.student.evaluate(
            self.checkpoint, self.validation_items, self.iteration, self._assignment_map()
        )
        delta = report.overall_accuracy - self.report.overall_accuracy
        self.report = report
        self._last_predictions = predictions
        return StepInfo(
            report=report,
            accuracy_delta=delta,
            trained=True,
            datums=result.datums,
            manifest=result.manifest(),
            dropped=result.dropped,
            forward_accuracy=forward,
        )

    def _carry_info(self, **overrides: Any) -> StepInfo:
        assert self.report is not None
        base = dict(
            report=self.report,
            accuracy_delta=0.0,
            trained=False,
        )
        base.update(overrides)
        return StepInfo(**base)

    def step(self, action: Action) -> StepOutcome:
        if self.state is None or self.report is None:
            raise TeachGymError("step() before reset()")
        self._check_legal(action)
        self.iteration += 1

        if isinstance(action, GenerateData):
            if not action.specs:
                info = self._carry_info()
            else:
                result = execute_plan(self.engine, list(action.specs), self.iteration)
                info = self._train_eval(result)
                self.state = self._build_state(self._last_predictions)
            return StepOutcome(self.state, self.report.overall_accuracy, info)

        assert self.forest is not None
        if isinstance(action, Explore):
            tree = self.forest.tree(action.skill)
            existing = [n.subskill_name for n in tree.subskills]
            proposal = propose_subskills(
                action.skill, existing, action.num_new_subskills, self.provider
            )
            grow = grow_tree(self.forest, action.skill, proposal.names)
            self.forest = grow.forest
            self.state = SkillTreeState(self.forest, dict(self.report.per_skill))
            info = self._carry_info(
                subskills_added=grow.added, subskills_dropped=grow.dropped_duplicates
            )
            return StepOutcome(self.state, self.report.overall_accuracy, info)

        # Exploit: rebalance, then render whatever quota is now outstanding
        self.forest = rebalance_tree(self.forest, action.skill, action.deltas)
        from teachgym.forest import materialize_quota

        quota = materialize_quota(self.forest, self.produced)
        if not quota:
            self.state = SkillTreeState(self.forest, dict(self.report.per_skill))
            return StepOutcome(self.state, self.report.overall_accuracy, self._carry_info())

        result = execute_forest(self.engine, self.forest, self.iteration, self.produced)
        for datum in result.datums:
            prov = datum.provenance
            if prov.skill is not None and prov.subskill is not None:
                key = (prov.skill, prov.subskill)
                self.produced[key] = self.produced.get(key, 0) + 1
        info = self._train_eval(result)
        performance = self.student.training_performance(self.checkpoint, result.datums)
        self.forest = record_training_performance(self.forest, performance)
        self.state = SkillTreeState(self.forest, dict(self.report.per_skill))
        return StepOutcome(self.state, self.report.overall_accuracy, info)
