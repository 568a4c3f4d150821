"""Data generation engines: turn plans or forest quotas into training datums.

One engine per task domain, all speaking to the model through the provider
port. Renders that fail are dropped and reported; an iteration aborts only
when more than half of its specs fail.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from teachgym.core import (
    DataSpec,
    Provenance,
    TaskDomain,
    TaskItem,
    TeachGymError,
    TrainingDatum,
)
from teachgym.forest import SkillForest, materialize_quota
from teachgym.provider import ChatProvider, CompletionRequest, ProviderError


class EngineDegradedError(TeachGymError):
    pass


class RenderFailure(TeachGymError):
    pass


class ImageSynthesisPort(Protocol):
    def synthesize(self, description: str) -> str: ...


class StubImagePort:
    """Content-addressed stand-in for a text-to-image backend."""

    def synthesize(self, description: str) -> str:
        return "img-" + hashlib.sha256(description.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class EngineResult:
    datums: tuple[TrainingDatum, ...]
    dropped: tuple[tuple[str, str], ...] = ()  # (spec digest, reason)

    def manifest(self) -> dict[str, int]:
        """Datum counts keyed by 'skill/subskill'."""
        counts: dict[str, int] = {}
        for d in self.datums:
            key = f"{d.provenance.skill or '-'}/{d.provenance.subskill or '-'}"
            counts[key] = counts.get(key, 0) + 1
        return counts


def _spec_variables(spec: DataSpec) -> dict[str, object]:
    return {
        "instruction": spec.instruction,
        "target_skill": spec.target_skill,
        "target_subskill": spec.target_subskill,
        **{k: v for k, v in spec.rendering_hints.items()},
    }


class DataEngine:
    """Base renderer; subclasses implement one domain."""

    domain: TaskDomain

    def __init__(self, provider: ChatProvider):
        self.provider = provider

    def render(self, spec: DataSpec, iteration: int) -> TrainingDatum:
        raise NotImplementedError

    def _provenance(self, spec: DataSpec, iteration: int) -> Provenance:
        return Provenance(iteration, spec.target_skill, spec.target_subskill, spec.digest())


class SimulatedEngine(DataEngine):
    """Renders simulated-domain datums; resolves anchor hints against the dataset.

    A spec without explicit skill tags but anchored at a known item inherits
    that item's hidden tags, modeling an engine that faithfully produces data
    for the weakness the plan pointed at.
    """

    domain = TaskDomain.SIMULATED

    def __init__(self, provider: ChatProvider, items_by_id: Mapping[str, TaskItem] | None = None):
        super().__init__(provider)
        self.items_by_id = items_by_id or {}

    def render(self, spec: DataSpec, iteration: int) -> TrainingDatum:
        skill, subskill = spec.target_skill, spec.target_subskill
        if skill is None:
            anchor = spec.rendering_hints.get("anchor_item_id")
            item = self.items_by_id.get(anchor) if anchor else None
            if item is not None:
                skill, subskill = item.true_skill, item.true_subskill
        payload = self.provider.complete(
            CompletionRequest(
                "datagen_simulated",
                {**_spec_variables(spec), "target_skill": skill, "target_subskill": subskill},
                "simulated_datum",
            )
        ).payload
        return TrainingDatum(
            instruction=payload["instruction"],
            response=payload["response"],
            provenance=Provenance(iteration, skill, subskill, spec.digest()),
        )


class MathEngine(DataEngine):
    domain = TaskDomain.MATH

    def render(self, spec: DataSpec, iteration: int) -> TrainingDatum:
        payload = self.provider.complete(
            CompletionRequest("datagen_math", _spec_variables(spec), "math_datum")
        ).payload
        response = f"{payload['solution_steps']}\nFinal answer: {payload['final_answer']}"
        return TrainingDatum(
            instruction=payload["question"],
            response=response,
            provenance=self._provenance(spec, iteration),
        )


class VqaEngine(DataEngine):
    domain = TaskDomain.VQA

    def __init__(self, provider: ChatProvider, image_port: ImageSynthesisPort | None = None):
        super().__init__(provider)
        self.image_port = image_port or StubImagePort()

    def render(self, spec: DataSpec, iteration: int) -> TrainingDatum:
        description = self.provider.complete(
            CompletionRequest("datagen_vqa_description", _spec_variables(spec), "vqa_description")
        ).payload["description"]
        try:
            media_ref = self.image_port.synthesize(description)
        except Exception as exc:  # image backend failures drop just this spec
            raise RenderFailure(f"image synthesis failed: {exc}") from exc
        qa = self.provider.complete(
            CompletionRequest(
                "datagen_vqa_question",
                {**_spec_variables(spec), "description": description},
                "vqa_question",
            )
        ).payload
        return TrainingDatum(
            instruction=qa["question"],
            response=qa["answer"],
            media_ref=media_ref,
            provenance=self._provenance(spec, iteration),
        )


class CodeEngine(DataEngine):
    domain = TaskDomain.CODE

    def render(self, spec: DataSpec, iteration: int) -> TrainingDatum:
        problem = self.provider.complete(
            CompletionRequest("datagen_code_problem", _spec_variables(spec), "code_problem")
        ).payload
        solution = self.provider.complete(
            CompletionRequest(
                "datagen_code_solution",
                {
                    **_spec_variables(spec),
                    "problem": problem["problem"],
                    "starter_code": problem["starter_code"],
                },
                "code_solution",
            )
        ).payload
        instruction = (
            f"{problem['problem']}\n\nStarter code:\n```python\n{problem['starter_code']}\n```"
        )
        return TrainingDatum(
            instruction=instruction,
            response=solution["solution"],
            provenance=self._provenance(spec, iteration),
        )


def engine_for_domain(
    domain: TaskDomain,
    provider: ChatProvider,
    items_by_id: Mapping[str, TaskItem] | None = None,
    image_port: ImageSynthesisPort | None = None,
) -> DataEngine:
    if domain is TaskDomain.SIMULATED:
        return SimulatedEngine(provider, items_by_id)
    if domain is TaskDomain.MATH:
        return MathEngine(provider)
    if domain is TaskDomain.VQA:
        return VqaEngine(provider, image_port)
    if domain is TaskDomain.CODE:
        return CodeEngine(provider)
    raise ValueError(f"no engine for domain {domain}")


def execute_plan(engine: DataEngine, specs: Sequence[DataSpec], iteration: int) -> EngineResult:
    """Render one datum per spec, in order; failed renders are dropped and reported."""
    if not specs:
        raise ValueError("execute_plan needs a non-empty spec list")
    domains = {s.domain for s in specs}
    if domains != {engine.domain}:
        raise ValueError(f"specs span domains {sorted(d.value for d in domains)}, "
                         f"engine handles {engine.domain.value}")
    datums: list[TrainingDatum] = []
    dropped: list[tuple[str, str]] = []
    for spec in specs:
        try:
            datums.append(engine.render(spec, iteration))
        except (ProviderError, RenderFailure) as exc:
            dropped.append((spec.digest(), str(exc)))
    if len(dropped) * 2 > len(specs):
        raise EngineDegradedError(
            f"{len(dropped)}/{len(specs)} specs failed to render; aborting iteration"
        )
    return EngineResult(tuple(datums), tuple(dropped))


def execute_forest(
    engine: DataEngine,
    forest: SkillForest,
    iteration: int,
    produced: Mapping[tuple[str, str], int] | None = None,
) -> EngineResult:
    """Render exactly the outstanding quota for every subskill of the forest."""
    quota = materialize_quota(forest, produced)
    if not quota:
        raise ValueError("materialized quota is empty; nothing to render")
    specs: list[DataSpec] = []
    for skill, subskill, count in quota:
        for i in range(count):
            specs.append(
                DataSpec(
                    instruction=(
                        f"Practice task {i + 1} of {count} for {skill} / {subskill}"
                    ),
                    domain=engine.domain,
                    target_skill=skill,
                    target_subskill=subskill,
                )
            )
    return execute_plan(engine, specs, iteration)
