from __future__ import annotations

import json

import pytest

from teachgym.core import DataSpec, TaskDomain
from teachgym.datasets import build_simulated_dataset
from teachgym.engine import (
    CodeEngine,
    EngineDegradedError,
    MathEngine,
    SimulatedEngine,
    StubImagePort,
    VqaEngine,
    engine_for_domain,
    execute_forest,
    execute_plan,
)
from teachgym.forest import SkillForest, SkillTree, SubskillNode
from teachgym.provider import MockProvider, StructuredParseFailure, TranscriptLogger


def spec(domain: TaskDomain, skill=None, subskill=None, text="make one practice item", hints=None):
    return DataSpec(text, domain, skill, subskill, hints or {})


def sim_specs(n: int):
    return [
        spec(TaskDomain.SIMULATED, "Algebra", "Algebra::core", f"practice item {i}")
        for i in range(n)
    ]


def test_execute_plan_renders_one_datum_per_spec(mock_provider):
    engine = SimulatedEngine(mock_provider)
    result = execute_plan(engine, sim_specs(7), iteration=2)
    assert len(result.datums) == 7
    assert result.dropped == ()
    assert all(d.provenance.iteration == 2 for d in result.datums)
    assert all(d.provenance.skill == "Algebra" for d in result.datums)


def test_simulated_datum_embeds_skill_tags(mock_provider):
    engine = SimulatedEngine(mock_provider)
    [datum] = execute_plan(engine, sim_specs(1), 1).datums
    assert "skill=Algebra" in datum.response
    assert "subskill=Algebra::core" in datum.response


def test_simulated_engine_resolves_anchor_hints(mock_provider):
    items = build_simulated_dataset(0, 20, id_prefix="val")
    engine = SimulatedEngine(mock_provider, {i.item_id: i for i in items})
    anchored = spec(
        TaskDomain.SIMULATED, text="target the observed weakness",
        hints={"anchor_item_id": items[0].item_id},
    )
    [datum] = execute_plan(engine, [anchored], 1).datums
    assert datum.provenance.skill == items[0].true_skill
    assert datum.provenance.subskill == items[0].true_subskill


def test_mock_engine_is_digest_stable(mock_provider):
    engine = SimulatedEngine(mock_provider)
    a = execute_plan(engine, sim_specs(3), 1).datums
    b = execute_plan(SimulatedEngine(MockProvider(seed=0)), sim_specs(3), 1).datums
    assert [d.digest() for d in a] == [d.digest() for d in b]


def test_execute_plan_rejects_mixed_domains(mock_provider):
    engine = SimulatedEngine(mock_provider)
    mixed = sim_specs(1) + [spec(TaskDomain.MATH)]
    with pytest.raises(ValueError):
        execute_plan(engine, mixed, 1)
    with pytest.raises(ValueError):
        execute_plan(engine, [], 1)


def test_math_datum_has_steps_and_final_answer(mock_provider):
    engine = MathEngine(mock_provider)
    [datum] = execute_plan(engine, [spec(TaskDomain.MATH, "Algebra")], 1).datums
    assert "Step 1" in datum.response
    assert "Final answer:" in datum.response


def test_vqa_media_ref_is_content_addressed(mock_provider):
    engine = VqaEngine(mock_provider, StubImagePort())
    s = spec(TaskDomain.VQA, "Material Identification")
    [a] = execute_plan(engine, [s], 1).datums
    [b] = execute_plan(engine, [s], 1).datums
    assert a.media_ref == b.media_ref  # same description digests to the same handle
    assert a.media_ref.startswith("img-")
    assert a.response in ("yes", "no")


def test_code_datum_needs_two_calls_and_embeds_starter_code(tmp_path):
    transcript = tmp_path / "t.jsonl"
    provider = MockProvider(seed=0, transcript=TranscriptLogger(transcript))
    engine = CodeEngine(provider)
    [datum] = execute_plan(engine, [spec(TaskDomain.CODE, "Recursion")], 1).datums
    assert "```python" in datum.instruction
    assert "def solve" in datum.response
    lines = transcript.read_text().splitlines()
    assert len(lines) == 2  # problem call + solution call
    templates = [json.loads(l)["template_id"] for l in lines]
    assert templates == ["datagen_code_problem", "datagen_code_solution"]


class FlakyProvider(MockProvider):
    """Fails the simulated render for specs whose instruction says so."""

    def complete(self, request):
        if request.template_id == "datagen_simulated" and "poison" in request.variables["instruction"]:
            raise StructuredParseFailure("unparseable", raw_text="?")
        return super().complete(request)


def test_failed_renders_drop_and_report():
    engine = SimulatedEngine(FlakyProvider())
    specs = sim_specs(5) + [spec(TaskDomain.SIMULATED, "A", "a", "poison pill")]
    result = execute_plan(engine, specs, 1)
    assert len(result.datums) == 5
    assert len(result.dropped) == 1
    assert result.dropped[0][0] == specs[-1].digest()


def test_majority_failures_degrade_the_engine():
    engine = SimulatedEngine(FlakyProvider())
    specs = sim_specs(2) + [
        spec(TaskDomain.SIMULATED, "A", "a", f"poison {i}") for i in range(3)
    ]
    with pytest.raises(EngineDegradedError):
        execute_plan(engine, specs, 1)


def test_image_port_failure_drops_the_spec(mock_provider):
    class BrokenPort:
        def synthesize(self, description: str) -> str:
            raise RuntimeError("no image backend")

    engine = VqaEngine(mock_provider, BrokenPort())
    ok = spec(TaskDomain.VQA, "A")
    with pytest.raises(EngineDegradedError):
        execute_plan(engine, [ok], 1)


# ---------------------------------------------------------------------------
# forest-driven rendering
# ---------------------------------------------------------------------------

def quota_forest(allocs: dict[str, dict[str, int]]) -> SkillForest:
    return SkillForest(
        tuple(
            SkillTree(skill, tuple(SubskillNode(s, a) for s, a in subs.items()))
            for skill, subs in allocs.items()
        )
    )


def test_execute_forest_fills_each_quota_entry(mock_provider):
    engine = SimulatedEngine(mock_provider)
    forest = quota_forest({"A": {"a1": 3}})
    result = execute_forest(engine, forest, 1)
    assert len(result.datums) == 3
    assert all(d.provenance.skill == "A" and d.provenance.subskill == "a1" for d in result.datums)


def test_execute_forest_empty_quota_rejected(mock_provider):
    engine = SimulatedEngine(mock_provider)
    forest = quota_forest({"A": {"a1": 40}})
    with pytest.raises(ValueError):
        execute_forest(engine, forest, 1, produced={("A", "a1"): 40})


def test_execute_forest_group_sizes_match_quota(mock_provider):
    engine = SimulatedEngine(mock_provider)
    forest = quota_forest({"T": {"x": 10, "y": 20}, "U": {"z": 5}})
    result = execute_forest(engine, forest, 1)
    assert len(result.datums) == 35
    by_group = result.manifest()
    assert by_group == {"T/x": 10, "T/y": 20, "U/z": 5}


def test_engine_for_domain_dispatch(mock_provider):
    assert isinstance(engine_for_domain(TaskDomain.SIMULATED, mock_provider), SimulatedEngine)
    assert isinstance(engine_for_domain(TaskDomain.MATH, mock_provider), MathEngine)
    assert isinstance(engine_for_domain(TaskDomain.VQA, mock_provider), VqaEngine)
    assert isinstance(engine_for_domain(TaskDomain.CODE, mock_provider), CodeEngine)
