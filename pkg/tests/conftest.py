from __future__ import annotations

import pytest

from teachgym.core import TaskDomain, TaskItem
from teachgym.datasets import build_simulated_dataset
from teachgym.provider import MockProvider


@pytest.fixture()
def mock_provider() -> MockProvider:
    return MockProvider(seed=0)


@pytest.fixture(scope="session")
def sim_items() -> list[TaskItem]:
    return build_simulated_dataset(0, 200, id_prefix="val")


def make_item(
    item_id: str,
    gold: str = "yes",
    domain: TaskDomain = TaskDomain.MATH,
    difficulty: int | None = 3,
    **kwargs,
) -> TaskItem:
    return TaskItem(
        item_id=item_id,
        instruction=f"question {item_id}",
        gold_answer=gold,
        domain=domain,
        difficulty=difficulty,
        **kwargs,
    )
