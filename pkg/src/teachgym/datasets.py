"""Builders for the simulated task domain.

A simulated dataset carries hidden skill/subskill tags and per-item latent
pass thresholds. Thresholds are a seeded shuffle of an evenly spaced grid
within each subskill, so measured accuracy tracks proficiency closely even
on small item counts.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from teachgym.core import TaskDomain, TaskItem
from teachgym.provider import largest_remainder_allocation


@dataclass(frozen=True)
class SubskillProfile:
    name: str
    difficulty_cycle: tuple[int, ...]


@dataclass(frozen=True)
class SkillProfile:
    name: str
    share: float
    subskills: tuple[SubskillProfile, ...]


def default_skill_profiles() -> tuple[SkillProfile, ...]:
    """Four skills with unequal frequency; every skill spans easy/mid/hard subskills."""
    shapes = (
        ("basics", (1, 2)),      # mean difficulty 1.5
        ("core", (3, 4)),        # mean difficulty 3.5
        ("challenge", (5,)),     # mean difficulty 5.0
    )
    names_shares = (("Algebra", 0.35), ("Geometry", 0.30), ("Counting", 0.20), ("Logic", 0.15))
    return tuple(
        SkillProfile(
            name,
            share,
            tuple(SubskillProfile(f"{name}::{tag}", cycle) for tag, cycle in shapes),
        )
        for name, share in names_shares
    )


def _even_split(total: int, parts: int) -> list[int]:
    """Near-even split where every part is even, so difficulty cycles balance."""
    counts = largest_remainder_allocation({str(i): 1.0 for i in range(parts)}, total)
    split = [counts[str(i)] for i in range(parts)]
    for i in range(parts - 1):
        if split[i] % 2 == 1:
            split[i] -= 1
            split[i + 1] += 1
    return split


def build_simulated_dataset(
    seed: int,
    n_items: int = 200,
    profiles: Sequence[SkillProfile] | None = None,
    id_prefix: str = "sim",
) -> list[TaskItem]:
    if profiles is None:
        profiles = default_skill_profiles()
    shares = {p.name: p.share for p in profiles}
    per_skill = largest_remainder_allocation(shares, n_items)

    rng = random.Random(f"{id_prefix}-{seed}")
    items: list[TaskItem] = []
    idx = 0
    for profile in profiles:
        split = _even_split(per_skill[profile.name], len(profile.subskills))
        for sub, count in zip(profile.subskills, split):
            thresholds = [(i + 0.5) / count for i in range(count)]
            rng.shuffle(thresholds)
            for j in range(count):
                difficulty = sub.difficulty_cycle[j % len(sub.difficulty_cycle)]
                threshold = thresholds[j]
                items.append(
                    TaskItem(
                        item_id=f"{id_prefix}-{seed}-{idx:04d}",
                        instruction=f"Simulated exercise {idx}: solve challenge variant {j + 1}.",
                        gold_answer=repr(threshold),
                        domain=TaskDomain.SIMULATED,
                        difficulty=difficulty,
                        true_skill=profile.name,
                        true_subskill=sub.name,
                        latent_pass_threshold=threshold,
                    )
                )
                idx += 1
    return items
