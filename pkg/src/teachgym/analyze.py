"""Post-episode analysis: before/after tables and gain curves, as CSV plus text.

All percentages are fixed to two decimals and deltas are computed in decimal
arithmetic, so a reported 44.18 -> 47.90 move is exactly +3.72.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Any, Mapping, Sequence

from teachgym.core import TaskItem, load_dataset
from teachgym.runner import load_trajectory

_TWO_PLACES = Decimal("0.01")

DIFFICULTY_BIN_EDGES = ((1, 2), (2, 3), (3, 4), (4, 5), (5, 6))


def pct(value: float | Decimal) -> Decimal:
    """Fraction or percent input to a 2-decimal percent Decimal."""
    if isinstance(value, Decimal):
        return value.quantize(_TWO_PLACES, rounding=ROUND_HALF_EVEN)
    return Decimal(str(value * 100)).quantize(_TWO_PLACES, rounding=ROUND_HALF_EVEN)


def difficulty_bin_label(mean_difficulty: float) -> str:
    for lo, hi in DIFFICULTY_BIN_EDGES:
        if lo <= mean_difficulty < hi:
            return f"{lo}-{hi}" if hi <= 5 else "5+"
    return "5+" if mean_difficulty >= 5 else "1-2"


@dataclass(frozen=True)
class BeforeAfterRow:
    name: str
    before: Decimal
    after: Decimal

    @property
    def delta(self) -> Decimal:
        return self.after - self.before


@dataclass
class AnalysisBundle:
    overall: BeforeAfterRow
    skill_rows: list[BeforeAfterRow]
    difficulty_rows: list[dict[str, Any]]
    rarity_rows: list[dict[str, Any]]
    iteration_rows: list[dict[str, Any]]
    forward_rows: list[dict[str, Any]]
    best_iteration: int

    def summary_text(self) -> str:
        lines = [
            f"best iteration: {self.best_iteration}",
            f"overall: {self.overall.before} -> {self.overall.after} ({self.overall.delta:+})",
            "",
            "per-skill accuracy (before -> after, delta):",
        ]
        for row in self.skill_rows:
            lines.append(f"  {row.name}: {row.before} -> {row.after} ({row.delta:+})")
        lines.append("")
        lines.append("gain by difficulty bin (subskill mean difficulty):")
        for row in self.difficulty_rows:
            lines.append(f"  {row['bin']}: {row['gain']:+} over {row['items']} items")
        lines.append("")
        lines.append("gain by skill rarity (1 - frequency share):")
        for row in self.rarity_rows:
            lines.append(f"  rarity {row['rarity']:.3f}: {row['gain']:+} over {row['items']} items")
        return "\n".join(lines)


def load_before_after_fixture(path: Path | str) -> list[BeforeAfterRow]:
    """Parse an externally reported before/after table with exact decimals."""
    with Path(path).open("r", encoding="utf-8") as fh:
        data = json.load(fh, parse_float=Decimal, parse_int=Decimal)
    rows = []
    for entry in data["rows"]:
        rows.append(
            BeforeAfterRow(
                name=str(entry["name"]),
                before=pct(Decimal(entry["before"])),
                after=pct(Decimal(entry["after"])),
            )
        )
    return rows


def _load_snapshot(episode_dir: Path, iteration: int) -> dict[str, Any]:
    path = episode_dir / "snapshots" / f"iter_{iteration:04d}.json"
    return json.loads(path.read_text(encoding="utf-8"))


def _correctness(snapshot: Mapping[str, Any]) -> dict[str, bool]:
    return {item_id: bool(correct) for item_id, correct, _ in snapshot["predictions"]}


def _grouping(items: Sequence[TaskItem], snapshot: Mapping[str, Any]) -> dict[str, tuple[str, str]]:
    """item_id -> (skill group, subskill group); hidden tags win, else assigned skill."""
    assigned = {item_id: skill for item_id, _, skill in snapshot["predictions"]}
    groups = {}
    for item in items:
        skill = item.true_skill or assigned.get(item.item_id) or "Uncategorized"
        subskill = item.true_subskill or skill
        groups[item.item_id] = (skill, subskill)
    return groups


def analyze(episode_dir: Path | str, out_dir: Path | str | None = None) -> AnalysisBundle:
    """Build the analysis bundle for one completed episode directory."""
    episode_dir = Path(episode_dir)
    summary = json.loads((episode_dir / "summary.json").read_text(encoding="utf-8"))
    best_iteration = int(summary.get("best_iteration", 0))
    trajectory = load_trajectory(episode_dir)
    items = load_dataset(episode_dir / "datasets" / "validation.jsonl")

    before_snap = _load_snapshot(episode_dir, 0)
    after_snap = _load_snapshot(episode_dir, best_iteration)
    before = _correctness(before_snap)
    after = _correctness(after_snap)
    groups = _grouping(items, before_snap)

    overall = BeforeAfterRow(
        "overall",
        pct(before_snap["report"]["overall_accuracy"]),
        pct(after_snap["report"]["overall_accuracy"]),
    )

    # per-skill table from the reports (skills as assigned during the episode)
    skill_rows = []
    before_skills = before_snap["report"]["per_skill"]
    after_skills = after_snap["report"]["per_skill"]
    for skill in sorted(set(before_skills) | set(after_skills)):
        skill_rows.append(
            BeforeAfterRow(
                skill,
                pct(before_skills.get(skill, 0.0)),
                pct(after_skills.get(skill, 0.0)),
            )
        )

    # difficulty curve: pool items by the unit-width bin of their subskill's mean difficulty
    sub_items: dict[str, list[TaskItem]] = {}
    for item in items:
        sub_items.setdefault(groups[item.item_id][1], []).append(item)
    bin_items: dict[str, list[TaskItem]] = {}
    for sub, members in sub_items.items():
        difficulties = [i.difficulty for i in members if i.difficulty is not None]
        if not difficulties:
            continue
        label = difficulty_bin_label(sum(difficulties) / len(difficulties))
        bin_items.setdefault(label, []).extend(members)
    difficulty_rows = []
    for label in sorted(bin_items):
        members = bin_items[label]
        gain = _pooled_gain(members, before, after)
        difficulty_rows.append({"bin": label, "gain": gain, "items": len(members)})

    # rarity curve: pool items by the rarity of their skill group
    skill_items: dict[str, list[TaskItem]] = {}
    for item in items:
        skill_items.setdefault(groups[item.item_id][0], []).append(item)
    total = len(items)
    rarity_items: dict[float, list[TaskItem]] = {}
    for skill, members in skill_items.items():
        rarity = 1.0 - len(members) / total
        rarity_items.setdefault(round(rarity, 6), []).extend(members)
    rarity_rows = []
    for rarity in sorted(rarity_items):
        members = rarity_items[rarity]
        gain = _pooled_gain(members, before, after)
        rarity_rows.append({"rarity": rarity, "gain": gain, "items": len(members)})

    iteration_rows = [
        {
            "iteration": 0,
            "accuracy": pct(before_snap["report"]["overall_accuracy"]),
            "trained": False,
        }
    ]
    forward_rows = []
    for record in trajectory:
        iteration_rows.append(
            {
                "iteration": record.iteration,
                "accuracy": pct(record.report["overall_accuracy"]),
                "trained": bool(record.manifest),
            }
        )
        if record.forward_accuracy is not None:
            forward_rows.append(
                {"iteration": record.iteration, "forward_accuracy": pct(record.forward_accuracy)}
            )

    bundle = AnalysisBundle(
        overall=overall,
        skill_rows=skill_rows,
        difficulty_rows=difficulty_rows,
        rarity_rows=rarity_rows,
        iteration_rows=iteration_rows,
        forward_rows=forward_rows,
        best_iteration=best_iteration,
    )
    if out_dir is not None:
        write_bundle(bundle, Path(out_dir))
    return bundle


def _pooled_gain(items: Sequence[TaskItem], before: Mapping[str, bool], after: Mapping[str, bool]) -> Decimal:
    n = len(items)
    before_acc = sum(1 for i in items if before.get(i.item_id)) / n
    after_acc = sum(1 for i in items if after.get(i.item_id)) / n
    return pct(after_acc) - pct(before_acc)


def write_bundle(bundle: AnalysisBundle, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)

    def dump(name: str, header: list[str], rows: list[list[Any]]) -> None:
        with (out_dir / name).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    dump(
        "per_skill.csv",
        ["skill", "before", "after", "delta"],
        [[r.name, str(r.before), str(r.after), str(r.delta)] for r in bundle.skill_rows],
    )
    dump(
        "difficulty_gain.csv",
        ["bin", "gain", "items"],
        [[r["bin"], str(r["gain"]), r["items"]] for r in bundle.difficulty_rows],
    )
    dump(
        "rarity_gain.csv",
        ["rarity", "gain", "items"],
        [[f"{r['rarity']:.6f}", str(r["gain"]), r["items"]] for r in bundle.rarity_rows],
    )
    dump(
        "accuracy_per_iteration.csv",
        ["iteration", "accuracy", "trained"],
        [[r["iteration"], str(r["accuracy"]), r["trained"]] for r in bundle.iteration_rows],
    )
    dump(
        "forward_accuracy.csv",
        ["iteration", "forward_accuracy"],
        [[r["iteration"], str(r["forward_accuracy"])] for r in bundle.forward_rows],
    )
    (out_dir / "summary.txt").write_text(bundle.summary_text() + "\n", encoding="utf-8")
