"""Episode orchestration: reset, loop, truncate, select the best checkpoint.

Every episode writes a self-contained directory: the config, both datasets,
an append-only trajectory, per-iteration generated data, state snapshots,
checkpoints, and the provider transcript. Two runs of the same config and
seed produce digest-identical trajectories, which `replay` verifies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from teachgym.config import ConfigError, EpisodeConfig, config_from_dict, dump_toml, load_config
from teachgym.core import (
    Exploit,
    TaskItem,
    TeachGymError,
    canonical_json,
    digest,
    load_dataset,
    read_jsonl,
    save_dataset,
    state_digest,
    write_jsonl,
)
from teachgym.datasets import build_simulated_dataset
from teachgym.engine import engine_for_domain
from teachgym.envs import TeacherEnvironment
from teachgym.forest import forest_is_full
from teachgym.policies import (
    ExternalPolicy,
    HandcraftedSkillTreePolicy,
    OpenEndedPolicy,
    RandomSkillTreePolicy,
    SkillListPolicy,
    SkillTreePolicyConfig,
    no_state_wrapper,
)
from teachgym.protocol import ExternalTrainerClient, HttpTransport, ProtocolStudent, SubprocessTransport
from teachgym.provider import (
    MockProvider,
    TranscriptLogger,
    TranscriptReplayProvider,
)
from teachgym.student import SimulatedStudent


class ReplayRequiresDeterministicBackends(TeachGymError):
    pass


@dataclass(frozen=True)
class TrajectoryRecord:
    iteration: int
    state_digest: str
    action: Mapping[str, Any]
    manifest: Mapping[str, int]
    checkpoint_id: str
    report: Mapping[str, Any]
    forward_accuracy: float | None
    wall_clock_s: float
    dropped: Sequence[Sequence[str]] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "state_digest": self.state_digest,
            "action": dict(self.action),
            "manifest": dict(self.manifest),
            "checkpoint_id": self.checkpoint_id,
            "report": dict(self.report),
            "forward_accuracy": self.forward_accuracy,
            "wall_clock_s": self.wall_clock_s,
            "dropped": [list(d) for d in self.dropped],
        }

    def digestable(self) -> dict[str, Any]:
        d = self.to_dict()
        d.pop("wall_clock_s")  # timing is the one legitimately run-varying field
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrajectoryRecord":
        return cls(
            iteration=d["iteration"],
            state_digest=d["state_digest"],
            action=d["action"],
            manifest=d["manifest"],
            checkpoint_id=d["checkpoint_id"],
            report=d["report"],
            forward_accuracy=d.get("forward_accuracy"),
            wall_clock_s=d.get("wall_clock_s", 0.0),
            dropped=tuple(tuple(x) for x in d.get("dropped", [])),
        )


def trajectory_digest(records: Sequence[TrajectoryRecord]) -> str:
    return digest([r.digestable() for r in records])


def select_best_checkpoint(accuracies: Sequence[float]) -> int:
    """Index of the maximum accuracy; the earliest wins ties."""
    if not accuracies:
        raise ValueError("no accuracies to select from")
    best = 0
    for i in range(1, len(accuracies)):
        if accuracies[i] > accuracies[best]:
            best = i
    return best


@dataclass
class EpisodeResult:
    status: str
    stop_reason: str
    episode_dir: Path
    trajectory: list[TrajectoryRecord] = field(default_factory=list)
    best_iteration: int = 0
    best_validation_accuracy: float = 0.0
    test_accuracy: float | None = None

    @property
    def trajectory_digest(self) -> str:
        return trajectory_digest(self.trajectory)


def _build_datasets(config: EpisodeConfig) -> tuple[list[TaskItem], list[TaskItem]]:
    ds = config.dataset
    if ds.kind == "simulated":
        validation = build_simulated_dataset(config.seed, ds.n_items, id_prefix="val")
        test = build_simulated_dataset(config.seed, ds.test_n_items, id_prefix="test")
        return validation, test
    if ds.kind == "files":
        return load_dataset(ds.validation_path), load_dataset(ds.test_path)
    raise ConfigError(f"unknown dataset kind {ds.kind!r}")


def _build_provider(config: EpisodeConfig, episode_dir: Path):
    p = config.provider
    if p.kind == "mock":
        transcript = TranscriptLogger(episode_dir / "transcript.jsonl")
        return MockProvider(config.seed, p.confusion_rate, transcript)
    if p.kind == "transcript":
        return TranscriptReplayProvider(p.transcript_path)
    if p.kind == "live":
        from teachgym.provider import LiveProvider

        transcript = TranscriptLogger(episode_dir / "transcript.jsonl")
        return LiveProvider(p.base_url, p.model, p.credential_env, transcript)
    raise ConfigError(f"unknown provider kind {p.kind!r}")


def _build_student(config: EpisodeConfig, validation_items: Sequence[TaskItem]):
    t = config.trainer
    if t.kind == "simulated":
        return SimulatedStudent(config.student, validation_items), None
    if t.kind == "external":
        if t.command:
            transport = SubprocessTransport(t.command)
        elif t.url:
            transport = HttpTransport(t.url)
        else:
            raise ConfigError("external trainer needs a command or a url")
        client = ExternalTrainerClient(transport, t.hyperparams)
        return ProtocolStudent(client), transport
    raise ConfigError(f"unknown trainer kind {t.kind!r}")


def _build_policy(config: EpisodeConfig, provider, validation_items: Sequence[TaskItem]):
    p = config.policy
    env = config.environment
    items_by_id = {i.item_id: i for i in validation_items}
    if p.kind == "open-ended":
        policy = OpenEndedPolicy(provider, env.data_budget, env.domain, items_by_id)
    elif p.kind == "skill-list":
        policy = SkillListPolicy(provider, env.data_budget, env.domain, items_by_id)
    elif p.kind == "handcrafted-skill-tree":
        caps = env.forest_caps
        if caps is None:
            raise ConfigError("handcrafted skill-tree policy needs forest caps")
        policy = HandcraftedSkillTreePolicy(
            SkillTreePolicyConfig(
                max_subskills=caps.max_subskills_per_tree,
                per_subskill_cap=caps.per_subskill_cap,
                per_action_cap=caps.per_action_cap,
                k_new=p.k_new,
            )
        )
    elif p.kind == "random-skill-tree":
        policy = RandomSkillTreePolicy(config.seed, p.k_new)
    elif p.kind == "external":
        if not p.command:
            raise ConfigError("external policy needs a command")
        policy = ExternalPolicy(p.command)
    else:
        raise ConfigError(f"unknown policy kind {p.kind!r}")

    if config.ablation.no_state:
        policy = no_state_wrapper(policy, config.seed, validation_items, k_new=p.k_new)
    return policy


def _snapshot(env: TeacherEnvironment, iteration: int, episode_dir: Path) -> None:
    snap: dict[str, Any] = {
        "iteration": iteration,
        "state_digest": state_digest(env.state),
        "report": env.report.to_dict(),
        "predictions": [
            [p.item_id, p.correct, p.assigned_skill] for p in env.last_predictions
        ],
    }
    if env.forest is not None:
        snap["forest"] = env.forest.to_dict()
    path = episode_dir / "snapshots" / f"iter_{iteration:04d}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(snap) + "\n", encoding="utf-8")


def _save_checkpoint(env: TeacherEnvironment, episode_dir: Path) -> None:
    ckpt = env.checkpoint
    path = episode_dir / "checkpoints" / f"{ckpt.checkpoint_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(ckpt.to_dict()) + "\n", encoding="utf-8")


def run_episode(config: EpisodeConfig, out_dir: Path | str) -> EpisodeResult:
    episode_dir = Path(out_dir)
    episode_dir.mkdir(parents=True, exist_ok=True)
    (episode_dir / "config.toml").write_text(dump_toml(config.raw or {}), encoding="utf-8")

    validation_items, test_items = _build_datasets(config)
    save_dataset(episode_dir / "datasets" / "validation.jsonl", validation_items)
    save_dataset(episode_dir / "datasets" / "test.jsonl", test_items)

    provider = _build_provider(config, episode_dir)
    student, transport = _build_student(config, validation_items)
    engine = engine_for_domain(
        config.environment.domain, provider, {i.item_id: i for i in validation_items}
    )
    env = TeacherEnvironment(
        config.environment,
        student,
        engine,
        provider,
        validation_items,
        data_fraction=config.ablation.data_fraction,
        epochs_multiplier=config.ablation.epochs_multiplier,
        subsample_seed=config.seed,
    )
    policy = _build_policy(config, provider, validation_items)

    trajectory_path = episode_dir / "trajectory.jsonl"
    trajectory_path.write_text("", encoding="utf-8")
    records: list[TrajectoryRecord] = []
    result = EpisodeResult(status="running", stop_reason="", episode_dir=episode_dir)

    try:
        state = env.reset()
        _snapshot(env, 0, episode_dir)
        _save_checkpoint(env, episode_dir)
        # candidates for best-checkpoint selection: (iteration, checkpoint id, accuracy)
        candidates = [(0, env.checkpoint.checkpoint_id, env.report.overall_accuracy)]
        best_so_far = env.report.overall_accuracy
        stale_training_iters = 0
        stop_reason = "max-iterations"

        for t in range(1, config.max_iterations + 1):
            started = time.monotonic()
            action = policy(state)

            if (
                isinstance(action, Exploit)
                and action.is_noop()
                and env.forest is not None
                and forest_is_full(env.forest)
            ):
                stop_reason = "policy-fixpoint"
                break

            outcome = env.step(action)
            state = outcome.state
            info = outcome.info

            record = TrajectoryRecord(
                iteration=t,
                state_digest=state_digest(state),
                action=action.to_dict(),
                manifest=dict(info.manifest),
                checkpoint_id=env.checkpoint.checkpoint_id,
                report=info.report.to_dict(),
                forward_accuracy=info.forward_accuracy,
                wall_clock_s=round(time.monotonic() - started, 6),
                dropped=info.dropped,
            )
            records.append(record)
            with trajectory_path.open("a", encoding="utf-8") as fh:
                fh.write(canonical_json(record.to_dict()) + "\n")

            if info.datums:
                write_jsonl(
                    episode_dir / "data" / f"iter_{t:04d}.jsonl",
                    (d.to_dict() for d in info.datums),
                )
            _snapshot(env, t, episode_dir)

            if info.trained:
                _save_checkpoint(env, episode_dir)
                candidates.append((t, env.checkpoint.checkpoint_id, outcome.reward))
                if outcome.reward > best_so_far:
                    best_so_far = outcome.reward
                    stale_training_iters = 0
                else:
                    stale_training_iters += 1
                if stale_training_iters >= config.saturation_patience:
                    stop_reason = "saturated"
                    break

        best = select_best_checkpoint([acc for (_, _, acc) in candidates])
        best_iteration, best_ckpt_id, best_acc = candidates[best]

        test_accuracy = None
        if test_items:
            best_checkpoint = _load_checkpoint(episode_dir, best_ckpt_id)
            _, test_report = student.evaluate(best_checkpoint, test_items, best_iteration)
            test_accuracy = test_report.overall_accuracy

        result.status = "completed"
        result.stop_reason = stop_reason
        result.best_iteration = best_iteration
        result.best_validation_accuracy = best_acc
        result.test_accuracy = test_accuracy
    except TeachGymError as exc:
        result.status = "aborted"
        result.stop_reason = f"error: {exc}"
    finally:
        result.trajectory = records
        summary = {
            "status": result.status,
            "stop_reason": result.stop_reason,
            "iterations": len(records),
            "best_iteration": result.best_iteration,
            "best_validation_accuracy": result.best_validation_accuracy,
            "test_accuracy": result.test_accuracy,
            "trajectory_digest": trajectory_digest(records),
        }
        (episode_dir / "summary.json").write_text(
            canonical_json(summary) + "\n", encoding="utf-8"
        )
        if transport is not None:
            transport.close()
    return result


def _load_checkpoint(episode_dir: Path, checkpoint_id: str):
    from teachgym.student import StudentCheckpoint

    path = episode_dir / "checkpoints" / f"{checkpoint_id}.json"
    return StudentCheckpoint.from_dict(read_jsonl(path)[0])


def load_trajectory(episode_dir: Path | str) -> list[TrajectoryRecord]:
    return [TrajectoryRecord.from_dict(d) for d in read_jsonl(Path(episode_dir) / "trajectory.jsonl")]


@dataclass(frozen=True)
class ReplayReport:
    match: bool
    detail: str
    recorded_digest: str
    replayed_digest: str


def replay(episode_dir: Path | str, workdir: Path | str | None = None) -> ReplayReport:
    """Re-run a recorded episode and compare trajectories record by record."""
    import tempfile

    episode_dir = Path(episode_dir)
    config = load_config(episode_dir / "config.toml")
    if config.provider.kind == "live":
        raise ReplayRequiresDeterministicBackends(
            "replay needs a mock or transcript provider, not a live endpoint"
        )
    if config.trainer.kind != "simulated":
        raise ReplayRequiresDeterministicBackends(
            "replay is only defined for the simulated trainer"
        )

    recorded = load_trajectory(episode_dir)
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="teachgym-replay-")
        target = Path(tmp.name) / "episode"
    else:
        target = Path(workdir)
    rerun = run_episode(config, target)

    detail = "trajectories identical"
    match = True
    if len(recorded) != len(rerun.trajectory):
        match = False
        detail = f"length mismatch: recorded {len(recorded)} vs replayed {len(rerun.trajectory)}"
    else:
        for old, new in zip(recorded, rerun.trajectory):
            if old.digestable() != new.digestable():
                match = False
                detail = f"first divergence at iteration {old.iteration}"
                break
    return ReplayReport(
        match=match,
        detail=detail,
        recorded_digest=trajectory_digest(recorded),
        replayed_digest=rerun.trajectory_digest,
    )


# ---------------------------------------------------------------------------
# Multi-seed sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    seed: int
    with_state_accuracy: float
    no_state_accuracy: float


def _arm_raw(raw: Mapping[str, Any], seed: int, no_state: bool) -> dict[str, Any]:
    out = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in raw.items()}
    out["episode"] = {**out.get("episode", {}), "seed": seed}
    out["ablation"] = {**out.get("ablation", {}), "no_state": no_state}
    return out


def _run_sweep_arm(raw: dict[str, Any], seed: int, arm: str, out_dir: str) -> tuple[int, str, float]:
    no_state = arm == "no_state"
    result = run_episode(config_from_dict(_arm_raw(raw, seed, no_state)), out_dir)
    if result.status != "completed":
        raise TeachGymError(f"{arm} episode for seed {seed} {result.stop_reason}")
    return seed, arm, result.best_validation_accuracy


def run_state_ablation_sweep(
    config: EpisodeConfig,
    seeds: Sequence[int],
    out_dir: Path | str,
    workers: int = 1,
) -> list[SweepRow]:
    """Run matched with-state / no-state episodes per seed.

    Episodes are independent (disjoint directories), so with ``workers`` > 1
    they run in parallel worker processes.
    """
    out_dir = Path(out_dir)
    jobs = [
        (dict(config.raw), seed, arm, str(out_dir / f"seed_{seed:03d}" / arm))
        for seed in seeds
        for arm in ("with_state", "no_state")
    ]
    results: dict[tuple[int, str], float] = {}
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, arm, acc in pool.map(_run_sweep_arm, *zip(*jobs)):
                results[(seed, arm)] = acc
    else:
        for job in jobs:
            seed, arm, acc = _run_sweep_arm(*job)
            results[(seed, arm)] = acc
    return [
        SweepRow(seed, results[(seed, "with_state")], results[(seed, "no_state")])
        for seed in seeds
    ]


def render_sweep_table(rows: Sequence[SweepRow]) -> str:
    lines = ["seed  with-state  no-state  margin"]
    for r in rows:
        lines.append(
            f"{r.seed:<5d} {r.with_state_accuracy:>10.4f} {r.no_state_accuracy:>9.4f} "
            f"{r.with_state_accuracy - r.no_state_accuracy:>7.4f}"
        )
    n = len(rows)
    mean_ws = sum(r.with_state_accuracy for r in rows) / n
    mean_ns = sum(r.no_state_accuracy for r in rows) / n
    lines.append(
        f"mean  {mean_ws:>10.4f} {mean_ns:>9.4f} {mean_ws - mean_ns:>7.4f}"
    )
    return "\n".join(lines)
