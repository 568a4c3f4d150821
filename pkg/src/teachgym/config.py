"""Episode configuration: dataclasses plus TOML loading and dotted overrides."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from teachgym.core import TaskDomain, TeachGymError
from teachgym.envs import EnvironmentConfig, EnvVariant, ForestCapsConfig
from teachgym.student import SimulatedStudentParams


class ConfigError(TeachGymError):
    pass


@dataclass(frozen=True)
class AblationConfig:
    no_state: bool = False
    data_fraction: float = 1.0
    epochs_multiplier: float = 1.0


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "simulated"  # or "files"
    n_items: int = 200
    test_n_items: int = 200
    validation_path: str = ""
    test_path: str = ""


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "mock"  # "live" | "transcript"
    confusion_rate: float = 0.0
    base_url: str = ""
    model: str = ""
    credential_env: str = "TEACHGYM_API_KEY"
    transcript_path: str = ""


@dataclass(frozen=True)
class TrainerConfig:
    kind: str = "simulated"  # or "external"
    command: tuple[str, ...] = ()
    url: str = ""
    hyperparams: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "handcrafted-skill-tree"
    k_new: int = 2
    command: tuple[str, ...] = ()


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int = 0
    max_iterations: int = 30
    saturation_patience: int = 3
    environment: EnvironmentConfig = field(
        default_factory=lambda: EnvironmentConfig(
            variant=EnvVariant.SKILL_TREE,
            domain=TaskDomain.SIMULATED,
            forest_caps=ForestCapsConfig(),
        )
    )
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    student: SimulatedStudentParams = field(default_factory=SimulatedStudentParams)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    raw: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.saturation_patience < 1:
            raise ConfigError("saturation_patience must be >= 1")


def _pick(d: Mapping[str, Any], *keys: str) -> dict[str, Any]:
    return {k: d[k] for k in keys if k in d}


def config_from_dict(raw: Mapping[str, Any]) -> EpisodeConfig:
    episode = raw.get("episode", {})
    env_raw = dict(raw.get("environment", {}))
    forest_raw = env_raw.pop("forest", None)
    variant = EnvVariant(env_raw.get("variant", "skill-tree"))

    caps = None
    if variant is EnvVariant.SKILL_TREE:
        caps = ForestCapsConfig(**_pick(
            forest_raw or {}, "per_action_cap", "per_subskill_cap", "max_subskills_per_tree"
        ))

    environment = EnvironmentConfig(
        variant=variant,
        domain=TaskDomain(env_raw.get("domain", "simulated")),
        data_budget=env_raw.get("data_budget", 500),
        validation_ref=env_raw.get("validation_ref", ""),
        test_ref=env_raw.get("test_ref", ""),
        skill_source=env_raw.get("skill_source", "discovered"),
        user_skills=tuple(env_raw.get("user_skills", [])),
        max_categories=env_raw.get("max_categories", 15),
        forest_caps=caps,
    )

    trainer_raw = dict(raw.get("trainer", {}))
    trainer = TrainerConfig(
        kind=trainer_raw.get("kind", "simulated"),
        command=tuple(trainer_raw.get("command", [])),
        url=trainer_raw.get("url", ""),
        hyperparams=dict(trainer_raw.get("hyperparams", {})),
    )

    policy_raw = dict(raw.get("policy", {}))
    policy = PolicyConfig(
        kind=policy_raw.get("kind", "handcrafted-skill-tree"),
        k_new=policy_raw.get("k_new", 2),
        command=tuple(policy_raw.get("command", [])),
    )

    return EpisodeConfig(
        seed=episode.get("seed", 0),
        max_iterations=episode.get("max_iterations", 30),
        saturation_patience=episode.get("saturation_patience", 3),
        environment=environment,
        dataset=DatasetConfig(**_pick(
            raw.get("dataset", {}),
            "kind", "n_items", "test_n_items", "validation_path", "test_path",
        )),
        provider=ProviderConfig(**_pick(
            raw.get("provider", {}),
            "kind", "confusion_rate", "base_url", "model", "credential_env", "transcript_path",
        )),
        student=SimulatedStudentParams(**_pick(
            raw.get("student", {}),
            "base_proficiency", "ceiling", "learning_rate", "difficulty_width",
            "difficulty_peak", "rarity_exponent", "epoch_saturation", "seed",
        )),
        trainer=trainer,
        policy=policy,
        ablation=AblationConfig(**_pick(
            raw.get("ablation", {}), "no_state", "data_fraction", "epochs_multiplier"
        )),
        raw=dict(raw),
    )


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``section.key=value`` overrides; values parse as TOML literals."""
    out = dict(raw)
    for entry in overrides:
        if "=" not in entry:
            raise ConfigError(f"override {entry!r} is not of the form path=value")
        path, value = entry.split("=", 1)
        try:
            parsed = tomllib.loads(f"v = {value}")["v"]
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse override value {value!r}: {exc}") from exc
        keys = path.strip().split(".")
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-table value")
        node[keys[-1]] = parsed
    return out


def load_config(path: Path | str, overrides: list[str] | None = None) -> EpisodeConfig:
    with Path(path).open("rb") as fh:
        raw = tomllib.load(fh)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return config_from_dict(raw)


def _toml_value(value: Any) -> str:
    import json as _json

    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return _json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__} to TOML")


def dump_toml(raw: Mapping[str, Any], prefix: str = "") -> str:
    """Minimal TOML writer for the nested-table configs this package uses."""
    scalars, tables = [], []
    for key, value in raw.items():
        if isinstance(value, Mapping):
            tables.append((key, value))
        else:
            scalars.append(f"{key} = {_toml_value(value)}")
    lines = list(scalars)
    for key, value in tables:
        name = f"{prefix}{key}"
        lines.append(f"\n[{name}]")
        lines.append(dump_toml(value, prefix=f"{name}."))
    return "\n".join(lines).strip() + "\n"
