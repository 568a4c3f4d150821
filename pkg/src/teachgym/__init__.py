"""Teacher environments for iterative training-data generation agents."""

from teachgym.core import (
    Action,
    ComparisonMode,
    DataSpec,
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
    TrainingDatum,
    compare_answers,
)
from teachgym.envs import EnvironmentConfig, EnvVariant, TeacherEnvironment
from teachgym.forest import SkillForest, SkillTree, SubskillNode
from teachgym.student import SimulatedStudent, SimulatedStudentParams, StudentCheckpoint

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ComparisonMode",
    "DataSpec",
    "EnvVariant",
    "EnvironmentConfig",
    "EvaluatedPrediction",
    "Explore",
    "Exploit",
    "GenerateData",
    "OpenEndedState",
    "PerformanceReport",
    "SimulatedStudent",
    "SimulatedStudentParams",
    "SkillForest",
    "SkillListState",
    "SkillTree",
    "SkillTreeState",
    "State",
    "StudentCheckpoint",
    "SubskillNode",
    "TaskDomain",
    "TaskItem",
    "TeacherEnvironment",
    "TrainingDatum",
    "compare_answers",
]
