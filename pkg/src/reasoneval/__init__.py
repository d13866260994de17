"""Fine-grained evaluation toolkit for math-reasoning models.

The library covers the augmented-problem data model (plans, knowledge,
subproblem chains), prompt rendering for five evaluation modes, rule-based
grading with exact-rational answer equivalence, Avg@N / pass@k / SSR
metrics, a group-relative policy-objective kernel, Stage-2 hard-problem
curriculum building, and an orchestrator that drives any OpenAI-style
chat-completion endpoint. See the ``reasoneval`` CLI for the same
capabilities from the command line.
"""

__version__ = "0.1.0"

from .dataset import (
    AugmentedProblem,
    DatasetError,
    KnowledgeItem,
    PlanSkeleton,
    Subproblem,
    dump_dataset,
    load_dataset,
    stratify,
)
from .grading import GradeResult, answers_equal, check_format, extract_answer, grade
from .grpo import (
    GroupScores,
    GrpoConfig,
    TokenTrajectory,
    group_advantages,
    grpo_objective,
    token_ratio_term,
)
from .metrics import ProblemOutcome, avg_at_n, mean_ssr, mode_delta, pass_at_k, ssr
from .curriculum import AugVariant, build_aug_set, chunk_solution, filter_hard
from .runner import CompletionRecord, RunManifest, resume, run
from .templates import PromptMode, SubproblemContext, TemplateError, render

__all__ = [
    "AugmentedProblem",
    "AugVariant",
    "CompletionRecord",
    "DatasetError",
    "GradeResult",
    "GroupScores",
    "GrpoConfig",
    "KnowledgeItem",
    "PlanSkeleton",
    "ProblemOutcome",
    "PromptMode",
    "RunManifest",
    "SubproblemContext",
    "Subproblem",
    "TemplateError",
    "TokenTrajectory",
    "answers_equal",
    "avg_at_n",
    "build_aug_set",
    "check_format",
    "chunk_solution",
    "dump_dataset",
    "extract_answer",
    "filter_hard",
    "grade",
    "group_advantages",
    "grpo_objective",
    "load_dataset",
    "mean_ssr",
    "mode_delta",
    "pass_at_k",
    "render",
    "resume",
    "run",
    "ssr",
    "stratify",
    "token_ratio_term",
]
