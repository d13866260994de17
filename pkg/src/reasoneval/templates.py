"""Prompt rendering for the five evaluation modes.

Templates are checked-in text fixtures (``templates/*.txt``) with
``{{...}}`` placeholders; rendering is single-pass string substitution so
output bytes are reproducible and hashable, and substituted content is
never rescanned for placeholders. LF newlines only, no trailing newline.
The incremental subproblem mode repeats its two-line
"Subproblem:/Subproblem Answer:" block once per previously solved
subproblem.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

from .dataset import AugmentedProblem


class PromptMode(str, Enum):
    VANILLA = "vanilla"
    WITH_PLAN = "plan"
    WITH_KNOWLEDGE = "knowledge"
    SUBPROBLEM_FIRST = "subproblem_first"
    SUBPROBLEM_NEXT = "subproblem_next"

    @classmethod
    def parse(cls, name: str) -> "PromptMode":
        for mode in cls:
            if name == mode.value or name == mode.name:
                return mode
        raise ValueError(f"unknown prompt mode {name!r}")


# CLI alias: the full incremental protocol covers the first subproblem plus
# every subsequent one.
SUBPROBLEM_PROTOCOL = (PromptMode.SUBPROBLEM_FIRST, PromptMode.SUBPROBLEM_NEXT)

_TEMPLATE_FILES = {
    PromptMode.VANILLA: "vanilla.txt",
    PromptMode.WITH_PLAN: "with_plan.txt",
    PromptMode.WITH_KNOWLEDGE: "with_knowledge.txt",
    PromptMode.SUBPROBLEM_FIRST: "subproblem_first.txt",
    PromptMode.SUBPROBLEM_NEXT: "subproblem_next.txt",
}

PARTIAL_SOLUTION_TEMPLATE = "partial_solution.txt"

_PRIOR_BLOCK = (
    "Subproblem: {previous-subproblem}\n"
    "Subproblem Answer: {previous-subproblem-answer}\n"
)

_KNOWN_PLACEHOLDERS = re.compile(
    r"\{\{(?:question|planning|knowledge|main-problem|current-subproblem|partial-solution)\}\}"
    r"|\{previous-subproblem(?:-answer)?\}"
)


class TemplateError(ValueError):
    """The requested mode cannot be rendered for this problem."""


@dataclass(frozen=True)
class SubproblemContext:
    """Inputs for one step of the incremental subproblem protocol.

    ``solved`` holds (question, answer) pairs for the already-answered
    subproblems, in chain order; ``current`` is the question to pose now.
    """

    main_problem: str
    solved: tuple[tuple[str, str], ...]
    current: str


@lru_cache(maxsize=None)
def template_text(name: str) -> str:
    return resources.files("reasoneval").joinpath(f"templates/{name}").read_text(encoding="utf-8")


def format_knowledge(problem: AugmentedProblem) -> str:
    """One line per item: capitalized kind, colon, statement."""
    return "\n".join(f"{item.kind.capitalize()}: {item.statement}" for item in problem.knowledge)


def subproblem_contexts(
    problem: AugmentedProblem,
    answers: list[str] | None = None,
) -> list[SubproblemContext]:
    """Contexts for every step of the incremental protocol, in chain order.

    Prior answers default to the dataset reference answers, which keeps the
    steps independent of each other; pass ``answers`` (one per subproblem)
    to chain a model's own earlier answers instead.
    """
    if not problem.subproblems:
        raise TemplateError(f"problem {problem.id!r} has no subproblems")
    if answers is not None and len(answers) != len(problem.subproblems):
        raise TemplateError(
            f"problem {problem.id!r}: got {len(answers)} answers for "
            f"{len(problem.subproblems)} subproblems"
        )
    contexts = []
    for i, sub in enumerate(problem.subproblems):
        solved = tuple(
            (prev.question, answers[j] if answers is not None else prev.reference_answer)
            for j, prev in enumerate(problem.subproblems[:i])
        )
        contexts.append(
            SubproblemContext(main_problem=problem.question, solved=solved, current=sub.question)
        )
    return contexts


def _substitute(template: str, mapping: dict[str, str]) -> str:
    # Longer keys first so the repeated prior block wins over its inner
    # single-brace placeholders.
    keys = sorted(mapping, key=len, reverse=True)
    pattern = re.compile("|".join(re.escape(k) for k in keys))
    return pattern.sub(lambda m: mapping[m.group(0)], template)


def render(
    problem: AugmentedProblem,
    mode: PromptMode,
    ctx: SubproblemContext | None = None,
) -> str:
    """Render the prompt for one mode, byte-identical to the fixture.

    Raises TemplateError when the augmentation the mode needs is missing
    (empty plan, no knowledge, no subproblems, or a SUBPROBLEM_NEXT context
    with nothing solved yet).
    """
    text = template_text(_TEMPLATE_FILES[mode])
    if mode is PromptMode.VANILLA:
        text = _substitute(text, {"{{question}}": problem.question})
    elif mode is PromptMode.WITH_PLAN:
        if not problem.plan:
            raise TemplateError(f"problem {problem.id!r} has no plan; cannot render {mode.value}")
        text = _substitute(
            text,
            {"{{question}}": problem.question, "{{planning}}": problem.plan.steps},
        )
    elif mode is PromptMode.WITH_KNOWLEDGE:
        if not problem.knowledge:
            raise TemplateError(
                f"problem {problem.id!r} has no knowledge items; cannot render {mode.value}"
            )
        text = _substitute(
            text,
            {"{{question}}": problem.question, "{{knowledge}}": format_knowledge(problem)},
        )
    elif mode is PromptMode.SUBPROBLEM_FIRST:
        if ctx is None:
            ctx = subproblem_contexts(problem)[0]
        if ctx.solved:
            raise TemplateError("first-subproblem mode takes no prior solved subproblems")
        text = _substitute(
            text,
            {"{{main-problem}}": ctx.main_problem, "{{current-subproblem}}": ctx.current},
        )
    elif mode is PromptMode.SUBPROBLEM_NEXT:
        if ctx is None:
            raise TemplateError("subproblem_next requires a SubproblemContext")
        if not ctx.solved:
            raise TemplateError("subproblem_next requires at least one solved subproblem")
        blocks = "".join(
            f"Subproblem: {q}\nSubproblem Answer: {a}\n" for q, a in ctx.solved
        )
        text = _substitute(
            text,
            {
                _PRIOR_BLOCK: blocks,
                "{{main-problem}}": ctx.main_problem,
                "{{current-subproblem}}": ctx.current,
            },
        )
    else:  # pragma: no cover
        raise TemplateError(f"unhandled mode {mode!r}")
    _check_resolved(text)
    return text


def render_partial_solution(problem: AugmentedProblem, prefix: str) -> str:
    """Vanilla-style prompt with a ground-truth solution prefix injected.

    With an empty prefix this is exactly the vanilla rendering; otherwise
    the prefix appears after the question under a fixed header line.
    """
    if not prefix:
        return render(problem, PromptMode.VANILLA)
    text = _substitute(
        template_text(PARTIAL_SOLUTION_TEMPLATE),
        {"{{question}}": problem.question, "{{partial-solution}}": prefix},
    )
    _check_resolved(text)
    return text


def _check_resolved(text: str) -> None:
    leftover = _KNOWN_PLACEHOLDERS.search(text)
    if leftover:  # template/renderer mismatch, not a user error
        raise RuntimeError(f"unresolved placeholder {leftover.group(0)!r} in rendered prompt")
