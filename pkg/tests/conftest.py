"""Shared fixtures: the static sample dataset, a 12-problem mock benchmark
with a deterministic canned endpoint, and exact-rational rendering helpers
for the grader corpus."""

from __future__ import annotations

import random
from fractions import Fraction
from pathlib import Path

import pytest

from reasoneval.dataset import (
    AugmentedProblem,
    KnowledgeItem,
    PlanSkeleton,
    Subproblem,
    load_dataset,
)

DATA_DIR = Path(__file__).parent / "data"
SAMPLE_DATASET = DATA_DIR / "sample_problems.jsonl"

WRONG_ANSWER = "999999"


@pytest.fixture(scope="session")
def sample_problems() -> list[AugmentedProblem]:
    return load_dataset(SAMPLE_DATASET)


def make_problem(
    pid: str,
    *,
    source: str = "custom",
    difficulty: int = 1,
    answer: str = "1",
    n_subproblems: int = 0,
    trace: str = "",
    plan: str = "",
    domain: str = "Algebra",
) -> AugmentedProblem:
    subs = tuple(
        Subproblem(index=j, question=f"{pid} step {j}?", reference_answer=str(10 * j + 1))
        for j in range(1, n_subproblems + 1)
    )
    return AugmentedProblem(
        id=pid,
        source=source,
        question=f"Compute the value asked by {pid}.",
        reference_answer=answer,
        solution_trace=trace,
        plan=PlanSkeleton(steps=plan),
        knowledge=(KnowledgeItem(kind="fact", statement=f"Fact used by {pid}."),),
        subproblems=subs,
        difficulty=difficulty,
        domain=domain,
    )


# --- mock benchmark for end-to-end runs ------------------------------------

MOCK_SOURCES = ("AIME24", "AMC23", "MATH500", "GSM8K")


def mock_benchmark(n: int = 12) -> list[AugmentedProblem]:
    """n problems with plans, knowledge, and two subproblems each."""
    problems = []
    for i in range(n):
        problems.append(
            make_problem(
                f"p{i:02d}",
                source=MOCK_SOURCES[i % len(MOCK_SOURCES)],
                difficulty=(i % 10) + 1,
                answer=str(100 + i),
                n_subproblems=2,
                trace=f"Step one of {i}.\n\nStep two of {i}.\n\nStep three of {i}.\n\nStep four of {i}.",
                plan=f"Outline for problem {i}.",
            )
        )
    return problems


def boxed_completion(answer: str) -> str:
    return f"<think>working</think>\n<answer>The answer is \\boxed{{{answer}}}.</answer>"


def vanilla_correct(i: int) -> int:
    """Canned correct-sample count for problem i in vanilla mode (of 8)."""
    return i % 9


def knowledge_correct(i: int) -> int:
    return min(8, (i % 9) + 1)


def subproblem_correct(i: int, sub_index: int) -> int:
    """Correct-sample counts chosen to sit on either side of the majority
    line: 5 of 8 (majority) or 3 of 8 (minority)."""
    if sub_index == 1:
        return 5 if i % 2 == 0 else 3
    return 5 if i % 3 == 0 else 3


def canned_table(problems: list[AugmentedProblem], samples: int = 8) -> dict[str, str]:
    """Tag -> completion map for the canned endpoint, covering vanilla,
    knowledge, and the two-step subproblem protocol."""
    table: dict[str, str] = {}
    for i, problem in enumerate(problems):
        for s in range(samples):
            correct = s < vanilla_correct(i)
            table[f"{problem.id}/vanilla/{s}"] = boxed_completion(
                problem.reference_answer if correct else WRONG_ANSWER
            )
            correct = s < knowledge_correct(i)
            table[f"{problem.id}/knowledge/{s}"] = boxed_completion(
                problem.reference_answer if correct else WRONG_ANSWER
            )
            for sub in problem.subproblems:
                mode = "subproblem_first" if sub.index == 1 else "subproblem_next"
                correct = s < subproblem_correct(i, sub.index)
                table[f"{problem.id}/{mode}/{s}/{sub.index}"] = boxed_completion(
                    sub.reference_answer if correct else WRONG_ANSWER
                )
    return table


# --- exact rational rendering for the grader corpus ------------------------

def exact_decimal(value: Fraction) -> str | None:
    """Decimal string equal to value exactly, or None when impossible."""
    q = value.denominator
    shift = 0
    while q % 2 == 0:
        q //= 2
        shift += 1
    fives = 0
    while q % 5 == 0:
        q //= 5
        fives += 1
    if q != 1:
        return None
    shift = max(shift, fives)
    scaled = value * 10**shift
    digits = str(abs(int(scaled))).rjust(shift + 1, "0")
    sign = "-" if value < 0 else ""
    if shift == 0:
        return sign + digits
    return f"{sign}{digits[:-shift]}.{digits[-shift:]}"


def render_rational(value: Fraction, rng: random.Random) -> str:
    """A random textual rendering that denotes exactly ``value``."""
    styles = ["frac", "slash"]
    if exact_decimal(value) is not None:
        styles.append("decimal")
    if exact_decimal(value * 100) is not None:
        styles.append("percent")
    if value.denominator == 1:
        styles.append("int")
        if value != 0 and int(value) % 10 == 0:
            styles.append("sci")
    style = rng.choice(styles)
    p, q = value.numerator, value.denominator
    if style == "frac":
        command = rng.choice(["\\frac", "\\dfrac", "\\tfrac"])
        if p < 0:
            text = f"-{command}{{{-p}}}{{{q}}}"
        else:
            text = f"{command}{{{p}}}{{{q}}}"
    elif style == "slash":
        text = f"{p}/{q}"
    elif style == "decimal":
        text = exact_decimal(value)
    elif style == "percent":
        text = exact_decimal(value * 100) + rng.choice(["%", "\\%"])
    elif style == "sci":
        shift = 0
        mantissa = int(value)
        while mantissa % 10 == 0 and shift < 3:
            mantissa //= 10
            shift += 1
        text = f"{mantissa}e{shift}"
    else:
        text = str(p)
    wrapper = rng.choice(["none", "none", "dollar", "paren", "spaces", "period"])
    if wrapper == "dollar":
        text = f"${text}$"
    elif wrapper == "paren":
        text = f"\\({text}\\)"
    elif wrapper == "spaces":
        text = f"  {text} "
    elif wrapper == "period":
        text = f"{text}."
    return text


def random_rational(rng: random.Random) -> Fraction:
    denominator = rng.choice([1, 1, 2, 3, 4, 5, 7, 8, 10, 16, 20, 25, 100])
    numerator = rng.randint(-400, 400)
    return Fraction(numerator, denominator)
