"""Augmented-problem data model: loading, validation, and stratified slicing.

Datasets are JSONL, one problem object per line. Each problem carries the
plain question/answer pair plus three optional augmentation layers (a
planning skeleton, a knowledge list, and an ordered subproblem chain), a
1-10 difficulty rating, and a domain tag. Unknown fields round-trip
verbatim so annotator pipelines can attach extra metadata without breaking
consumers. The full field reference lives in the bundled schema document
(see :func:`schema_text`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

SOURCES = ("AIME24", "AMC23", "MATH500", "GSM8K", "OlympiadBench", "custom")
KNOWLEDGE_KINDS = ("fact", "definition", "theorem", "lemma")
DIFFICULTY_RANGE = range(1, 11)

STRATIFY_KEYS = ("difficulty", "domain", "source")


class DatasetError(ValueError):
    """A dataset file or record violates the schema."""


@dataclass(frozen=True)
class PlanSkeleton:
    """High-level solution outline, stored as one text block.

    May be empty: a problem is evaluable without a plan.
    """

    steps: str = ""

    def __bool__(self) -> bool:
        return bool(self.steps.strip())


@dataclass(frozen=True)
class KnowledgeItem:
    kind: str
    statement: str


@dataclass(frozen=True)
class Subproblem:
    index: int
    question: str
    reference_answer: str


@dataclass(frozen=True)
class AugmentedProblem:
    id: str
    source: str
    question: str
    reference_answer: str
    solution_trace: str = ""
    plan: PlanSkeleton = field(default_factory=PlanSkeleton)
    knowledge: tuple[KnowledgeItem, ...] = ()
    subproblems: tuple[Subproblem, ...] = ()
    difficulty: int = 1
    domain: str = ""
    extra: dict[str, Any] = field(default_factory=dict, compare=True)

    def validate(self) -> None:
        """Raise DatasetError naming the offending field if any invariant fails."""
        if not self.id:
            raise DatasetError("problem with empty 'id'")
        if self.source not in SOURCES:
            raise DatasetError(
                f"problem {self.id!r}: 'source' must be one of {SOURCES}, got {self.source!r}"
            )
        if not self.question.strip():
            raise DatasetError(f"problem {self.id!r}: 'question' is empty")
        if not self.reference_answer.strip():
            raise DatasetError(f"problem {self.id!r}: 'reference_answer' is empty")
        if self.difficulty not in DIFFICULTY_RANGE:
            raise DatasetError(
                f"problem {self.id!r}: 'difficulty' must be in [1,10], got {self.difficulty}"
            )
        for item in self.knowledge:
            if item.kind not in KNOWLEDGE_KINDS:
                raise DatasetError(
                    f"problem {self.id!r}: knowledge 'kind' must be one of "
                    f"{KNOWLEDGE_KINDS}, got {item.kind!r}"
                )
            if not item.statement.strip():
                raise DatasetError(f"problem {self.id!r}: knowledge 'statement' is empty")
        for pos, sub in enumerate(self.subproblems, start=1):
            if sub.index != pos:
                raise DatasetError(
                    f"problem {self.id!r}: subproblem 'index' not contiguous from 1 "
                    f"(expected {pos}, got {sub.index})"
                )
            if not sub.question.strip():
                raise DatasetError(f"problem {self.id!r}: subproblem {pos} 'question' is empty")
            if not sub.reference_answer.strip():
                raise DatasetError(
                    f"problem {self.id!r}: subproblem {pos} 'reference_answer' is empty"
                )

    def to_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "id": self.id,
            "source": self.source,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "solution_trace": self.solution_trace,
            "plan": {"steps": self.plan.steps},
            "knowledge": [
                {"kind": k.kind, "statement": k.statement} for k in self.knowledge
            ],
            "subproblems": [
                {
                    "index": s.index,
                    "question": s.question,
                    "reference_answer": s.reference_answer,
                }
                for s in self.subproblems
            ],
            "difficulty": self.difficulty,
            "domain": self.domain,
        }
        record.update(self.extra)
        return record

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "AugmentedProblem":
        known = {
            "id",
            "source",
            "question",
            "reference_answer",
            "solution_trace",
            "plan",
            "knowledge",
            "subproblems",
            "difficulty",
            "domain",
        }
        raw_plan = record.get("plan") or {}
        if isinstance(raw_plan, str):
            plan = PlanSkeleton(steps=raw_plan)
        else:
            plan = PlanSkeleton(steps=str(raw_plan.get("steps", "")))
        knowledge = tuple(
            KnowledgeItem(kind=str(k.get("kind", "")), statement=str(k.get("statement", "")))
            for k in record.get("knowledge") or []
        )
        subproblems = tuple(
            Subproblem(
                index=int(s.get("index", pos)),
                question=str(s.get("question", "")),
                reference_answer=str(s.get("reference_answer", "")),
            )
            for pos, s in enumerate(record.get("subproblems") or [], start=1)
        )
        problem = cls(
            id=str(record.get("id", "")),
            source=str(record.get("source", "custom")),
            question=str(record.get("question", "")),
            reference_answer=str(record.get("reference_answer", "")),
            solution_trace=str(record.get("solution_trace", "")),
            plan=plan,
            knowledge=knowledge,
            subproblems=subproblems,
            difficulty=int(record.get("difficulty", 0)),
            domain=str(record.get("domain", "")),
            extra={k: v for k, v in record.items() if k not in known},
        )
        problem.validate()
        return problem


def load_dataset(path: str | Path) -> list[AugmentedProblem]:
    """Load and validate a JSONL dataset, preserving record order.

    Raises DatasetError with the 1-based line number on malformed JSON, on
    any invariant violation, and on duplicate ids.
    """
    problems: list[AugmentedProblem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise DatasetError(f"{path}:{lineno}: each line must be a JSON object")
            try:
                problem = AugmentedProblem.from_dict(record)
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if problem.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {problem.id!r}")
            seen.add(problem.id)
            problems.append(problem)
    return problems


def dump_dataset(problems: Iterable[AugmentedProblem], path: str | Path) -> None:
    """Write problems as JSONL, one object per line, LF-terminated."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for problem in problems:
            fh.write(json.dumps(problem.to_dict(), ensure_ascii=False) + "\n")


def stratify(
    problems: Iterable[AugmentedProblem], by: str
) -> dict[Any, list[AugmentedProblem]]:
    """Partition problems into buckets keyed by difficulty, domain, or source.

    Every problem lands in exactly one bucket; concatenating the buckets
    gives back a permutation of the input.
    """
    if by not in STRATIFY_KEYS:
        raise ValueError(f"'by' must be one of {STRATIFY_KEYS}, got {by!r}")
    buckets: dict[Any, list[AugmentedProblem]] = {}
    for problem in problems:
        key = getattr(problem, by)
        buckets.setdefault(key, []).append(problem)
    return buckets


def schema_text() -> str:
    """The bundled schema document (fields, enums, invariants, grading rules)."""
    return resources.files("reasoneval").joinpath("data/schema.md").read_text(encoding="utf-8")
