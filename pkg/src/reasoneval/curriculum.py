"""Stage-2 curriculum construction: hard-problem filtering and
partial-solution augmentation.

A problem is "hard" when a model solved it in zero of M graded attempts.
For each hard problem the ground-truth solution trace is split into four
chunks at paragraph boundaries (sentence boundaries when the trace has
fewer than four paragraphs), and five prompt variants are built that
reveal 0 through 4 chunks as partial-solution context. Chunking is purely
positional and deterministic: boundaries are chosen to balance chunk
character lengths, and the chunks always concatenate back to the original
trace byte-for-byte.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .dataset import AugmentedProblem
from .templates import render_partial_solution

DEFAULT_CHUNKS = 4
DEFAULT_ATTEMPTS = 20

_PARAGRAPH_SEP = re.compile(r"\n(?:[ \t]*\n)+")


class CurriculumError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkedTrace:
    chunks: tuple[str, ...]
    underfilled: bool  # fewer units than requested chunks


@dataclass(frozen=True)
class AugVariant:
    problem_id: str
    chunks_given: int
    prefix: str
    prompt: str


def filter_hard(
    results: Mapping[str, Sequence[bool]],
    attempts: int = DEFAULT_ATTEMPTS,
) -> list[str]:
    """Ids of problems with zero correct attempts out of exactly ``attempts``."""
    hard = []
    for problem_id, flags in results.items():
        if len(flags) != attempts:
            raise CurriculumError(
                f"problem {problem_id!r} has {len(flags)} attempts, expected {attempts}"
            )
        if not any(flags):
            hard.append(problem_id)
    return hard


def chunk_solution(trace: str, k: int = DEFAULT_CHUNKS) -> ChunkedTrace:
    """Split a solution trace into k balanced chunks.

    Boundaries fall only at paragraph breaks when the trace has at least k
    paragraphs, otherwise at sentence ends. A trace with fewer sentence
    units than k comes back as fewer, non-empty chunks with the
    ``underfilled`` flag set.
    """
    if not trace:
        raise CurriculumError("solution trace is empty")
    if k < 1:
        raise CurriculumError(f"chunk count must be >= 1, got {k}")
    units = _paragraph_units(trace)
    if len(units) < k:
        units = _sentence_units(trace)
    if len(units) < k:
        return ChunkedTrace(chunks=tuple(units), underfilled=True)
    return ChunkedTrace(chunks=tuple(_balance(units, k)), underfilled=False)


def _paragraph_units(trace: str) -> list[str]:
    """Segments ending at blank-line runs; separators stay with the unit
    they close, so the units concatenate to the input."""
    units = []
    prev = 0
    for sep in _PARAGRAPH_SEP.finditer(trace):
        units.append(trace[prev : sep.end()])
        prev = sep.end()
    if prev < len(trace):
        units.append(trace[prev:])
    return units


def _sentence_units(trace: str) -> list[str]:
    """Segments ending after sentence punctuation plus trailing whitespace."""
    units = []
    prev = 0
    i = 0
    while i < len(trace):
        if trace[i] in ".!?":
            j = i + 1
            while j < len(trace) and trace[j] in ".!?":
                j += 1
            if j >= len(trace) or trace[j].isspace():
                while j < len(trace) and trace[j].isspace():
                    j += 1
                units.append(trace[prev:j])
                prev = j
                i = j
                continue
        i += 1
    if prev < len(trace):
        units.append(trace[prev:])
    return units


def _balance(units: list[str], k: int) -> list[str]:
    """Group units into k contiguous, non-empty runs with balanced
    character lengths (within the largest indivisible unit)."""
    m = len(units)
    cumulative = [0]
    for unit in units:
        cumulative.append(cumulative[-1] + len(unit))
    total = cumulative[-1]
    boundaries = [0]
    for j in range(1, k):
        target = total * j / k
        lo = boundaries[-1] + 1          # at least one unit per chunk
        hi = m - (k - j)                 # leave enough units for the rest
        best = min(range(lo, hi + 1), key=lambda i: (abs(cumulative[i] - target), i))
        boundaries.append(best)
    boundaries.append(m)
    return [
        "".join(units[boundaries[j] : boundaries[j + 1]]) for j in range(k)
    ]


def build_aug_set(problem: AugmentedProblem, chunks: int = DEFAULT_CHUNKS) -> list[AugVariant]:
    """The 5 partial-solution variants of one problem (0..4 chunks shown).

    Variant 0 is exactly the vanilla prompt. When the trace yields fewer
    than ``chunks`` pieces, the higher variants repeat the full trace, so
    prefix monotonicity still holds.
    """
    if not problem.solution_trace:
        raise CurriculumError(f"problem {problem.id!r} has no solution trace")
    chunked = chunk_solution(problem.solution_trace, chunks)
    variants = []
    for given in range(chunks + 1):
        prefix = "".join(chunked.chunks[:given])
        variants.append(
            AugVariant(
                problem_id=problem.id,
                chunks_given=given,
                prefix=prefix,
                prompt=render_partial_solution(problem, prefix),
            )
        )
    return variants


def build_stage2_records(
    problems: Iterable[AugmentedProblem],
    hard_ids: Iterable[str],
    mix_count: int = 0,
    seed: int = 0,
) -> list[dict]:
    """Stage-2 JSONL records: 5 augmented rows per hard problem, plus an
    optional random mix of non-hard problems kept un-augmented.

    Rows stay loadable by the dataset module; the augmentation payload
    rides in the ``aug`` sidecar field.
    """
    hard = set(hard_ids)
    problem_list = list(problems)
    by_id = {p.id: p for p in problem_list}
    missing = hard - set(by_id)
    if missing:
        raise CurriculumError(f"hard ids not in dataset: {sorted(missing)}")
    records = []
    for problem in problem_list:
        if problem.id not in hard:
            continue
        for variant in build_aug_set(problem):
            row = problem.to_dict()
            row["id"] = f"{problem.id}::aug{variant.chunks_given}"
            row["aug"] = {
                "parent_id": variant.problem_id,
                "chunks_given": variant.chunks_given,
                "prefix": variant.prefix,
                "prompt": variant.prompt,
                "mix": False,
            }
            records.append(row)
    if mix_count:
        easy = [p for p in problem_list if p.id not in hard]
        picked = random.Random(seed).sample(easy, min(mix_count, len(easy)))
        for problem in sorted(picked, key=lambda p: p.id):
            row = problem.to_dict()
            row["id"] = f"{problem.id}::mix"
            row["aug"] = {
                "parent_id": problem.id,
                "chunks_given": 0,
                "prefix": "",
                "prompt": render_partial_solution(problem, ""),
                "mix": True,
            }
            records.append(row)
    return records
