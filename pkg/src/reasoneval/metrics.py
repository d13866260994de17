"""Aggregate metrics over graded evaluation records.

Avg@N is the per-problem mean correctness over N samples. pass@k is the
unbiased combinatorial estimator 1 - C(n-c, k)/C(n, k), evaluated in exact
big-integer arithmetic (never floating factorials). SSR is the all-or-
nothing subproblem success indicator per problem, averaged across
problems. Mode deltas compare two aggregated scores over the same dataset
slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .templates import PromptMode

SUBPROBLEM_COLLAPSE_MODES = ("majority", "per_sample")

# Reporting label for the full incremental protocol, which spans the two
# subproblem prompt modes.
SUBPROBLEM_PROTOCOL_LABEL = "subproblems"


@dataclass(frozen=True)
class ProblemOutcome:
    """Graded flags for one (problem, mode) cell of a run.

    ``mode`` is a PromptMode or a reporting label such as "subproblems"
    (the incremental protocol spans two prompt modes). For subproblem
    outcomes, ``correct_flags[s]`` means sample s solved every subproblem,
    and ``subproblem_flags`` carries the per-subproblem collapse.
    """

    problem_id: str
    mode: PromptMode | str
    correct_flags: tuple[bool, ...]
    subproblem_flags: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        if not self.correct_flags:
            raise ValueError(f"problem {self.problem_id!r}: correct_flags is empty")

    @property
    def mode_label(self) -> str:
        return self.mode.value if isinstance(self.mode, PromptMode) else str(self.mode)


@dataclass(frozen=True)
class SliceScore:
    """One aggregated metric value with the slice it was computed over."""

    metric: str
    dataset_slice: str
    mode: str
    value: float


@dataclass(frozen=True)
class ModeDelta:
    metric: str
    dataset_slice: str
    mode_a: str
    mode_b: str
    delta: float


def avg_at_n(outcome: ProblemOutcome) -> float:
    """Mean correctness over the outcome's N samples."""
    return sum(outcome.correct_flags) / len(outcome.correct_flags)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that a uniform random size-k subset of n samples hits
    at least one of the c correct ones."""
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    miss = Fraction(math.comb(n - c, k), math.comb(n, k))
    return float(1 - miss)


def ssr(subproblem_flags: Sequence[bool]) -> int:
    """1 iff every subproblem was solved, else 0."""
    if not subproblem_flags:
        raise ValueError("subproblem_flags is empty")
    return int(all(subproblem_flags))


def mean_ssr(outcomes: Iterable[ProblemOutcome]) -> float:
    """Mean of per-problem SSR values; every outcome must carry flags."""
    values = []
    for outcome in outcomes:
        if outcome.subproblem_flags is None:
            raise ValueError(f"problem {outcome.problem_id!r} has no subproblem flags")
        values.append(ssr(outcome.subproblem_flags))
    if not values:
        raise ValueError("no outcomes given")
    return sum(values) / len(values)


def mode_delta(a: SliceScore, b: SliceScore) -> ModeDelta:
    """Signed difference a - b; both scores must cover the same slice."""
    if a.metric != b.metric or a.dataset_slice != b.dataset_slice:
        raise ValueError(
            f"mismatched slices: ({a.metric!r}, {a.dataset_slice!r}) vs "
            f"({b.metric!r}, {b.dataset_slice!r})"
        )
    return ModeDelta(
        metric=a.metric,
        dataset_slice=a.dataset_slice,
        mode_a=a.mode,
        mode_b=b.mode,
        delta=a.value - b.value,
    )


def collapse_subproblem_samples(
    flags_per_sample: Sequence[Sequence[bool]],
    collapse: str = "majority",
) -> tuple[bool, ...]:
    """Collapse per-sample grades into one flag per subproblem.

    ``flags_per_sample[s][j]`` is sample s's correctness on subproblem j.
    "majority": subproblem j solved iff strictly more than half of its
    samples are correct. "per_sample" is handled by the caller (it keeps
    the per-sample structure); here it reduces to any-sample for a single
    sample and is rejected otherwise.
    """
    if collapse != "majority":
        raise ValueError(f"collapse must be 'majority' here, got {collapse!r}")
    if not flags_per_sample:
        raise ValueError("no samples given")
    width = len(flags_per_sample[0])
    if any(len(row) != width for row in flags_per_sample):
        raise ValueError("ragged subproblem flags")
    n = len(flags_per_sample)
    return tuple(
        sum(row[j] for row in flags_per_sample) * 2 > n for j in range(width)
    )


def per_sample_ssr(flags_per_sample: Sequence[Sequence[bool]]) -> float:
    """Fraction of samples that solved every subproblem."""
    if not flags_per_sample:
        raise ValueError("no samples given")
    return sum(all(row) for row in flags_per_sample) / len(flags_per_sample)


@dataclass
class SliceAggregate:
    """Per-slice rollup: mean Avg@N per mode plus optional SSR."""

    dataset_slice: str
    n_problems: dict[str, int] = field(default_factory=dict)
    avg_at_n: dict[str, float] = field(default_factory=dict)
    pass_at_1: dict[str, float] = field(default_factory=dict)
    mean_ssr: float | None = None


def aggregate_outcomes(
    outcomes: Iterable[ProblemOutcome],
    dataset_slice: str = "all",
) -> SliceAggregate:
    """Deterministic rollup of outcomes into per-mode means.

    Outcomes are sorted by (mode, problem_id) before reduction so the
    result does not depend on completion order.
    """
    by_mode: dict[str, list[ProblemOutcome]] = {}
    ssr_values: list[int] = []
    for outcome in sorted(outcomes, key=lambda o: (o.mode_label, o.problem_id)):
        by_mode.setdefault(outcome.mode_label, []).append(outcome)
        if outcome.subproblem_flags is not None:
            ssr_values.append(ssr(outcome.subproblem_flags))
    agg = SliceAggregate(dataset_slice=dataset_slice)
    for mode, rows in by_mode.items():
        agg.n_problems[mode] = len(rows)
        agg.avg_at_n[mode] = sum(avg_at_n(r) for r in rows) / len(rows)
        agg.pass_at_1[mode] = sum(
            pass_at_k(len(r.correct_flags), sum(r.correct_flags), 1) for r in rows
        ) / len(rows)
    if ssr_values:
        agg.mean_ssr = sum(ssr_values) / len(ssr_values)
    return agg


def difficulty_delta_curve(
    outcomes_a: Iterable[ProblemOutcome],
    outcomes_b: Iterable[ProblemOutcome],
    difficulty_of: dict[str, int],
) -> list[float | None]:
    """Per-difficulty Avg@N deltas (mode a minus mode b), 10 fixed buckets.

    Buckets with no problems in either side yield None. Problems present
    on only one side are an error (the slices must match).
    """
    def bucketize(outcomes: Iterable[ProblemOutcome]) -> dict[int, list[float]]:
        buckets: dict[int, list[float]] = {}
        for outcome in outcomes:
            level = difficulty_of[outcome.problem_id]
            buckets.setdefault(level, []).append(avg_at_n(outcome))
        return buckets

    buckets_a = bucketize(outcomes_a)
    buckets_b = bucketize(outcomes_b)
    if set(buckets_a) != set(buckets_b):
        raise ValueError("mode slices cover different difficulty buckets")
    curve: list[float | None] = []
    for level in range(1, 11):
        if level not in buckets_a:
            curve.append(None)
            continue
        mean_a = sum(buckets_a[level]) / len(buckets_a[level])
        mean_b = sum(buckets_b[level]) / len(buckets_b[level])
        curve.append(mean_a - mean_b)
    return curve
