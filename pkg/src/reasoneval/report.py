"""Report tables over run logs: per-benchmark, per-mode, per-difficulty.

Report generation is a pure function of the run logs: records are
re-sorted by cell key before aggregation, floats are rendered with fixed
formatting, and row/column orders are canonical, so identical logs always
produce byte-identical output. A separate fixture mode renders externally
reported reference numbers from a checked-in file; those are labeled as
reported, never as results of this harness.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from .dataset import AugmentedProblem
from .metrics import (
    SUBPROBLEM_PROTOCOL_LABEL,
    ProblemOutcome,
    avg_at_n,
    collapse_subproblem_samples,
    mean_ssr,
    ssr,
)
from .runner import CompletionRecord
from .templates import PromptMode

MODE_ORDER = (
    PromptMode.VANILLA.value,
    PromptMode.WITH_PLAN.value,
    PromptMode.WITH_KNOWLEDGE.value,
    PromptMode.SUBPROBLEM_FIRST.value,
    PromptMode.SUBPROBLEM_NEXT.value,
    SUBPROBLEM_PROTOCOL_LABEL,
)

SOURCE_ORDER = ("AIME24", "AMC23", "MATH500", "GSM8K", "OlympiadBench", "custom")

CHAIN_MODE_VALUES = {
    PromptMode.SUBPROBLEM_FIRST.value,
    PromptMode.SUBPROBLEM_NEXT.value,
}


class ReportError(ValueError):
    pass


@dataclass
class ReportTable:
    title: str
    header: list[str]
    rows: list[list[str]] = field(default_factory=list)


def records_to_outcomes(
    records: Iterable[CompletionRecord],
    collapse: str = "majority",
) -> list[ProblemOutcome]:
    """Rebuild per-problem outcomes from raw records.

    Plain modes give one outcome per (problem, mode) with N correct flags.
    Subproblem records are folded into one outcome per problem under the
    "subproblems" label: correct_flags[s] is sample s's all-subproblems
    indicator, subproblem_flags is the per-subproblem majority collapse
    (or, under "per_sample", is omitted since the per-sample indicators
    already carry the success structure).
    """
    if collapse not in ("majority", "per_sample"):
        raise ReportError(f"unknown collapse rule {collapse!r}")
    plain: dict[tuple[str, str], dict[int, bool]] = {}
    subs: dict[str, dict[int, dict[int, bool]]] = {}  # problem -> sample -> sub -> ok
    for record in records:
        correct = record.grade.answer_correct
        if record.subproblem_index is None:
            plain.setdefault((record.problem_id, record.mode.value), {})[
                record.sample_index
            ] = correct
        else:
            subs.setdefault(record.problem_id, {}).setdefault(record.sample_index, {})[
                record.subproblem_index
            ] = correct
    outcomes: list[ProblemOutcome] = []
    for (problem_id, mode), flags in sorted(plain.items()):
        outcomes.append(
            ProblemOutcome(
                problem_id=problem_id,
                mode=PromptMode.parse(mode),
                correct_flags=tuple(flags[s] for s in sorted(flags)),
            )
        )
    for problem_id, samples in sorted(subs.items()):
        sample_ids = sorted(samples)
        sub_ids = sorted({j for row in samples.values() for j in row})
        if any(sorted(samples[s]) != sub_ids for s in sample_ids):
            raise ReportError(
                f"problem {problem_id!r}: samples cover different subproblem sets"
            )
        grid = [[samples[s][j] for j in sub_ids] for s in sample_ids]
        per_sample_all = tuple(all(row) for row in grid)
        subproblem_flags = (
            collapse_subproblem_samples(grid) if collapse == "majority" else None
        )
        outcomes.append(
            ProblemOutcome(
                problem_id=problem_id,
                mode=SUBPROBLEM_PROTOCOL_LABEL,
                correct_flags=per_sample_all,
                subproblem_flags=subproblem_flags,
            )
        )
    return outcomes


def _percent(value: float) -> str:
    return f"{value * 100:.2f}"


def _signed_percent(value: float) -> str:
    return f"{value * 100:+.2f}"


def _mode_sort_key(mode: str) -> tuple[int, str]:
    try:
        return (MODE_ORDER.index(mode), mode)
    except ValueError:
        return (len(MODE_ORDER), mode)


def _source_sort_key(source: str) -> tuple[int, str]:
    try:
        return (SOURCE_ORDER.index(source), source)
    except ValueError:
        return (len(SOURCE_ORDER), source)


def _group_mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def benchmark_table(
    run_label: str,
    outcomes: Sequence[ProblemOutcome],
    problems: dict[str, AugmentedProblem],
    collapse: str = "majority",
) -> ReportTable:
    """Per-benchmark Avg@N by mode, with vanilla-relative delta columns
    and an SSR column when subproblem outcomes exist."""
    modes = sorted({o.mode_label for o in outcomes}, key=_mode_sort_key)
    sources = sorted(
        {problems[o.problem_id].source for o in outcomes}, key=_source_sort_key
    )
    vanilla = PromptMode.VANILLA.value
    delta_modes = [m for m in modes if m != vanilla and m != SUBPROBLEM_PROTOCOL_LABEL]
    has_ssr = any(o.mode_label == SUBPROBLEM_PROTOCOL_LABEL for o in outcomes)
    header = ["run", "benchmark"] + [f"avg@N:{m}" for m in modes]
    if vanilla in modes:
        header += [f"delta:{m}-{vanilla}" for m in delta_modes]
    if has_ssr:
        header.append("mean_ssr")
    table = ReportTable(title="Avg@N by benchmark and mode (percent)", header=header)
    for source in sources + (["all"] if len(sources) > 1 else []):
        chosen = [
            o
            for o in outcomes
            if source == "all" or problems[o.problem_id].source == source
        ]
        row = [run_label, source]
        per_mode: dict[str, float] = {}
        for mode in modes:
            values = [avg_at_n(o) for o in chosen if o.mode_label == mode]
            if values:
                per_mode[mode] = _group_mean(values)
                row.append(_percent(per_mode[mode]))
            else:
                row.append("-")
        if vanilla in modes:
            for mode in delta_modes:
                if mode in per_mode and vanilla in per_mode:
                    row.append(_signed_percent(per_mode[mode] - per_mode[vanilla]))
                else:
                    row.append("-")
        if has_ssr:
            sub_outcomes = [o for o in chosen if o.mode_label == SUBPROBLEM_PROTOCOL_LABEL]
            if not sub_outcomes:
                row.append("-")
            elif collapse == "per_sample":
                row.append(_percent(_group_mean([avg_at_n(o) for o in sub_outcomes])))
            else:
                row.append(_percent(mean_ssr(sub_outcomes)))
        table.rows.append(row)
    return table


def difficulty_table(
    run_label: str,
    outcomes: Sequence[ProblemOutcome],
    problems: dict[str, AugmentedProblem],
) -> ReportTable:
    """Avg@N per difficulty level, 10 fixed columns even when empty."""
    modes = sorted({o.mode_label for o in outcomes}, key=_mode_sort_key)
    header = ["run", "mode"] + [f"d{level}" for level in range(1, 11)]
    table = ReportTable(title="Avg@N by difficulty level (percent)", header=header)
    for mode in modes:
        row = [run_label, mode]
        chosen = [o for o in outcomes if o.mode_label == mode]
        for level in range(1, 11):
            values = [
                avg_at_n(o)
                for o in chosen
                if problems[o.problem_id].difficulty == level
            ]
            row.append(_percent(_group_mean(values)) if values else "-")
        table.rows.append(row)
    return table


def reported_fixture() -> dict:
    return json.loads(
        resources.files("reasoneval")
        .joinpath("data/reported_results.json")
        .read_text(encoding="utf-8")
    )


def reported_table(fixture: dict | None = None) -> ReportTable:
    """The checked-in reference numbers, labeled as reported-only."""
    fixture = fixture or reported_fixture()
    table = ReportTable(
        title=f"{fixture['metric']} - {fixture['label']}",
        header=["model"] + list(fixture["columns"]),
    )
    for row in fixture["rows"]:
        table.rows.append([row["model"]] + [f"{v:.2f}" for v in row["values"]])
    return table


def compare_with_reported(
    fixture_row: str,
    measured_by_source: dict[str, float],
) -> ReportTable:
    """Side-by-side table of measured Avg@N against one reported fixture
    row. Diagnostic only; the difference column does not claim that this
    harness reproduces the reported numbers.
    """
    fixture = reported_fixture()
    rows = [r for r in fixture["rows"] if r["model"] == fixture_row]
    if not rows:
        known = [r["model"] for r in fixture["rows"]]
        raise ReportError(f"unknown fixture row {fixture_row!r}; known: {known}")
    reported = dict(zip(fixture["columns"], rows[0]["values"]))
    table = ReportTable(
        title=(
            f"Measured vs reported:{fixture_row} (percent; reported values are "
            "external fixtures, not reproduced by this harness)"
        ),
        header=["benchmark", "measured", "reported", "difference"],
    )
    for source in sorted(measured_by_source, key=_source_sort_key):
        measured = measured_by_source[source] * 100
        if source in reported:
            table.rows.append(
                [
                    source,
                    f"{measured:.2f}",
                    f"{reported[source]:.2f}",
                    f"{measured - reported[source]:+.2f}",
                ]
            )
        else:
            table.rows.append([source, f"{measured:.2f}", "-", "-"])
    return table


def render_markdown(tables: Sequence[ReportTable]) -> str:
    parts = []
    for table in tables:
        lines = [f"### {table.title}", ""]
        lines.append("| " + " | ".join(table.header) + " |")
        lines.append("|" + "|".join(" --- " for _ in table.header) + "|")
        for row in table.rows:
            lines.append("| " + " | ".join(row) + " |")
        parts.append("\n".join(lines))
    return "\n\n".join(parts) + "\n"


def render_csv(tables: Sequence[ReportTable]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for table in tables:
        writer.writerow([f"# {table.title}"])
        writer.writerow(table.header)
        writer.writerows(table.rows)
    return buffer.getvalue()


def render_json(tables: Sequence[ReportTable]) -> str:
    payload = [
        {"title": t.title, "header": t.header, "rows": t.rows} for t in tables
    ]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


RENDERERS = {
    "markdown": render_markdown,
    "csv": render_csv,
    "json": render_json,
}
