"""Command-line interface.

Subcommands: validate, render, grade, run, resume, metrics,
curriculum build, kernel selftest, report. Options can come from a JSON
(or, on Python 3.11+, TOML) config file via --config; explicit flags win
over config values, config values win over defaults. The API key is the
only thing read from the environment (REASONEVAL_API_KEY or
OPENAI_API_KEY).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .curriculum import CurriculumError, build_stage2_records, filter_hard
from .dataset import DatasetError, load_dataset, schema_text, stratify
from .grading import grade
from .metrics import pass_at_k, ssr
from .report import (
    RENDERERS,
    ReportError,
    benchmark_table,
    compare_with_reported,
    difficulty_table,
    records_to_outcomes,
    reported_table,
)
from .runner import (
    RunError,
    RunManifest,
    expected_keys,
    load_run_manifest,
    load_run_records,
    resume as resume_run,
    run as run_eval,
)
from .selftest import run_selftest
from .templates import (
    SUBPROBLEM_PROTOCOL,
    PromptMode,
    TemplateError,
    render,
    subproblem_contexts,
)


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError as exc:
            raise SystemExit(
                "TOML config requires Python 3.11+; use a JSON config file instead"
            ) from exc
        return tomllib.loads(text)
    return json.loads(text)


def _pick(args: argparse.Namespace, config: dict, key: str, default: Any) -> Any:
    value = getattr(args, key, None)
    if value is not None:
        return value
    return config.get(key, default)


def _parse_modes(spec: str) -> tuple[PromptMode, ...]:
    modes: list[PromptMode] = []
    for name in spec.split(","):
        name = name.strip()
        if not name:
            continue
        if name == "subproblems":
            for mode in SUBPROBLEM_PROTOCOL:
                if mode not in modes:
                    modes.append(mode)
            continue
        mode = PromptMode.parse(name)
        if mode not in modes:
            modes.append(mode)
    if not modes:
        raise SystemExit(f"no modes in {spec!r}")
    return tuple(modes)


def cmd_validate(args: argparse.Namespace) -> int:
    if args.print_schema:
        print(schema_text())
        return 0
    try:
        problems = load_dataset(args.dataset)
    except (DatasetError, OSError) as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return 1
    by_difficulty = stratify(problems, "difficulty")
    by_source = stratify(problems, "source")
    print(f"OK: {len(problems)} problems")
    print(
        "difficulty buckets: "
        + ", ".join(f"{k}: {len(v)}" for k, v in sorted(by_difficulty.items()))
    )
    print("sources: " + ", ".join(f"{k}: {len(v)}" for k, v in sorted(by_source.items())))
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    problems = {p.id: p for p in load_dataset(args.dataset)}
    if args.problem_id not in problems:
        print(f"unknown problem id {args.problem_id!r}", file=sys.stderr)
        return 1
    problem = problems[args.problem_id]
    mode = PromptMode.parse(args.mode)
    try:
        if mode in SUBPROBLEM_PROTOCOL:
            index = args.subproblem or 1
            contexts = subproblem_contexts(problem)
            if not 1 <= index <= len(contexts):
                print(
                    f"problem has {len(contexts)} subproblems, asked for {index}",
                    file=sys.stderr,
                )
                return 1
            prompt = render(problem, mode, contexts[index - 1])
        else:
            prompt = render(problem, mode)
    except TemplateError as exc:
        print(f"cannot render: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(prompt)
    return 0


def cmd_grade(args: argparse.Namespace) -> int:
    if args.completion == "-":
        completion = sys.stdin.read()
    else:
        completion = Path(args.completion).read_text(encoding="utf-8")
    if args.reference_file:
        reference = Path(args.reference_file).read_text(encoding="utf-8").strip()
    else:
        reference = args.reference
    if not reference:
        print("a non-empty --reference or --reference-file is required", file=sys.stderr)
        return 2
    result = grade(completion, reference)
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    manifest = RunManifest(
        run_id=_pick(args, config, "run_id", None) or "run",
        dataset=_pick(args, config, "dataset", None) or "",
        modes=_parse_modes(_pick(args, config, "modes", "vanilla")),
        samples_per_problem=int(_pick(args, config, "samples", 8)),
        temperature=float(_pick(args, config, "temperature", 0.6)),
        max_tokens=int(_pick(args, config, "max_tokens", 16384)),
        endpoint=_pick(args, config, "endpoint", None) or "",
        model_name=_pick(args, config, "model", None) or "",
        concurrency_limit=int(_pick(args, config, "concurrency", 4)),
        seed=_pick(args, config, "seed", None),
        chain_model_answers=bool(_pick(args, config, "chain_model_answers", False)),
    )
    if not manifest.dataset:
        print("--dataset is required", file=sys.stderr)
        return 2
    if not manifest.endpoint:
        print("--endpoint is required", file=sys.stderr)
        return 2
    out_dir = _pick(args, config, "out_dir", "runs")
    try:
        count = 0
        for record in run_eval(
            manifest, out_dir=out_dir, resume_existing=bool(args.resume)
        ):
            count += 1
            if not args.quiet:
                sub = "" if record.subproblem_index is None else f"#{record.subproblem_index}"
                print(
                    f"[{count}] {record.problem_id}/{record.mode.value}"
                    f"/{record.sample_index}{sub} reward={record.grade.reward} "
                    f"({record.endpoint_status})",
                    file=sys.stderr,
                )
    except (RunError, DatasetError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(f"completed {count} new records in {Path(out_dir) / manifest.run_id}")
    return 0


def cmd_resume(args: argparse.Namespace) -> int:
    try:
        count = 0
        for _ in resume_run(args.run_dir, concurrency_limit=args.concurrency):
            count += 1
    except (RunError, DatasetError) as exc:
        print(f"resume failed: {exc}", file=sys.stderr)
        return 1
    print(f"completed {count} new records in {args.run_dir}")
    return 0


def _aggregate_block(outcomes) -> dict[str, Any]:
    from .metrics import aggregate_outcomes

    agg = aggregate_outcomes(outcomes)
    return {
        "n_problems": agg.n_problems,
        "avg_at_n": agg.avg_at_n,
        "pass_at_1": agg.pass_at_1,
        "mean_ssr": agg.mean_ssr,
    }


def cmd_metrics(args: argparse.Namespace) -> int:
    manifest = load_run_manifest(args.run_dir)
    records = load_run_records(args.run_dir)
    outcomes = records_to_outcomes(records, collapse=args.collapse)
    problems = {p.id: p for p in load_dataset(args.dataset or manifest.dataset)}
    per_problem = []
    for outcome in outcomes:
        n = len(outcome.correct_flags)
        c = sum(outcome.correct_flags)
        row: dict[str, Any] = {
            "problem_id": outcome.problem_id,
            "mode": outcome.mode_label,
            "n_samples": n,
            "n_correct": c,
            "avg_at_n": c / n,
            "pass_at_1": pass_at_k(n, c, 1),
        }
        if outcome.subproblem_flags is not None:
            row["ssr"] = ssr(outcome.subproblem_flags)
        per_problem.append(row)
    by_source: dict[str, list] = {}
    by_difficulty: dict[int, list] = {}
    for outcome in outcomes:
        problem = problems[outcome.problem_id]
        by_source.setdefault(problem.source, []).append(outcome)
        by_difficulty.setdefault(problem.difficulty, []).append(outcome)
    payload = {
        "run_id": manifest.run_id,
        "collapse": args.collapse,
        "per_problem": per_problem,
        "aggregates": {
            "all": _aggregate_block(outcomes),
            "by_source": {k: _aggregate_block(v) for k, v in sorted(by_source.items())},
            "by_difficulty": {
                str(k): _aggregate_block(v) for k, v in sorted(by_difficulty.items())
            },
        },
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.csv:
        import csv as csv_module

        fields = ["problem_id", "mode", "n_samples", "n_correct", "avg_at_n", "pass_at_1", "ssr"]
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv_module.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in per_problem:
                writer.writerow({k: row.get(k, "") for k in fields})
    return 0


def cmd_curriculum_build(args: argparse.Namespace) -> int:
    problems = load_dataset(args.dataset)
    records = load_run_records(args.run_dir)
    mode = PromptMode.parse(args.mode)
    flags: dict[str, list[bool]] = {}
    for record in records:
        if record.mode is not mode or record.subproblem_index is not None:
            continue
        flags.setdefault(record.problem_id, []).append(record.grade.answer_correct)
    try:
        hard = filter_hard(flags, attempts=args.attempts)
        rows = build_stage2_records(
            problems, hard, mix_count=args.mix_count, seed=args.mix_seed
        )
    except CurriculumError as exc:
        print(f"curriculum build failed: {exc}", file=sys.stderr)
        return 1
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(
        f"hard problems: {len(hard)} of {len(flags)}; wrote {len(rows)} records "
        f"to {args.output}"
    )
    return 0


def cmd_kernel_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(instances=args.instances, seed=args.seed)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        detail = f" ({result.detail})" if result.detail else ""
        print(f"{status}: {result.name}{detail}")
        failed += 0 if result.passed else 1
    return 1 if failed else 0


def cmd_report(args: argparse.Namespace) -> int:
    renderer = RENDERERS[args.format]
    if args.fixture:
        print(renderer([reported_table()]), end="")
        return 0
    if not args.run_dirs:
        print("at least one run directory (or --fixture) is required", file=sys.stderr)
        return 2
    tables = []
    datasets_seen = set()
    loaded = []
    for run_dir in args.run_dirs:
        manifest = load_run_manifest(run_dir)
        records = load_run_records(run_dir)
        problems = load_dataset(args.dataset or manifest.dataset)
        datasets_seen.add(args.dataset or manifest.dataset)
        missing = expected_keys(manifest, problems) - {r.key for r in records}
        if missing and not args.partial_ok:
            print(
                f"run {manifest.run_id!r} is incomplete ({len(missing)} cells missing); "
                "pass --partial-ok to report anyway",
                file=sys.stderr,
            )
            return 1
        loaded.append((manifest, records, {p.id: p for p in problems}))
    if len(datasets_seen) > 1 and not args.force:
        print(
            f"runs cover different datasets {sorted(datasets_seen)}; "
            "pass --force to combine them",
            file=sys.stderr,
        )
        return 1
    for manifest, records, problem_map in loaded:
        outcomes = records_to_outcomes(records, collapse=args.collapse)
        tables.append(
            benchmark_table(manifest.run_id, outcomes, problem_map, collapse=args.collapse)
        )
        tables.append(difficulty_table(manifest.run_id, outcomes, problem_map))
        if args.compare_fixture:
            vanilla = [
                o for o in outcomes if o.mode_label == PromptMode.VANILLA.value
            ]
            measured: dict[str, list[float]] = {}
            for outcome in vanilla:
                source = problem_map[outcome.problem_id].source
                measured.setdefault(source, []).append(
                    sum(outcome.correct_flags) / len(outcome.correct_flags)
                )
            try:
                tables.append(
                    compare_with_reported(
                        args.compare_fixture,
                        {k: sum(v) / len(v) for k, v in measured.items()},
                    )
                )
            except ReportError as exc:
                print(str(exc), file=sys.stderr)
                return 1
    print(renderer(tables), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reasoneval",
        description="Fine-grained evaluation of math-reasoning models.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a JSONL dataset")
    p.add_argument("dataset", nargs="?", default="")
    p.add_argument("--print-schema", action="store_true", help="print the schema document")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("render", help="render a prompt for one problem and mode")
    p.add_argument("--dataset", required=True)
    p.add_argument("--problem-id", required=True)
    p.add_argument("--mode", required=True)
    p.add_argument("--subproblem", type=int, help="1-based chain step for subproblem modes")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("grade", help="grade a completion file against a reference answer")
    p.add_argument("completion", help="completion file, or - for stdin")
    p.add_argument("--reference", help="reference answer text")
    p.add_argument("--reference-file")
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("run", help="execute an evaluation run")
    p.add_argument("--config", help="JSON (or TOML on 3.11+) config file")
    p.add_argument("--run-id")
    p.add_argument("--dataset")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--modes", help="comma list: vanilla,plan,knowledge,subproblems")
    p.add_argument("--samples", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int, dest="max_tokens")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--resume", action="store_true", help="continue an existing run")
    p.add_argument(
        "--chain-model-answers",
        action="store_true",
        default=None,
        dest="chain_model_answers",
        help="feed the model's own subproblem answers forward instead of reference answers",
    )
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue an interrupted run from its directory")
    p.add_argument("run_dir")
    p.add_argument("--concurrency", type=int)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("metrics", help="compute metrics JSON (and CSV) from a run log")
    p.add_argument("run_dir")
    p.add_argument("--dataset", help="override the dataset path stored in the manifest")
    p.add_argument("--collapse", choices=("majority", "per_sample"), default="majority")
    p.add_argument("--output", help="write JSON here instead of stdout")
    p.add_argument("--csv", help="also write per-problem rows as CSV")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("curriculum", help="curriculum construction")
    curriculum_sub = p.add_subparsers(dest="curriculum_command", required=True)
    pb = curriculum_sub.add_parser(
        "build", help="filter hard problems from a run and emit the augmented set"
    )
    pb.add_argument("--dataset", required=True)
    pb.add_argument("--run-dir", required=True)
    pb.add_argument("--output", required=True)
    pb.add_argument("--attempts", type=int, default=20)
    pb.add_argument("--mode", default="vanilla", help="which run mode counts as an attempt")
    pb.add_argument("--mix-count", type=int, default=0, dest="mix_count")
    pb.add_argument("--mix-seed", type=int, default=0, dest="mix_seed")
    pb.set_defaults(func=cmd_curriculum_build)

    p = sub.add_parser("kernel", help="policy-objective kernel utilities")
    kernel_sub = p.add_subparsers(dest="kernel_command", required=True)
    ps = kernel_sub.add_parser("selftest", help="run the kernel oracle comparisons")
    ps.add_argument("--instances", type=int, default=1000)
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(func=cmd_kernel_selftest)

    p = sub.add_parser("report", help="render comparison tables from run logs")
    p.add_argument("run_dirs", nargs="*")
    p.add_argument("--format", choices=sorted(RENDERERS), default="markdown")
    p.add_argument("--dataset", help="override the dataset path stored in manifests")
    p.add_argument("--collapse", choices=("majority", "per_sample"), default="majority")
    p.add_argument("--fixture", action="store_true", help="render the reported-results fixture")
    p.add_argument(
        "--compare-fixture",
        metavar="ROW",
        help="append a measured-vs-reported table for one fixture row",
    )
    p.add_argument("--partial-ok", action="store_true", help="report incomplete runs")
    p.add_argument("--force", action="store_true", help="combine runs over different datasets")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate" and not args.dataset and not args.print_schema:
        parser.error("validate needs a dataset path or --print-schema")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
