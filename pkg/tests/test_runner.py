from __future__ import annotations

import json
import threading
import time

import httpx
import pytest

from conftest import boxed_completion, make_problem

from reasoneval.runner import (
    CompletionRecord,
    RunError,
    RunLog,
    RunManifest,
    expected_keys,
    load_run_records,
    resume,
    run,
)
from reasoneval.templates import PromptMode


class RecordingEndpoint:
    """Mock endpoint keyed by the request tag, with call accounting,
    per-tag failure injection, and concurrency tracking."""

    def __init__(self, table=None, fail_first=None, status=500, delay=0.0, reply=None):
        self.table = table or {}
        self.fail_first = dict(fail_first or {})
        self.status = status
        self.delay = delay
        self.reply = reply  # optional callable(tag, prompt) -> text
        self.calls: list[str] = []
        self.prompts: dict[str, str] = {}
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight = 0

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self)

    def __call__(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content.decode("utf-8"))
        tag = body["user"]
        prompt = body["messages"][0]["content"]
        with self._lock:
            self.calls.append(tag)
            self.prompts[tag] = prompt
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
            remaining_failures = self.fail_first.get(tag, 0)
            if remaining_failures:
                self.fail_first[tag] = remaining_failures - 1
        try:
            if self.delay:
                time.sleep(self.delay)
            if remaining_failures:
                return httpx.Response(self.status, json={"error": "injected"})
            if self.reply is not None:
                text = self.reply(tag, prompt)
            else:
                text = self.table.get(tag, boxed_completion("0"))
            return httpx.Response(
                200,
                json={"choices": [{"message": {"role": "assistant", "content": text}}]},
            )
        finally:
            with self._lock:
                self._in_flight -= 1


def make_manifest(tmp_path, problems, **overrides):
    defaults = dict(
        run_id="test-run",
        dataset=str(tmp_path / "unused.jsonl"),
        modes=(PromptMode.VANILLA,),
        samples_per_problem=8,
        temperature=0.0,
        max_tokens=256,
        endpoint="http://mock/v1/chat/completions",
        model_name="mock-model",
        concurrency_limit=4,
    )
    defaults.update(overrides)
    return RunManifest(**defaults)


def correct_table(problems, modes, samples):
    table = {}
    for p in problems:
        for mode in modes:
            for s in range(samples):
                table[f"{p.id}/{mode}/{s}"] = boxed_completion(p.reference_answer)
    return table


# --- counting and grading ------------------------------------------------------

def test_two_problems_vanilla_n8_gives_16_records(tmp_path):
    problems = [make_problem("a", answer="1"), make_problem("b", answer="2")]
    endpoint = RecordingEndpoint(correct_table(problems, ["vanilla"], 8))
    manifest = make_manifest(tmp_path, problems)
    records = list(
        run(manifest, problems, out_dir=tmp_path / "runs", transport=endpoint.transport())
    )
    assert len(records) == 16
    assert len(endpoint.calls) == 16
    assert all(r.grade.reward == 2 for r in records)
    assert all(r.endpoint_status == "ok" for r in records)


def test_subproblem_protocol_one_record_per_subproblem(tmp_path):
    problem = make_problem("chain", n_subproblems=3)
    endpoint = RecordingEndpoint(reply=lambda tag, prompt: boxed_completion("1"))
    manifest = make_manifest(
        tmp_path,
        [problem],
        modes=(PromptMode.SUBPROBLEM_FIRST, PromptMode.SUBPROBLEM_NEXT),
        samples_per_problem=1,
    )
    records = list(
        run(manifest, [problem], out_dir=tmp_path / "runs", transport=endpoint.transport())
    )
    assert len(records) == 3
    by_sub = {r.subproblem_index: r for r in records}
    assert by_sub[1].mode is PromptMode.SUBPROBLEM_FIRST
    assert by_sub[2].mode is PromptMode.SUBPROBLEM_NEXT
    for j in (1, 2, 3):
        prompt = endpoint.prompts[f"chain/{by_sub[j].mode.value}/0/{j}"]
        assert prompt.count("Subproblem Answer:") == j - 1


def test_subproblem_records_use_subproblem_references(tmp_path):
    problem = make_problem("chain", n_subproblems=2)
    # answers 11 and 21 per make_problem; reply with the right one per step
    def reply(tag, prompt):
        sub_index = int(tag.rsplit("/", 1)[1])
        return boxed_completion(problem.subproblems[sub_index - 1].reference_answer)

    endpoint = RecordingEndpoint(reply=reply)
    manifest = make_manifest(
        tmp_path,
        [problem],
        modes=(PromptMode.SUBPROBLEM_FIRST, PromptMode.SUBPROBLEM_NEXT),
        samples_per_problem=2,
    )
    records = list(
        run(manifest, [problem], out_dir=tmp_path / "runs", transport=endpoint.transport())
    )
    assert len(records) == 4
    assert all(r.grade.reward == 2 for r in records)


def test_problems_without_subproblems_are_skipped_in_subproblem_modes(tmp_path):
    problems = [make_problem("plain"), make_problem("deep", n_subproblems=2)]
    endpoint = RecordingEndpoint(reply=lambda tag, prompt: boxed_completion("1"))
    manifest = make_manifest(
        tmp_path,
        problems,
        modes=(PromptMode.SUBPROBLEM_FIRST, PromptMode.SUBPROBLEM_NEXT),
        samples_per_problem=1,
    )
    records = list(
        run(manifest, problems, out_dir=tmp_path / "runs", transport=endpoint.transport())
    )
    assert {r.problem_id for r in records} == {"deep"}
    assert len(records) == 2


def test_missing_plan_aborts_before_any_call(tmp_path):
    problems = [make_problem("no-plan")]
    endpoint = RecordingEndpoint()
    manifest = make_manifest(tmp_path, problems, modes=(PromptMode.WITH_PLAN,))
    with pytest.raises(RunError, match="no plan"):
        list(
            run(
                manifest,
                problems,
                out_dir=tmp_path / "runs",
                transport=endpoint.transport(),
            )
        )
    assert endpoint.calls == []


# --- retries ---------------------------------------------------------------------

def test_transient_500_is_retried(tmp_path):
    problem = make_problem("a", answer="5")
    tag = "a/vanilla/0"
    endpoint = RecordingEndpoint(
        table={tag: boxed_completion("5")}, fail_first={tag: 2}
    )
    manifest = make_manifest(tmp_path, [problem], samples_per_problem=1)
    records = list(
        run(
            manifest,
            [problem],
            out_dir=tmp_path / "runs",
            transport=endpoint.transport(),
            backoff_base=0.0,
        )
    )
    assert len(records) == 1
    assert records[0].endpoint_status == "retried"
    assert records[0].grade.reward == 2
    assert len(endpoint.calls) == 3


def test_exhausted_retries_mark_failed_and_run_continues(tmp_path):
    problems = [make_problem("bad", answer="5"), make_problem("good", answer="6")]
    endpoint = RecordingEndpoint(
        table={"good/vanilla/0": boxed_completion("6")},
        fail_first={"bad/vanilla/0": 99},
    )
    manifest = make_manifest(tmp_path, problems, samples_per_problem=1)
    records = list(
        run(
            manifest,
            problems,
            out_dir=tmp_path / "runs",
            transport=endpoint.transport(),
            backoff_base=0.0,
        )
    )
    by_id = {r.problem_id: r for r in records}
    assert by_id["bad"].endpoint_status == "failed"
    assert by_id["bad"].raw_completion == ""
    assert by_id["bad"].grade.reward == -1
    assert by_id["good"].grade.reward == 2
    assert endpoint.calls.count("bad/vanilla/0") == 5


def test_client_error_is_not_retried(tmp_path):
    problem = make_problem("a")
    endpoint = RecordingEndpoint(fail_first={"a/vanilla/0": 99}, status=400)
    manifest = make_manifest(tmp_path, [problem], samples_per_problem=1)
    records = list(
        run(
            manifest,
            [problem],
            out_dir=tmp_path / "runs",
            transport=endpoint.transport(),
            backoff_base=0.0,
        )
    )
    assert records[0].endpoint_status == "failed"
    assert endpoint.calls.count("a/vanilla/0") == 1


# --- concurrency -------------------------------------------------------------------

def test_in_flight_requests_bounded_by_limit(tmp_path):
    problems = [make_problem(f"p{i}", answer=str(i)) for i in range(6)]
    endpoint = RecordingEndpoint(
        delay=0.01, reply=lambda tag, prompt: boxed_completion("0")
    )
    manifest = make_manifest(
        tmp_path, problems, samples_per_problem=5, concurrency_limit=3
    )
    records = list(
        run(manifest, problems, out_dir=tmp_path / "runs", transport=endpoint.transport())
    )
    assert len(records) == 30
    assert endpoint.max_in_flight <= 3
    assert endpoint.max_in_flight >= 2  # sanity: it actually ran concurrently


# --- resume -------------------------------------------------------------------------

def test_resume_fetches_only_missing_cells(tmp_path):
    problems = [make_problem("a", answer="1"), make_problem("b", answer="2")]
    table = correct_table(problems, ["vanilla"], 8)
    endpoint = RecordingEndpoint(table)
    manifest = make_manifest(tmp_path, problems)
    out_dir = tmp_path / "runs"
    list(run(manifest, problems, out_dir=out_dir, transport=endpoint.transport()))

    log_path = out_dir / "test-run" / "records.jsonl"
    lines = log_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 16
    log_path.write_text("\n".join(lines[:10]) + "\n", encoding="utf-8")

    resumed_endpoint = RecordingEndpoint(table)
    new_records = list(
        resume(out_dir / "test-run", transport=resumed_endpoint.transport())
    )
    assert len(new_records) == 6
    assert len(resumed_endpoint.calls) == 6
    kept = {tuple(json.loads(line)["problem_id"] for line in lines[:10])}
    final = load_run_records(out_dir / "test-run")
    assert len(final) == 16
    assert len({r.key for r in final}) == 16


def test_resume_on_complete_run_makes_zero_calls(tmp_path):
    problems = [make_problem("a", answer="1")]
    table = correct_table(problems, ["vanilla"], 8)
    endpoint = RecordingEndpoint(table)
    manifest = make_manifest(tmp_path, [problems[0]])
    out_dir = tmp_path / "runs"
    list(run(manifest, problems, out_dir=out_dir, transport=endpoint.transport()))
    resumed_endpoint = RecordingEndpoint(table)
    assert list(resume(out_dir / "test-run", transport=resumed_endpoint.transport())) == []
    assert resumed_endpoint.calls == []


def test_resume_drops_torn_final_line_and_refetches(tmp_path):
    problems = [make_problem("a", answer="1")]
    table = correct_table(problems, ["vanilla"], 8)
    manifest = make_manifest(tmp_path, problems, samples_per_problem=4)
    out_dir = tmp_path / "runs"
    list(
        run(
            manifest,
            problems,
            out_dir=out_dir,
            transport=RecordingEndpoint(table).transport(),
        )
    )
    log_path = out_dir / "test-run" / "records.jsonl"
    lines = log_path.read_text(encoding="utf-8").splitlines()
    torn = lines[3][: len(lines[3]) // 2]
    log_path.write_text("\n".join(lines[:3]) + "\n" + torn, encoding="utf-8")

    resumed_endpoint = RecordingEndpoint(table)
    new_records = list(
        resume(out_dir / "test-run", transport=resumed_endpoint.transport())
    )
    assert len(new_records) == 1
    final = load_run_records(out_dir / "test-run")
    assert len(final) == 4
    assert len({r.key for r in final}) == 4


def test_changed_manifest_is_refused(tmp_path):
    problems = [make_problem("a", answer="1")]
    table = correct_table(problems, ["vanilla"], 8)
    manifest = make_manifest(tmp_path, problems)
    out_dir = tmp_path / "runs"
    list(
        run(
            manifest,
            problems,
            out_dir=out_dir,
            transport=RecordingEndpoint(table).transport(),
        )
    )
    hotter = make_manifest(tmp_path, problems, temperature=1.0)
    with pytest.raises(RunError, match="different manifest"):
        list(
            run(
                hotter,
                problems,
                out_dir=out_dir,
                transport=RecordingEndpoint(table).transport(),
                resume_existing=True,
            )
        )


def test_rerun_without_resume_flag_is_refused(tmp_path):
    problems = [make_problem("a", answer="1")]
    table = correct_table(problems, ["vanilla"], 8)
    manifest = make_manifest(tmp_path, problems)
    out_dir = tmp_path / "runs"
    list(
        run(
            manifest,
            problems,
            out_dir=out_dir,
            transport=RecordingEndpoint(table).transport(),
        )
    )
    with pytest.raises(RunError, match="already exists"):
        list(
            run(
                manifest,
                problems,
                out_dir=out_dir,
                transport=RecordingEndpoint(table).transport(),
            )
        )


def test_concurrency_change_does_not_invalidate_resume(tmp_path):
    problems = [make_problem("a", answer="1")]
    table = correct_table(problems, ["vanilla"], 8)
    manifest = make_manifest(tmp_path, problems, samples_per_problem=2)
    out_dir = tmp_path / "runs"
    list(
        run(
            manifest,
            problems,
            out_dir=out_dir,
            transport=RecordingEndpoint(table).transport(),
        )
    )
    new_records = list(
        resume(
            out_dir / "test-run",
            transport=RecordingEndpoint(table).transport(),
            concurrency_limit=16,
        )
    )
    assert new_records == []


# --- chaining model answers -----------------------------------------------------------

def test_chained_answers_appear_in_later_prompts(tmp_path):
    problem = make_problem("chain", n_subproblems=3)

    def reply(tag, prompt):
        sub_index = int(tag.rsplit("/", 1)[1])
        return boxed_completion(f"model-{sub_index}")

    endpoint = RecordingEndpoint(reply=reply)
    manifest = make_manifest(
        tmp_path,
        [problem],
        modes=(PromptMode.SUBPROBLEM_FIRST, PromptMode.SUBPROBLEM_NEXT),
        samples_per_problem=1,
        chain_model_answers=True,
    )
    list(
        run(manifest, [problem], out_dir=tmp_path / "runs", transport=endpoint.transport())
    )
    third_prompt = endpoint.prompts["chain/subproblem_next/0/3"]
    assert "Subproblem Answer: model-1" in third_prompt
    assert "Subproblem Answer: model-2" in third_prompt


def test_chaining_requires_full_protocol(tmp_path):
    with pytest.raises(RunError, match="both subproblem modes"):
        make_manifest(
            tmp_path,
            [],
            modes=(PromptMode.SUBPROBLEM_FIRST,),
            chain_model_answers=True,
        )


# --- log and record plumbing -----------------------------------------------------------

def test_run_log_rejects_mid_file_corruption(tmp_path):
    problems = [make_problem("a", answer="1")]
    table = correct_table(problems, ["vanilla"], 8)
    manifest = make_manifest(tmp_path, problems, samples_per_problem=3)
    out_dir = tmp_path / "runs"
    list(
        run(
            manifest,
            problems,
            out_dir=out_dir,
            transport=RecordingEndpoint(table).transport(),
        )
    )
    log_path = out_dir / "test-run" / "records.jsonl"
    lines = log_path.read_text(encoding="utf-8").splitlines()
    lines[1] = lines[1][:10]
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(RunError, match="corrupt"):
        RunLog(log_path).load()


def test_completion_record_round_trips(tmp_path):
    problems = [make_problem("a", answer="1")]
    table = correct_table(problems, ["vanilla"], 8)
    manifest = make_manifest(tmp_path, problems, samples_per_problem=1)
    records = list(
        run(
            manifest,
            problems,
            out_dir=tmp_path / "runs",
            transport=RecordingEndpoint(table).transport(),
        )
    )
    record = records[0]
    assert CompletionRecord.from_dict(json.loads(json.dumps(record.to_dict()))) == record


def test_expected_keys_counts_all_cells(tmp_path):
    problems = [make_problem("a", n_subproblems=2), make_problem("b")]
    manifest = make_manifest(
        tmp_path,
        problems,
        modes=(
            PromptMode.VANILLA,
            PromptMode.SUBPROBLEM_FIRST,
            PromptMode.SUBPROBLEM_NEXT,
        ),
        samples_per_problem=2,
    )
    keys = expected_keys(manifest, problems)
    # vanilla: 2 problems x 2 samples; subproblems: only "a", 2 subs x 2 samples
    assert len(keys) == 4 + 4
    assert ("b", "vanilla", 1, None) in keys
    assert ("a", "subproblem_next", 1, 2) in keys


def test_identical_manifests_yield_identical_logs(tmp_path):
    problems = [make_problem("a", answer="1"), make_problem("b", answer="2")]
    table = correct_table(problems, ["vanilla"], 4)

    def run_once(out_dir):
        manifest = make_manifest(tmp_path, problems, samples_per_problem=4)
        list(
            run(
                manifest,
                problems,
                out_dir=out_dir,
                transport=RecordingEndpoint(table).transport(),
            )
        )
        return [
            {**r.to_dict(), "timing_ms": None}
            for r in load_run_records(out_dir / "test-run")
        ]

    assert run_once(tmp_path / "r1") == run_once(tmp_path / "r2")
