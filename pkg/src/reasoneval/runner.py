"""Evaluation run orchestration against a chat-completion endpoint.

A run is defined by a manifest (dataset, modes, sample count, sampling
parameters, endpoint) and produces one graded record per (problem, mode,
sample) cell; the incremental subproblem protocol produces one record per
subproblem per sample instead. Records are appended to a JSONL run log as
they complete, so a crashed run can be resumed: only missing cells are
fetched, completed cells are never re-requested, and a torn final line is
dropped and re-fetched. The wire protocol is OpenAI-style chat
completions, one request per sample (n=1), with bounded concurrency and
exponential-backoff retries on transport errors, 429s, and 5xx responses.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

import httpx

from .dataset import AugmentedProblem, load_dataset
from .grading import GradeResult, extract_answer, grade
from .templates import (
    PromptMode,
    SubproblemContext,
    render,
    subproblem_contexts,
)

API_KEY_ENV_VARS = ("REASONEVAL_API_KEY", "OPENAI_API_KEY")
CHAIN_MODES = {PromptMode.SUBPROBLEM_FIRST, PromptMode.SUBPROBLEM_NEXT}
RETRY_ATTEMPTS = 5
RETRY_STATUS = {429, 500, 502, 503, 504}

MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "records.jsonl"


class RunError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    dataset: str
    modes: tuple[PromptMode, ...]
    samples_per_problem: int
    temperature: float = 0.6
    max_tokens: int = 16384
    endpoint: str = ""
    model_name: str = ""
    concurrency_limit: int = 4
    seed: int | None = None
    chain_model_answers: bool = False

    def __post_init__(self) -> None:
        if not self.run_id:
            raise RunError("run_id must be non-empty")
        if not self.modes:
            raise RunError("at least one mode required")
        if self.samples_per_problem < 1:
            raise RunError("samples_per_problem must be >= 1")
        if self.temperature < 0:
            raise RunError("temperature must be >= 0")
        if self.concurrency_limit < 1:
            raise RunError("concurrency_limit must be >= 1")
        if self.chain_model_answers and not CHAIN_MODES <= set(self.modes):
            raise RunError(
                "chaining model answers requires both subproblem modes in the manifest"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "dataset": self.dataset,
            "modes": [m.value for m in self.modes],
            "samples_per_problem": self.samples_per_problem,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "endpoint": self.endpoint,
            "model_name": self.model_name,
            "concurrency_limit": self.concurrency_limit,
            "seed": self.seed,
            "chain_model_answers": self.chain_model_answers,
        }

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "RunManifest":
        return cls(
            run_id=record["run_id"],
            dataset=record["dataset"],
            modes=tuple(PromptMode.parse(m) for m in record["modes"]),
            samples_per_problem=int(record["samples_per_problem"]),
            temperature=float(record.get("temperature", 0.6)),
            max_tokens=int(record.get("max_tokens", 16384)),
            endpoint=record.get("endpoint", ""),
            model_name=record.get("model_name", ""),
            concurrency_limit=int(record.get("concurrency_limit", 4)),
            seed=record.get("seed"),
            chain_model_answers=bool(record.get("chain_model_answers", False)),
        )

    def result_hash(self) -> str:
        """Hash of every field that affects record content.

        The concurrency limit is a scheduling knob, not a result knob, so
        it may change across resume.
        """
        payload = self.to_dict()
        payload.pop("concurrency_limit")
        payload["modes"] = sorted(payload["modes"])
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


RecordKey = tuple[str, str, int, "int | None"]


@dataclass(frozen=True)
class CompletionRecord:
    run_id: str
    problem_id: str
    mode: PromptMode
    sample_index: int
    subproblem_index: int | None
    prompt_hash: str
    raw_completion: str
    grade: GradeResult
    timing_ms: float
    endpoint_status: str  # ok | retried | failed

    @property
    def key(self) -> RecordKey:
        return (self.problem_id, self.mode.value, self.sample_index, self.subproblem_index)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "problem_id": self.problem_id,
            "mode": self.mode.value,
            "sample_index": self.sample_index,
            "subproblem_index": self.subproblem_index,
            "prompt_hash": self.prompt_hash,
            "raw_completion": self.raw_completion,
            "grade": self.grade.to_dict(),
            "timing_ms": self.timing_ms,
            "endpoint_status": self.endpoint_status,
        }

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "CompletionRecord":
        return cls(
            run_id=record["run_id"],
            problem_id=record["problem_id"],
            mode=PromptMode.parse(record["mode"]),
            sample_index=int(record["sample_index"]),
            subproblem_index=(
                None if record.get("subproblem_index") is None
                else int(record["subproblem_index"])
            ),
            prompt_hash=record.get("prompt_hash", ""),
            raw_completion=record.get("raw_completion", ""),
            grade=GradeResult.from_dict(record["grade"]),
            timing_ms=float(record.get("timing_ms", 0.0)),
            endpoint_status=record.get("endpoint_status", "ok"),
        )


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ChatCompletionClient:
    """Minimal OpenAI-compatible chat-completions client with retries."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        temperature: float,
        max_tokens: int,
        seed: int | None = None,
        transport: httpx.BaseTransport | None = None,
        backoff_base: float = 0.5,
        timeout: float = 120.0,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.seed = seed
        self.backoff_base = backoff_base
        headers = {}
        api_key = next(
            (os.environ[v] for v in API_KEY_ENV_VARS if os.environ.get(v)), None
        )
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(transport=transport, headers=headers, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def complete(self, prompt: str, request_tag: str) -> tuple[str, str]:
        """Fetch one completion; returns (text, status).

        status is "ok" on first-try success, "retried" after recovered
        failures, "failed" when all attempts are exhausted (text is then
        empty). The request tag rides in the standard ``user`` field so
        deterministic test doubles can key canned outputs per sample.
        """
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "n": 1,
            "user": request_tag,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        retried = False
        for attempt in range(1, RETRY_ATTEMPTS + 1):
            try:
                response = self._client.post(self.endpoint, json=body)
            except httpx.TransportError:
                response = None
            if response is not None and response.status_code == 200:
                text = response.json()["choices"][0]["message"]["content"]
                return text, ("retried" if retried else "ok")
            if response is not None and response.status_code not in RETRY_STATUS:
                return "", "failed"  # non-retryable client error
            retried = True
            if attempt < RETRY_ATTEMPTS and self.backoff_base > 0:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
        return "", "failed"


class RunLog:
    """Append-only JSONL record log with single-writer discipline."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._lock = threading.Lock()

    def append(self, record: CompletionRecord) -> None:
        line = json.dumps(record.to_dict(), ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(line + "\n")
                fh.flush()

    def load(self) -> list[CompletionRecord]:
        """Replay the log; a torn final line is dropped (crash recovery),
        corruption anywhere else is an error."""
        if not self.path.exists():
            return []
        records: list[CompletionRecord] = []
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.readlines()
        seen: set[RecordKey] = set()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = CompletionRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                if lineno == len(lines):
                    break  # partial final append from a crash
                raise RunError(f"{self.path}:{lineno}: corrupt record: {exc}") from exc
            if record.key in seen:
                raise RunError(f"{self.path}:{lineno}: duplicate record key {record.key}")
            seen.add(record.key)
            records.append(record)
        return records


@dataclass
class _Job:
    """One unit of work; yields one record per planned cell."""

    problem: AugmentedProblem
    mode: PromptMode
    sample_index: int
    subproblem_index: int | None = None
    chain: bool = False  # run the whole subproblem chain sequentially
    existing: dict[int, CompletionRecord] = field(default_factory=dict)


def _plan_jobs(
    manifest: RunManifest,
    problems: Sequence[AugmentedProblem],
    done: set[RecordKey],
    existing_by_key: dict[RecordKey, CompletionRecord],
) -> list[_Job]:
    jobs: list[_Job] = []
    chain = manifest.chain_model_answers
    plain_modes = [m for m in manifest.modes if m not in CHAIN_MODES]
    sub_modes = [m for m in manifest.modes if m in CHAIN_MODES]
    for problem in problems:
        for mode in plain_modes:
            for s in range(manifest.samples_per_problem):
                if (problem.id, mode.value, s, None) in done:
                    continue
                jobs.append(_Job(problem=problem, mode=mode, sample_index=s))
        if not sub_modes or not problem.subproblems:
            continue
        for s in range(manifest.samples_per_problem):
            if chain:
                existing = {
                    idx: existing_by_key[(problem.id, m.value, s, idx)]
                    for idx in range(1, len(problem.subproblems) + 1)
                    for m in CHAIN_MODES
                    if (problem.id, m.value, s, idx) in existing_by_key
                }
                if len(existing) == len(problem.subproblems):
                    continue
                jobs.append(
                    _Job(
                        problem=problem,
                        mode=PromptMode.SUBPROBLEM_FIRST,
                        sample_index=s,
                        chain=True,
                        existing=existing,
                    )
                )
                continue
            for sub in problem.subproblems:
                if sub.index == 1:
                    mode = PromptMode.SUBPROBLEM_FIRST
                else:
                    mode = PromptMode.SUBPROBLEM_NEXT
                if mode not in sub_modes:
                    continue
                if (problem.id, mode.value, s, sub.index) in done:
                    continue
                jobs.append(
                    _Job(
                        problem=problem,
                        mode=mode,
                        sample_index=s,
                        subproblem_index=sub.index,
                    )
                )
    return jobs


def _check_modes_supported(
    manifest: RunManifest,
    problems: Sequence[AugmentedProblem],
) -> None:
    """Abort before any endpoint call when a problem lacks the
    augmentation one of the manifest's plain modes needs."""
    for problem in problems:
        if PromptMode.WITH_PLAN in manifest.modes and not problem.plan:
            raise RunError(f"problem {problem.id!r} has no plan; cannot run plan mode")
        if PromptMode.WITH_KNOWLEDGE in manifest.modes and not problem.knowledge:
            raise RunError(
                f"problem {problem.id!r} has no knowledge items; cannot run knowledge mode"
            )


def expected_keys(
    manifest: RunManifest,
    problems: Sequence[AugmentedProblem],
) -> set[RecordKey]:
    """Every record key a complete run of this manifest must contain."""
    keys: set[RecordKey] = set()
    plain_modes = [m for m in manifest.modes if m not in CHAIN_MODES]
    sub_modes = set(manifest.modes) & CHAIN_MODES
    for problem in problems:
        for mode in plain_modes:
            for s in range(manifest.samples_per_problem):
                keys.add((problem.id, mode.value, s, None))
        for sub in problem.subproblems:
            mode = PromptMode.SUBPROBLEM_FIRST if sub.index == 1 else PromptMode.SUBPROBLEM_NEXT
            if mode not in sub_modes:
                continue
            for s in range(manifest.samples_per_problem):
                keys.add((problem.id, mode.value, s, sub.index))
    return keys


def _execute_job(
    job: _Job,
    manifest: RunManifest,
    client: ChatCompletionClient,
    log: RunLog,
) -> list[CompletionRecord]:
    if job.chain:
        return _execute_chain(job, manifest, client, log)
    problem = job.problem
    if job.subproblem_index is None:
        prompt = render(problem, job.mode)
        reference = problem.reference_answer
    else:
        ctx = subproblem_contexts(problem)[job.subproblem_index - 1]
        prompt = render(problem, job.mode, ctx)
        reference = problem.subproblems[job.subproblem_index - 1].reference_answer
    record = _fetch_and_grade(
        manifest, client, problem.id, job.mode, job.sample_index,
        job.subproblem_index, prompt, reference,
    )
    log.append(record)
    return [record]


def _execute_chain(
    job: _Job,
    manifest: RunManifest,
    client: ChatCompletionClient,
    log: RunLog,
) -> list[CompletionRecord]:
    """Run one sample's subproblem chain, feeding the model's own earlier
    answers forward. Already-logged steps are reused, not re-fetched."""
    problem = job.problem
    produced: list[CompletionRecord] = []
    answers: list[str] = []
    for sub in problem.subproblems:
        mode = PromptMode.SUBPROBLEM_FIRST if sub.index == 1 else PromptMode.SUBPROBLEM_NEXT
        prior = job.existing.get(sub.index)
        if prior is not None:
            answers.append(prior.grade.extracted_answer or "")
            continue
        ctx = SubproblemContext(
            main_problem=problem.question,
            solved=tuple(
                (problem.subproblems[j].question, answers[j]) for j in range(sub.index - 1)
            ),
            current=sub.question,
        )
        prompt = render(problem, mode, ctx)
        record = _fetch_and_grade(
            manifest, client, problem.id, mode, job.sample_index,
            sub.index, prompt, sub.reference_answer,
        )
        log.append(record)
        produced.append(record)
        answers.append(record.grade.extracted_answer or "")
    return produced


def _fetch_and_grade(
    manifest: RunManifest,
    client: ChatCompletionClient,
    problem_id: str,
    mode: PromptMode,
    sample_index: int,
    subproblem_index: int | None,
    prompt: str,
    reference: str,
) -> CompletionRecord:
    tag = f"{problem_id}/{mode.value}/{sample_index}"
    if subproblem_index is not None:
        tag += f"/{subproblem_index}"
    started = time.monotonic()
    text, status = client.complete(prompt, tag)
    elapsed_ms = (time.monotonic() - started) * 1000.0
    return CompletionRecord(
        run_id=manifest.run_id,
        problem_id=problem_id,
        mode=mode,
        sample_index=sample_index,
        subproblem_index=subproblem_index,
        prompt_hash=prompt_digest(prompt),
        raw_completion=text,
        grade=grade(text, reference),
        timing_ms=elapsed_ms,
        endpoint_status=status,
    )


def run(
    manifest: RunManifest,
    problems: Sequence[AugmentedProblem] | None = None,
    *,
    out_dir: str | Path = "runs",
    transport: httpx.BaseTransport | None = None,
    backoff_base: float = 0.5,
    resume_existing: bool = False,
) -> Iterator[CompletionRecord]:
    """Execute (or continue) a run, yielding records as they complete.

    The run directory ``<out_dir>/<run_id>`` holds the manifest and the
    append-only record log. An existing directory is refused unless
    ``resume_existing`` is set and its manifest hash matches.
    """
    run_dir = Path(out_dir) / manifest.run_id
    manifest_path = run_dir / MANIFEST_FILE
    if manifest_path.exists():
        stored = RunManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))
        if stored.result_hash() != manifest.result_hash():
            raise RunError(
                f"run {manifest.run_id!r} exists with a different manifest; "
                "a changed manifest is a new run"
            )
        if not resume_existing:
            raise RunError(
                f"run {manifest.run_id!r} already exists; pass resume to continue it"
            )
    else:
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text(
            json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    if problems is None:
        problems = load_dataset(manifest.dataset)
    _check_modes_supported(manifest, problems)

    log = RunLog(run_dir / RECORDS_FILE)
    existing = log.load()
    existing_by_key = {r.key: r for r in existing}
    jobs = _plan_jobs(manifest, problems, set(existing_by_key), existing_by_key)

    client = ChatCompletionClient(
        manifest.endpoint,
        manifest.model_name,
        temperature=manifest.temperature,
        max_tokens=manifest.max_tokens,
        seed=manifest.seed,
        transport=transport,
        backoff_base=backoff_base,
    )
    try:
        with ThreadPoolExecutor(max_workers=manifest.concurrency_limit) as pool:
            pending: set[Future] = {
                pool.submit(_execute_job, job, manifest, client, log) for job in jobs
            }
            while pending:
                finished, pending = wait(pending, return_when=FIRST_COMPLETED)
                for future in finished:
                    yield from future.result()
    finally:
        client.close()


def resume(
    run_dir: str | Path,
    *,
    transport: httpx.BaseTransport | None = None,
    backoff_base: float = 0.5,
    concurrency_limit: int | None = None,
) -> Iterator[CompletionRecord]:
    """Continue an interrupted run from its directory.

    Only missing (problem, mode, sample, subproblem) cells are fetched.
    """
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_FILE
    if not manifest_path.exists():
        raise RunError(f"no manifest at {manifest_path}")
    manifest = RunManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))
    if concurrency_limit is not None:
        manifest = replace(manifest, concurrency_limit=concurrency_limit)
    yield from run(
        manifest,
        out_dir=run_dir.parent,
        transport=transport,
        backoff_base=backoff_base,
        resume_existing=True,
    )


def load_run_records(run_dir: str | Path) -> list[CompletionRecord]:
    """All records of a run, sorted by cell key for deterministic
    aggregation."""
    records = RunLog(Path(run_dir) / RECORDS_FILE).load()
    return sorted(
        records,
        key=lambda r: (
            r.problem_id,
            r.mode.value,
            r.sample_index,
            -1 if r.subproblem_index is None else r.subproblem_index,
        ),
    )


def load_run_manifest(run_dir: str | Path) -> RunManifest:
    path = Path(run_dir) / MANIFEST_FILE
    return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


MockHandler = Callable[[httpx.Request], httpx.Response]


def canned_endpoint(completions: dict[str, str]) -> httpx.MockTransport:
    """Deterministic in-process endpoint for tests and demos.

    ``completions`` maps the per-request tag
    ``problem_id/mode/sample[/subproblem]`` to the full completion text.
    Unknown tags get an empty think/answer shell (graded incorrect).
    """
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content.decode("utf-8"))
        tag = body.get("user", "")
        text = completions.get(tag, "<think>unknown</think><answer>\\boxed{?}</answer>")
        return httpx.Response(
            200,
            json={"choices": [{"message": {"role": "assistant", "content": text}}]},
        )

    return httpx.MockTransport(handler)
