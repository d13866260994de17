from __future__ import annotations

import json
import random

import pytest

from conftest import SAMPLE_DATASET, make_problem

from reasoneval.dataset import (
    AugmentedProblem,
    DatasetError,
    dump_dataset,
    load_dataset,
    schema_text,
    stratify,
)


def test_load_sample_dataset(sample_problems):
    euler = sample_problems[0]
    assert euler.id == "euler-power-sum"
    assert euler.reference_answer == "144"
    assert euler.difficulty == 4
    assert euler.domain == "Number Theory → Congruences"
    assert [s.index for s in euler.subproblems] == [1, 2, 3]
    assert euler.plan.steps.startswith("Step 1")
    assert euler.knowledge[0].kind == "fact"
    assert euler.extra == {"annotator": "fixture-v1"}


def test_load_preserves_order(sample_problems):
    assert [p.id for p in sample_problems] == [
        "euler-power-sum",
        "egg-revenue",
        "token-game",
        "plain-no-aug",
    ]


def test_empty_file_gives_empty_list(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_dataset(path) == []


def test_difficulty_out_of_range_names_field(tmp_path):
    record = make_problem("bad").to_dict()
    record["difficulty"] = 11
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="difficulty"):
        load_dataset(path)


def test_difficulty_zero_rejected(tmp_path):
    record = make_problem("bad").to_dict()
    record["difficulty"] = 0
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="difficulty"):
        load_dataset(path)


def test_duplicate_id_rejected(tmp_path):
    record = json.dumps(make_problem("dup").to_dict())
    path = tmp_path / "dup.jsonl"
    path.write_text(record + "\n" + record + "\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="dup"):
        load_dataset(path)


def test_parse_error_reports_line_number(tmp_path):
    path = tmp_path / "broken.jsonl"
    good = json.dumps(make_problem("ok").to_dict())
    path.write_text(good + "\n{not json\n", encoding="utf-8")
    with pytest.raises(DatasetError, match=":2:"):
        load_dataset(path)


def test_empty_reference_answer_rejected(tmp_path):
    record = make_problem("bad").to_dict()
    record["reference_answer"] = "  "
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="reference_answer"):
        load_dataset(path)


def test_subproblem_indices_must_be_contiguous():
    problem = make_problem("x", n_subproblems=2)
    broken = AugmentedProblem(
        **{
            **problem.__dict__,
            "subproblems": (problem.subproblems[1], problem.subproblems[0]),
        }
    )
    with pytest.raises(DatasetError, match="contiguous"):
        broken.validate()


def test_subproblem_empty_answer_rejected(tmp_path):
    record = make_problem("bad", n_subproblems=1).to_dict()
    record["subproblems"][0]["reference_answer"] = ""
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="subproblem 1"):
        load_dataset(path)


def test_unknown_source_rejected(tmp_path):
    record = make_problem("bad").to_dict()
    record["source"] = "AIME25"
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="source"):
        load_dataset(path)


def test_round_trip_structural_equality(tmp_path, sample_problems):
    out = tmp_path / "roundtrip.jsonl"
    dump_dataset(sample_problems, out)
    assert load_dataset(out) == sample_problems


def test_round_trip_preserves_extra_fields(tmp_path):
    path = tmp_path / "extra.jsonl"
    record = make_problem("x").to_dict()
    record["pipeline_meta"] = {"nested": [1, 2, {"deep": True}]}
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    loaded = load_dataset(path)
    out = tmp_path / "extra2.jsonl"
    dump_dataset(loaded, out)
    reloaded = json.loads(out.read_text(encoding="utf-8"))
    assert reloaded["pipeline_meta"] == {"nested": [1, 2, {"deep": True}]}


def test_stratify_by_difficulty():
    problems = [
        make_problem("a", difficulty=1),
        make_problem("b", difficulty=1),
        make_problem("c", difficulty=4),
    ]
    buckets = stratify(problems, "difficulty")
    assert {k: [p.id for p in v] for k, v in buckets.items()} == {
        1: ["a", "b"],
        4: ["c"],
    }


def test_stratify_empty_input():
    assert stratify([], "domain") == {}


def test_stratify_rejects_unknown_key():
    with pytest.raises(ValueError, match="'by'"):
        stratify([], "answer")


@pytest.mark.parametrize("by", ["difficulty", "domain", "source"])
def test_stratify_is_a_partition(by):
    rng = random.Random(7)
    problems = [
        make_problem(
            f"r{i}",
            difficulty=rng.randint(1, 10),
            source=rng.choice(["AIME24", "GSM8K", "custom"]),
            domain=rng.choice(["Algebra", "Geometry", "Number Theory"]),
        )
        for i in range(200)
    ]
    buckets = stratify(problems, by)
    flattened = [p for bucket in buckets.values() for p in bucket]
    assert sorted(p.id for p in flattened) == sorted(p.id for p in problems)
    assert len(flattened) == len(problems)
    for key, bucket in buckets.items():
        assert all(getattr(p, by) == key for p in bucket)


def test_schema_document_is_bundled():
    text = schema_text()
    assert "reference_answer" in text
    assert "Normalization pipeline v1" in text


def test_sample_dataset_file_is_lf_only():
    raw = SAMPLE_DATASET.read_bytes()
    assert b"\r" not in raw
