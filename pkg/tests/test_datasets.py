from __future__ import annotations

import pytest

from symgrad.datasets import Example, load_dataset, parse_dataset
from symgrad.errors import DuplicateId, MalformedLine


def test_two_lines_in_order():
    text = '{"id": "e1", "input": "q1", "ground_truth": "a1"}\n{"id": "e2", "input": "q2"}\n'
    examples = parse_dataset(text)
    assert examples == [
        Example(id="e1", input="q1", ground_truth="a1"),
        Example(id="e2", input="q2", ground_truth=None),
    ]


def test_duplicate_id():
    text = '{"id": "e1", "input": "a"}\n{"id": "e1", "input": "b"}\n'
    with pytest.raises(DuplicateId):
        parse_dataset(text)


def test_missing_ground_truth_is_fine():
    examples = parse_dataset('{"id": "e1", "input": "q"}\n')
    assert examples[0].ground_truth is None


def test_malformed_line_reports_lineno():
    with pytest.raises(MalformedLine) as err:
        parse_dataset('{"id": "e1", "input": "q"}\nnot json\n')
    assert err.value.lineno == 2


def test_missing_required_field():
    with pytest.raises(MalformedLine):
        parse_dataset('{"id": "e1"}\n')


def test_blank_lines_skipped():
    examples = parse_dataset('\n{"id": "e1", "input": "q"}\n\n')
    assert len(examples) == 1


def test_load_dataset_roundtrip(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text('{"id": "e1", "input": "q", "ground_truth": "a"}\n', encoding="utf-8")
    assert load_dataset(str(path))[0].ground_truth == "a"
