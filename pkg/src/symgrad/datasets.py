"""Line-delimited training/eval datasets.

Each line is a JSON record {"id", "input", "ground_truth"?}; order is
preserved and ids must be unique.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DuplicateId, MalformedLine


@dataclass
class Example:
    id: str
    input: str
    ground_truth: str | None = None


def parse_dataset(text: str) -> list[Example]:
    examples: list[Example] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as err:
            raise MalformedLine(lineno, str(err)) from err
        if not isinstance(record, dict):
            raise MalformedLine(lineno, "record is not an object")
        example_id = record.get("id")
        text_input = record.get("input")
        if not isinstance(example_id, str) or not example_id:
            raise MalformedLine(lineno, "missing or non-string 'id'")
        if not isinstance(text_input, str):
            raise MalformedLine(lineno, "missing or non-string 'input'")
        truth = record.get("ground_truth")
        if truth is not None and not isinstance(truth, str):
            raise MalformedLine(lineno, "'ground_truth' must be a string when present")
        if example_id in seen:
            raise DuplicateId(example_id)
        seen.add(example_id)
        examples.append(Example(id=example_id, input=text_input, ground_truth=truth))
    return examples


def load_dataset(path: str) -> list[Example]:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read())
