"""Input records: annotated sentences with two entity spans.

One JSONL line per sentence:

    {"text": "...", "head": [start, end], "tail": [start, end],
     "relation": "P17", "domain": "source"}

Spans are half-open character offsets into ``text``; they must lie within
bounds and must not overlap each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


class RecordError(Exception):
    """A JSONL record is malformed or violates span invariants."""


@dataclass(frozen=True)
class RawSentence:
    text: str
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    relation: str
    domain: str


def _check_span(span, text, name, where):
    start, end = span
    if not (0 <= start < end <= len(text)):
        raise RecordError(f"{where}: {name} span {span} out of bounds for "
                          f"text of length {len(text)}")


def parse_record(obj: dict, where: str) -> RawSentence:
    for key in ("text", "head", "tail", "relation", "domain"):
        if key not in obj:
            raise RecordError(f"{where}: missing field {key!r}")
    text = str(obj["text"])
    head = tuple(int(v) for v in obj["head"])
    tail = tuple(int(v) for v in obj["tail"])
    if len(head) != 2 or len(tail) != 2:
        raise RecordError(f"{where}: spans must be [start, end] pairs")
    _check_span(head, text, "head", where)
    _check_span(tail, text, "tail", where)
    if max(head[0], tail[0]) < min(head[1], tail[1]):
        raise RecordError(f"{where}: head and tail spans overlap")
    return RawSentence(text=text, head_span=head, tail_span=tail,
                       relation=str(obj["relation"]), domain=str(obj["domain"]))


def read_jsonl(path: str) -> list[RawSentence]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{where}: invalid JSON ({exc})") from exc
            records.append(parse_record(obj, where))
    if not records:
        raise RecordError(f"{path}: no records")
    return records
