"""Email corpus ingestion, filtering, splitting, and fine-tune file export.

Builds the two kinds of training examples this toolkit audits:

* classification: ``prompt = body + separator``, ``completion = " " + folder``
* autocomplete:   ``prompt = template(subject)``, ``completion = " " + body``

Counting rules are deliberately simple so they are reproducible anywhere:
words are whitespace-delimited tokens after trimming, and sentences are
maximal segments terminated by ``.``, ``!``, ``?`` or end-of-text that
contain at least one word character.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Callable, Iterable

from .errors import (
    InsufficientRecordsError,
    MissingFieldError,
    MissingLabelError,
    MissingSubjectError,
    NoExamplesError,
    ParseError,
)

logger = logging.getLogger(__name__)

#: Byte sequence appended to classification training prompts. Omitting it at
#: inference time makes the fine-tuned model free-generate instead of
#: emitting a folder label, which is what the extraction attack exploits.
CLASSIFICATION_SEPARATOR = "\n\n###\n\n"

#: Prompt template used for the autocomplete task, applied verbatim.
AUTOCOMPLETE_PROMPT_TEMPLATE = (
    "Generate the body of an email from the following subject line. Subject: "
)

_SENTENCE_TERMINATORS = re.compile(r"[.!?]+")


class TaskKind(Enum):
    CLASSIFICATION = "classification"
    AUTOCOMPLETE = "autocomplete"


def count_words(text: str) -> int:
    """Whitespace-delimited token count after trimming."""
    return len(text.split())


def count_sentences(text: str) -> int:
    """Count maximal ``.``/``!``/``?``-terminated segments holding a word."""
    segments = _SENTENCE_TERMINATORS.split(text)
    return sum(1 for seg in segments if re.search(r"\w", seg))


@dataclass(frozen=True)
class EmailRecord:
    """One parsed email with precomputed word and sentence counts."""

    id: str
    folder: str
    subject: str
    body: str
    word_count: int
    sentence_count: int

    @classmethod
    def from_text(cls, id: str, folder: str, subject: str, body: str) -> "EmailRecord":
        return cls(
            id=id,
            folder=folder,
            subject=subject,
            body=body,
            word_count=count_words(body),
            sentence_count=count_sentences(body),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "folder": self.folder,
            "subject": self.subject,
            "body": self.body,
            "word_count": self.word_count,
            "sentence_count": self.sentence_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmailRecord":
        return cls.from_text(
            id=str(data["id"]),
            folder=str(data["folder"]),
            subject=str(data["subject"]),
            body=str(data["body"]),
        )


@dataclass(frozen=True)
class Heuristic:
    """Named deterministic predicate over an EmailRecord; True means reject."""

    name: str
    predicate: Callable[[EmailRecord], bool]

    def __call__(self, record: EmailRecord) -> bool:
        return self.predicate(record)


def _keyword_heuristic(name: str, keywords: tuple[str, ...]) -> Heuristic:
    def predicate(record: EmailRecord) -> bool:
        haystack = (record.subject + "\n" + record.body).lower()
        return any(kw in haystack for kw in keywords)

    return Heuristic(name, predicate)


def _low_natural_language(record: EmailRecord, threshold: float = 0.30) -> bool:
    """Tabular/chart-like content: >=30% of non-whitespace chars not alphabetic."""
    chars = [c for c in record.body if not c.isspace()]
    if not chars:
        return False
    non_alpha = sum(1 for c in chars if not c.isalpha())
    return non_alpha / len(chars) >= threshold


DEFAULT_EXCLUSION_HEURISTICS: tuple[Heuristic, ...] = (
    _keyword_heuristic(
        "notification",
        ("this is an automated", "do not reply", "auto-generated", "system notification"),
    ),
    _keyword_heuristic("bulletin", ("bulletin", "newsletter", "weekly digest")),
    _keyword_heuristic(
        "promotion", ("unsubscribe", "special offer", "% off", "limited time offer")
    ),
    _keyword_heuristic(
        "customer_service",
        ("customer service", "your ticket", "case number", "support request"),
    ),
)

DEFAULT_LOW_NATURAL_LANGUAGE = Heuristic("low_natural_language", _low_natural_language)


@dataclass(frozen=True)
class FilterPolicy:
    """Thresholds and exclusion rules applied before autocomplete training."""

    min_sentences: int = 3
    min_words: int = 25
    max_words: int = 256
    exclusion_heuristics: tuple[Heuristic, ...] = DEFAULT_EXCLUSION_HEURISTICS
    low_natural_language_heuristic: Heuristic | None = DEFAULT_LOW_NATURAL_LANGUAGE

    def __post_init__(self):
        if not (0 < self.min_words <= self.max_words):
            raise ValueError("require 0 < min_words <= max_words")
        if self.min_sentences < 1:
            raise ValueError("require min_sentences >= 1")

    def first_failing_rule(self, record: EmailRecord) -> str | None:
        """Name of the first rule the record fails, or None if it passes all."""
        if record.sentence_count < self.min_sentences:
            return "min_sentences"
        if record.word_count < self.min_words:
            return "min_words"
        if record.word_count > self.max_words:
            return "max_words"
        for heuristic in self.exclusion_heuristics:
            if heuristic(record):
                return heuristic.name
        if self.low_natural_language_heuristic is not None:
            if self.low_natural_language_heuristic(record):
                return self.low_natural_language_heuristic.name
        return None


@dataclass(frozen=True)
class FinetuneExample:
    """One prompt/completion training pair for either task."""

    task: TaskKind
    prompt: str
    completion: str
    source_id: str


@dataclass(frozen=True)
class CorpusSplit:
    """Disjoint train/OOD partition, reproducible from (records, seed)."""

    train: tuple[EmailRecord, ...]
    ood: tuple[EmailRecord, ...]
    seed: int | str


def parse_email_corpus(source: BinaryIO, format: str) -> list[EmailRecord]:
    """Parse a CSV or JSONL byte stream into EmailRecords, preserving order.

    CSV accepts either a header row (``folder,subject,body`` with an optional
    leading ``id`` column) or headerless rows with exactly those three
    columns, RFC-4180 quoted. JSONL wants one object per line with keys
    ``folder``, ``subject``, ``body`` and an optional ``id``. Records without
    an explicit id get a zero-padded positional one. Empty bodies are kept
    (the filter stage decides their fate) but logged.
    """
    fmt = format.lower()
    if fmt == "csv":
        records = _parse_csv(source)
    elif fmt == "jsonl":
        records = _parse_jsonl(source)
    else:
        raise ValueError(f"unknown corpus format {format!r}")
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise ParseError(f"duplicate record id {rec.id!r}", line=0)
        seen.add(rec.id)
        if not rec.body.strip():
            logger.warning("record %s has an empty body", rec.id)
    return records


def _decode(source: BinaryIO) -> io.TextIOWrapper:
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _parse_csv(source: BinaryIO) -> list[EmailRecord]:
    reader = csv.reader(_decode(source))
    rows = list(reader)
    if not rows:
        return []

    header = [cell.strip().lower() for cell in rows[0]]
    if header in (["folder", "subject", "body"], ["id", "folder", "subject", "body"]):
        has_id = header[0] == "id"
        data_rows = rows[1:]
        start_line = 2
    else:
        has_id = False
        data_rows = rows
        start_line = 1

    records = []
    for offset, row in enumerate(data_rows):
        line = start_line + offset
        if not row:
            continue
        expected = 4 if has_id else 3
        if len(row) < expected:
            missing = (["id", "folder", "subject", "body"] if has_id else ["folder", "subject", "body"])[len(row)]
            raise MissingFieldError(missing, line)
        if len(row) > expected:
            raise ParseError(f"expected {expected} columns, got {len(row)}", line)
        if has_id:
            rec_id, folder, subject, body = row
        else:
            folder, subject, body = row
            rec_id = f"{len(records):06d}"
        records.append(EmailRecord.from_text(rec_id, folder, subject, body))
    return records


def _parse_jsonl(source: BinaryIO) -> list[EmailRecord]:
    records = []
    for line_no, raw in enumerate(_decode(source), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line_no) from exc
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line_no)
        for key in ("folder", "subject", "body"):
            if key not in obj:
                raise MissingFieldError(key, line_no)
        rec_id = str(obj.get("id", f"{len(records):06d}"))
        records.append(
            EmailRecord.from_text(rec_id, str(obj["folder"]), str(obj["subject"]), str(obj["body"]))
        )
    return records


def apply_filter_policy(
    records: Iterable[EmailRecord], policy: FilterPolicy
) -> tuple[list[EmailRecord], list[tuple[EmailRecord, str]]]:
    """Partition records into (kept, rejected-with-reason), order-preserving."""
    kept: list[EmailRecord] = []
    rejected: list[tuple[EmailRecord, str]] = []
    for record in records:
        reason = policy.first_failing_rule(record)
        if reason is None:
            kept.append(record)
        else:
            rejected.append((record, reason))
    return kept, rejected


def record_document(record: EmailRecord) -> str:
    """The record as one text blob (subject, newline, body).

    This is the unit a memorizing mock backend regurgitates.
    """
    return record.subject + "\n" + record.body


def split_train_ood(
    records: list[EmailRecord], train_count: int, seed: int | str
) -> CorpusSplit:
    """Deterministically split records into train and OOD sets.

    Records are sorted by id and then shuffled with a Mersenne Twister
    (Python's ``random.Random``) seeded with ``seed``, so the split is a
    permutation-invariant function of the id set.
    """
    if train_count < 0 or train_count > len(records):
        raise InsufficientRecordsError(
            f"train_count {train_count} out of range for {len(records)} records"
        )
    ordered = sorted(records, key=lambda r: r.id)
    random.Random(seed).shuffle(ordered)
    return CorpusSplit(
        train=tuple(ordered[:train_count]),
        ood=tuple(ordered[train_count:]),
        seed=seed,
    )


def build_classification_examples(
    records: Iterable[EmailRecord], separator: str = CLASSIFICATION_SEPARATOR
) -> list[FinetuneExample]:
    """Prompt = body + separator, completion = single space + folder label."""
    if not separator:
        raise ValueError("separator must be non-empty")
    examples = []
    for record in records:
        if not record.folder:
            raise MissingLabelError(record.id)
        examples.append(
            FinetuneExample(
                task=TaskKind.CLASSIFICATION,
                prompt=record.body + separator,
                completion=" " + record.folder,
                source_id=record.id,
            )
        )
    return examples


def build_autocomplete_examples(records: Iterable[EmailRecord]) -> list[FinetuneExample]:
    """Prompt = verbatim template + subject, completion = single space + body."""
    examples = []
    for record in records:
        if not record.subject:
            raise MissingSubjectError(record.id)
        examples.append(
            FinetuneExample(
                task=TaskKind.AUTOCOMPLETE,
                prompt=AUTOCOMPLETE_PROMPT_TEMPLATE + record.subject,
                completion=" " + record.body,
                source_id=record.id,
            )
        )
    return examples


def export_finetune_file(examples: list[FinetuneExample], sink: BinaryIO) -> int:
    """Write examples as JSONL with exactly the keys ``prompt``/``completion``.

    One object per line in input order, UTF-8, LF line endings, trailing
    newline after the final record. Returns the number of lines written.
    """
    if not examples:
        raise NoExamplesError("no examples")
    count = 0
    for example in examples:
        obj = {"prompt": example.prompt, "completion": example.completion}
        sink.write(json.dumps(obj, ensure_ascii=False).encode("utf-8"))
        sink.write(b"\n")
        count += 1
    return count


def parse_finetune_file(source: BinaryIO) -> list[tuple[str, str]]:
    """Read back an exported fine-tune file as (prompt, completion) pairs."""
    pairs = []
    for line_no, raw in enumerate(_decode(source), start=1):
        line = raw.strip("\n")
        if not line:
            continue
        obj = json.loads(line)
        if set(obj.keys()) != {"prompt", "completion"}:
            raise ParseError("expected exactly the keys prompt and completion", line_no)
        pairs.append((obj["prompt"], obj["completion"]))
    return pairs


def save_records(records: Iterable[EmailRecord], sink: BinaryIO) -> None:
    """Persist records as JSONL (full fields, one object per line)."""
    for record in records:
        sink.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True).encode("utf-8"))
        sink.write(b"\n")


def load_records(source: BinaryIO) -> list[EmailRecord]:
    """Load records persisted by :func:`save_records`."""
    records = []
    for raw in _decode(source):
        line = raw.strip()
        if line:
            records.append(EmailRecord.from_dict(json.loads(line)))
    return records
