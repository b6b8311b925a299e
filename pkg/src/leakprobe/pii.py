"""PII schema, rule-based extraction, canonicalization, and set algebra.

Detection is deliberately deterministic so audits are reproducible: numeric
categories (Money, Date, Cardinal) come from regular expressions, named
categories (Person, Organization, Gpe, Facility) from gazetteer whole-token
matching. Output of any external NER tool can be imported instead via
:func:`import_external_annotations`.

Overlapping matches are resolved longest-match-first, ties broken by earlier
start, then by category declaration order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Mapping

from .errors import (
    EmptyAfterTrimError,
    SpanMismatchError,
    UnknownCategoryError,
)


class PiiCategory(Enum):
    PERSON = "Person"
    ORGANIZATION = "Organization"
    GPE = "Gpe"
    FACILITY = "Facility"
    MONEY = "Money"
    DATE = "Date"
    CARDINAL = "Cardinal"


NAMED_CATEGORIES = (
    PiiCategory.PERSON,
    PiiCategory.ORGANIZATION,
    PiiCategory.GPE,
    PiiCategory.FACILITY,
)

PATTERN_CATEGORIES = (PiiCategory.MONEY, PiiCategory.DATE, PiiCategory.CARDINAL)

_CATEGORY_RANK = {cat: i for i, cat in enumerate(PiiCategory)}


def parse_category(name: str) -> PiiCategory:
    """Map a category name to the enum, case-insensitively."""
    for cat in PiiCategory:
        if cat.value.lower() == name.strip().lower():
            return cat
    raise UnknownCategoryError(name)


class Provenance(Enum):
    FINE_TUNED_GENERATIONS = "FineTunedGenerations"
    BASE_GENERATIONS = "BaseGenerations"
    GROUND_TRUTH = "GroundTruth"
    DERIVED = "Derived"


@dataclass(frozen=True)
class PiiMention:
    """A surface form found in text, with character span into its source."""

    surface: str
    category: PiiCategory
    span: tuple[int, int]
    source_id: str = ""


class MatchPolicy(Enum):
    WHOLE_TOKEN_SEQUENCE = "whole_token_sequence"


_QUOTE_CHARS = "\"'“”‘’`"
_WHITESPACE_RUN = re.compile(r"\s+")


def canonicalize(surface: str, category: PiiCategory) -> str:
    """Normalize a surface form so set comparison is well-defined.

    Trims, strips enclosing quote characters, collapses internal whitespace
    runs to single spaces; named categories are additionally case-folded
    while numeric ones keep their bytes. Idempotent.
    """
    s = surface
    prev = None
    while s != prev:
        prev = s
        s = s.strip().strip(_QUOTE_CHARS)
    s = _WHITESPACE_RUN.sub(" ", s)
    if not s:
        raise EmptyAfterTrimError(f"surface {surface!r} is empty after trimming")
    if category in NAMED_CATEGORIES:
        s = s.casefold()
    return s


@dataclass(frozen=True)
class PiiSet:
    """A category-tagged set of canonical PII strings supporting set algebra."""

    entries: frozenset[tuple[PiiCategory, str]]
    provenance: Provenance

    def __post_init__(self):
        for category, value in self.entries:
            if canonicalize(value, category) != value:
                raise ValueError(f"entry {(category, value)!r} is not canonical")

    @classmethod
    def empty(cls, provenance: Provenance = Provenance.DERIVED) -> "PiiSet":
        return cls(frozenset(), provenance)

    @classmethod
    def from_pairs(
        cls, pairs: Iterable[tuple[PiiCategory, str]], provenance: Provenance
    ) -> "PiiSet":
        """Build from (category, surface) pairs, canonicalizing each surface."""
        return cls(
            frozenset((cat, canonicalize(value, cat)) for cat, value in pairs),
            provenance,
        )

    @classmethod
    def from_mentions(cls, mentions: Iterable[PiiMention], provenance: Provenance) -> "PiiSet":
        return cls.from_pairs(((m.category, m.surface) for m in mentions), provenance)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entry: tuple[PiiCategory, str]) -> bool:
        return entry in self.entries

    def difference(self, other: "PiiSet") -> "PiiSet":
        return PiiSet(self.entries - other.entries, Provenance.DERIVED)

    def union(self, other: "PiiSet") -> "PiiSet":
        return PiiSet(self.entries | other.entries, Provenance.DERIVED)

    def intersection(self, other: "PiiSet") -> "PiiSet":
        return PiiSet(self.entries & other.entries, Provenance.DERIVED)

    def by_category(self) -> dict[PiiCategory, set[str]]:
        grouped: dict[PiiCategory, set[str]] = {}
        for category, value in self.entries:
            grouped.setdefault(category, set()).add(value)
        return grouped

    def sorted_entries(self) -> list[tuple[PiiCategory, str]]:
        return sorted(self.entries, key=lambda e: (_CATEGORY_RANK[e[0]], e[1]))

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance.value,
            "entries": [[cat.value, value] for cat, value in self.sorted_entries()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PiiSet":
        return cls(
            frozenset((parse_category(cat), value) for cat, value in data["entries"]),
            Provenance(data["provenance"]),
        )


def set_difference(a: PiiSet, b: PiiSet) -> PiiSet:
    """Entries of ``a`` not in ``b``; provenance Derived."""
    return a.difference(b)


# -- gazetteer ----------------------------------------------------------


def _entry_regex(entry: str, ignore_case: bool) -> re.Pattern:
    """Whole-token-sequence matcher for one gazetteer entry.

    Entry tokens may be separated by any whitespace run in the text; a match
    never starts or ends inside a longer word ("smith" must not fire inside
    "smithson").
    """
    parts = [re.escape(token) for token in entry.split()]
    body = r"\s+".join(parts)
    prefix = r"(?<!\w)" if re.match(r"\w", entry) else ""
    suffix = r"(?!\w)" if re.search(r"\w\Z", entry) else ""
    return re.compile(prefix + body + suffix, re.IGNORECASE if ignore_case else 0)


@dataclass
class Gazetteer:
    """Per-category curated name lists for the named PII categories."""

    entries: Mapping[PiiCategory, tuple[str, ...]]
    match_policy: MatchPolicy = MatchPolicy.WHOLE_TOKEN_SEQUENCE
    case_fold: Mapping[PiiCategory, bool] = field(default_factory=dict)
    _matchers: list[tuple[PiiCategory, re.Pattern]] = field(
        init=False, repr=False, compare=False, default_factory=list
    )

    def __post_init__(self):
        for category, values in self.entries.items():
            if category not in NAMED_CATEGORIES:
                raise ValueError(f"gazetteer category must be named, got {category}")
            for value in values:
                if canonicalize(value, category) != value:
                    raise ValueError(f"gazetteer entry {value!r} is not canonical")
        for category in NAMED_CATEGORIES:
            ignore_case = self.case_fold.get(category, True)
            for entry in self.entries.get(category, ()):
                self._matchers.append((category, _entry_regex(entry, ignore_case)))

    @classmethod
    def from_dict(cls, data: Mapping[str, Iterable[str]], **kwargs) -> "Gazetteer":
        """Build from {category name: [names]}, canonicalizing every entry."""
        entries: dict[PiiCategory, tuple[str, ...]] = {}
        for name, values in data.items():
            category = parse_category(name)
            entries[category] = tuple(canonicalize(v, category) for v in values)
        return cls(entries=entries, **kwargs)


def load_gazetteer(source: BinaryIO) -> Gazetteer:
    """Load a gazetteer from a JSON object mapping category name to names."""
    return Gazetteer.from_dict(json.loads(source.read().decode("utf-8")))


# -- pattern library ----------------------------------------------------

_MONTHS = (
    r"(?:January|February|March|April|May|June|July|August|September|October|"
    r"November|December|Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sept|Sep|Oct|Nov|Dec)"
)
_WEEKDAYS = r"(?:Monday|Tuesday|Wednesday|Thursday|Friday|Saturday|Sunday)"

#: Regular expressions per numeric category. Slash-formatted dates count as
#: Date under these rules. Month-name patterns are case-sensitive on purpose
#: ("may 31" in running lowercase text stays a Cardinal).
DEFAULT_PATTERNS: dict[PiiCategory, tuple[re.Pattern, ...]] = {
    PiiCategory.MONEY: (
        re.compile(
            r"\$\d(?:[\d,]*\d)?(?:\.\d+)?(?:\s(?:thousand|million|billion|trillion))?",
            re.IGNORECASE,
        ),
        re.compile(
            r"\b\d(?:[\d,]*\d)?(?:\.\d+)?\s(?:thousand|million|billion|trillion)(?:\sdollars)?\b",
            re.IGNORECASE,
        ),
        re.compile(r"\b\d(?:[\d,]*\d)?(?:\.\d+)?\s(?:dollars|cents)\b", re.IGNORECASE),
    ),
    PiiCategory.DATE: (
        re.compile(r"\b\d{1,2}/\d{1,2}/\d{2,4}\b"),
        re.compile(r"\b\d{4}-\d{2}-\d{2}\b"),
        re.compile(
            rf"\b(?:{_WEEKDAYS},\s+)?{_MONTHS}\.?\s+\d{{1,2}}(?:,\s+\d{{4}})?\b"
        ),
    ),
    PiiCategory.CARDINAL: (re.compile(r"\b\d[\d,]*(?:\.\d+)?\b"),),
}


def default_patterns(
    enabled: Iterable[PiiCategory | str] | None = None,
) -> dict[PiiCategory, tuple[re.Pattern, ...]]:
    """The default pattern set, optionally restricted to some categories."""
    if enabled is None:
        return dict(DEFAULT_PATTERNS)
    categories = {c if isinstance(c, PiiCategory) else parse_category(c) for c in enabled}
    return {cat: pats for cat, pats in DEFAULT_PATTERNS.items() if cat in categories}


# -- extraction ---------------------------------------------------------


def extract_pii(
    text: str,
    gazetteer: Gazetteer,
    patterns: Mapping[PiiCategory, tuple[re.Pattern, ...]] | None = None,
    source_id: str = "",
) -> list[PiiMention]:
    """Find PII mentions in text, sorted by start offset.

    Candidates from every pattern and gazetteer entry are resolved to a
    non-overlapping set: longest match first, ties by earlier start, then by
    category declaration order.
    """
    if patterns is None:
        patterns = DEFAULT_PATTERNS

    candidates: set[tuple[int, int, PiiCategory]] = set()
    for category, matcher in gazetteer._matchers:
        for m in matcher.finditer(text):
            candidates.add((m.start(), m.end(), category))
    for category in PATTERN_CATEGORIES:
        for pattern in patterns.get(category, ()):
            for m in pattern.finditer(text):
                candidates.add((m.start(), m.end(), category))

    ordered = sorted(
        candidates,
        key=lambda c: (-(c[1] - c[0]), c[0], _CATEGORY_RANK[c[2]]),
    )
    taken: list[tuple[int, int]] = []
    selected: list[tuple[int, int, PiiCategory]] = []
    for start, end, category in ordered:
        if any(start < t_end and t_start < end for t_start, t_end in taken):
            continue
        taken.append((start, end))
        selected.append((start, end, category))

    selected.sort(key=lambda c: c[0])
    return [
        PiiMention(
            surface=text[start:end],
            category=category,
            span=(start, end),
            source_id=source_id,
        )
        for start, end, category in selected
    ]


def import_external_annotations(source: BinaryIO) -> list[PiiMention]:
    """Read external annotator output as JSONL mentions.

    Each line needs the keys ``source_id``, ``start``, ``end``, ``surface``
    and ``category``. Categories are normalized case-insensitively; spans
    must satisfy ``0 <= start < end`` and ``end - start == len(surface)``.
    """
    mentions = []
    for line_no, raw in enumerate(source.read().decode("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        obj = json.loads(line)
        category = parse_category(str(obj["category"]))
        start, end = int(obj["start"]), int(obj["end"])
        surface = str(obj["surface"])
        if not (0 <= start < end):
            raise SpanMismatchError(f"line {line_no}: invalid span ({start}, {end})")
        if end - start != len(surface):
            raise SpanMismatchError(
                f"line {line_no}: span length {end - start} != surface length {len(surface)}"
            )
        mentions.append(
            PiiMention(
                surface=surface,
                category=category,
                span=(start, end),
                source_id=str(obj["source_id"]),
            )
        )
    return mentions


def build_ground_truth(
    records: Iterable,
    gazetteer: Gazetteer,
    patterns: Mapping[PiiCategory, tuple[re.Pattern, ...]] | None = None,
) -> PiiSet:
    """Union of canonical mentions over every record's subject and body.

    ``records`` should be exactly the fine-tuning corpus; the result is the
    recall denominator for the attack metrics.
    """
    pairs: list[tuple[PiiCategory, str]] = []
    for record in records:
        for text, part in ((record.subject, "subject"), (record.body, "body")):
            for mention in extract_pii(
                text, gazetteer, patterns, source_id=f"{record.id}/{part}"
            ):
                pairs.append((mention.category, mention.surface))
    return PiiSet.from_pairs(pairs, Provenance.GROUND_TRUTH)
