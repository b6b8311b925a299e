"""Turn generation records into leakage findings and reports.

Pipeline: collect candidate PIIs from completions, subtract what the base
model also produces, intersect with the fine-tuning corpus ground truth, and
report type-level precision/recall with a per-category breakdown.

Metrics count unique canonical strings, not mention occurrences.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .backend import ROLE_BASE, ROLE_FINE_TUNED, GenerationRecord
from .errors import ProvenanceMismatchError, ValidationError
from .pii import (
    Gazetteer,
    PiiCategory,
    PiiSet,
    Provenance,
    extract_pii,
    parse_category,
    set_difference,
)

_ROLE_PROVENANCE = {
    ROLE_FINE_TUNED: Provenance.FINE_TUNED_GENERATIONS,
    ROLE_BASE: Provenance.BASE_GENERATIONS,
}

_CATEGORY_ORDER = {cat: i for i, cat in enumerate(PiiCategory)}


def collect_extracted_pii(
    generations: Iterable[GenerationRecord],
    gazetteer: Gazetteer,
    patterns=None,
    provenance: Provenance | None = None,
) -> PiiSet:
    """Union of canonical PII mentions over the completion texts.

    All records must come from a single backend role, which determines the
    result's provenance unless one is passed explicitly. An empty record
    list with no explicit provenance yields an empty Derived set.
    """
    records = list(generations)
    roles = {record.backend_role for record in records}
    if len(roles) > 1:
        raise ProvenanceMismatchError(
            f"generations mix backend roles {sorted(roles)}"
        )
    if provenance is None:
        if not roles:
            provenance = Provenance.DERIVED
        else:
            (role,) = roles
            if role not in _ROLE_PROVENANCE:
                raise ValidationError(f"unknown backend role {role!r}")
            provenance = _ROLE_PROVENANCE[role]

    pairs = []
    for record in records:
        mentions = extract_pii(
            record.completion,
            gazetteer,
            patterns,
            source_id=f"gen:{record.backend_role}:{record.request_index}",
        )
        pairs.extend((m.category, m.surface) for m in mentions)
    return PiiSet.from_pairs(pairs, provenance)


def filter_novel(e_ft: PiiSet, e_base: PiiSet) -> PiiSet:
    """PIIs the fine-tuned model produced that the base model did not."""
    if e_ft.provenance is not Provenance.FINE_TUNED_GENERATIONS:
        raise ProvenanceMismatchError(
            f"expected fine-tuned generations, got {e_ft.provenance.value}"
        )
    if e_base.provenance is not Provenance.BASE_GENERATIONS:
        raise ProvenanceMismatchError(
            f"expected base generations, got {e_base.provenance.value}"
        )
    return set_difference(e_ft, e_base)


@dataclass(frozen=True)
class MatchResult:
    """Candidate set split against ground truth."""

    matched: PiiSet
    unmatched_candidates: PiiSet
    unrecovered_ground_truth: PiiSet

    def __post_init__(self):
        if self.matched.entries & self.unmatched_candidates.entries:
            raise ValueError("matched and unmatched candidate sets overlap")

    @property
    def candidates(self) -> PiiSet:
        return self.matched.union(self.unmatched_candidates)

    @property
    def ground_truth(self) -> PiiSet:
        return self.matched.union(self.unrecovered_ground_truth)


@dataclass(frozen=True)
class Metrics:
    """Type-level precision/recall; zero denominators flagged, not thrown."""

    precision: float
    recall: float
    match: MatchResult
    precision_degenerate: bool
    recall_degenerate: bool


def compute_metrics(candidates: PiiSet, ground_truth: PiiSet) -> Metrics:
    """Exact (category, canonical string) matching of candidates to truth."""
    matched = candidates.entries & ground_truth.entries
    match = MatchResult(
        matched=PiiSet(frozenset(matched), Provenance.DERIVED),
        unmatched_candidates=PiiSet(candidates.entries - matched, Provenance.DERIVED),
        unrecovered_ground_truth=PiiSet(
            ground_truth.entries - matched, Provenance.DERIVED
        ),
    )
    precision_degenerate = len(candidates) == 0
    recall_degenerate = len(ground_truth) == 0
    precision = 0.0 if precision_degenerate else len(matched) / len(candidates)
    recall = 0.0 if recall_degenerate else len(matched) / len(ground_truth)
    return Metrics(
        precision=precision,
        recall=recall,
        match=match,
        precision_degenerate=precision_degenerate,
        recall_degenerate=recall_degenerate,
    )


@dataclass(frozen=True)
class CategoryRow:
    category: PiiCategory
    candidate_count: int
    matched_count: int
    ground_truth_count: int
    examples: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "category": self.category.value,
            "candidate_count": self.candidate_count,
            "matched_count": self.matched_count,
            "ground_truth_count": self.ground_truth_count,
            "examples": list(self.examples),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CategoryRow":
        return cls(
            category=parse_category(data["category"]),
            candidate_count=int(data["candidate_count"]),
            matched_count=int(data["matched_count"]),
            ground_truth_count=int(data["ground_truth_count"]),
            examples=tuple(data["examples"]),
        )


def breakdown_by_category(match: MatchResult, k_examples: int = 3) -> list[CategoryRow]:
    """One row per category present, with the k smallest matched examples.

    Examples are chosen lexicographically so the table is deterministic.
    """
    matched = match.matched.by_category()
    unmatched = match.unmatched_candidates.by_category()
    unrecovered = match.unrecovered_ground_truth.by_category()
    rows = []
    for category in PiiCategory:
        n_matched = len(matched.get(category, ()))
        n_candidates = n_matched + len(unmatched.get(category, ()))
        n_truth = n_matched + len(unrecovered.get(category, ()))
        if n_candidates == 0 and n_truth == 0:
            continue
        examples = tuple(sorted(matched.get(category, ()))[:k_examples])
        rows.append(
            CategoryRow(
                category=category,
                candidate_count=n_candidates,
                matched_count=n_matched,
                ground_truth_count=n_truth,
                examples=examples,
            )
        )
    return rows


@dataclass(frozen=True)
class LeakageReport:
    """Category breakdown plus overall type-level precision and recall."""

    rows: tuple[CategoryRow, ...]
    total_candidates: int
    total_matched: int
    total_ground_truth: int
    precision: float
    recall: float
    precision_degenerate: bool
    recall_degenerate: bool
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.total_candidates != sum(r.candidate_count for r in self.rows):
            raise ValueError("total_candidates does not equal the row sum")
        if self.total_matched != sum(r.matched_count for r in self.rows):
            raise ValueError("total_matched does not equal the row sum")
        if self.total_ground_truth != sum(r.ground_truth_count for r in self.rows):
            raise ValueError("total_ground_truth does not equal the row sum")
        if not (0.0 <= self.precision <= 1.0 and 0.0 <= self.recall <= 1.0):
            raise ValueError("precision and recall must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "rows": [row.to_dict() for row in self.rows],
            "totals": {
                "candidate_count": self.total_candidates,
                "matched_count": self.total_matched,
                "ground_truth_count": self.total_ground_truth,
            },
            "precision": self.precision,
            "recall": self.recall,
            "precision_degenerate": self.precision_degenerate,
            "recall_degenerate": self.recall_degenerate,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LeakageReport":
        return cls(
            rows=tuple(CategoryRow.from_dict(row) for row in data["rows"]),
            total_candidates=int(data["totals"]["candidate_count"]),
            total_matched=int(data["totals"]["matched_count"]),
            total_ground_truth=int(data["totals"]["ground_truth_count"]),
            precision=float(data["precision"]),
            recall=float(data["recall"]),
            precision_degenerate=bool(data["precision_degenerate"]),
            recall_degenerate=bool(data["recall_degenerate"]),
            metadata=dict(data.get("metadata", {})),
        )


def build_report(
    candidates: PiiSet,
    ground_truth: PiiSet,
    metadata: Mapping[str, object] | None = None,
    k_examples: int = 3,
) -> LeakageReport:
    metrics = compute_metrics(candidates, ground_truth)
    rows = tuple(breakdown_by_category(metrics.match, k_examples=k_examples))
    return LeakageReport(
        rows=rows,
        total_candidates=len(candidates),
        total_matched=len(metrics.match.matched),
        total_ground_truth=len(ground_truth),
        precision=metrics.precision,
        recall=metrics.recall,
        precision_degenerate=metrics.precision_degenerate,
        recall_degenerate=metrics.recall_degenerate,
        metadata=dict(metadata or {}),
    )


class ReportFormat(Enum):
    TEXT_TABLE = "text"
    CSV = "csv"
    JSON = "json"


CSV_HEADER = (
    "category",
    "candidate_count",
    "matched_count",
    "ground_truth_count",
    "precision",
    "recall",
    "examples",
)


def _row_rates(row: CategoryRow) -> tuple[float, float]:
    precision = row.matched_count / row.candidate_count if row.candidate_count else 0.0
    recall = row.matched_count / row.ground_truth_count if row.ground_truth_count else 0.0
    return precision, recall


def _render_csv(report: LeakageReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in report.rows:
        precision, recall = _row_rates(row)
        writer.writerow(
            [
                row.category.value,
                row.candidate_count,
                row.matched_count,
                row.ground_truth_count,
                f"{precision:.6f}",
                f"{recall:.6f}",
                "; ".join(row.examples),
            ]
        )
    if report.rows:
        writer.writerow(
            [
                "TOTAL",
                report.total_candidates,
                report.total_matched,
                report.total_ground_truth,
                f"{report.precision:.6f}",
                f"{report.recall:.6f}",
                "",
            ]
        )
    return buf.getvalue()


def _render_text(report: LeakageReport) -> str:
    headers = ("category", "candidates", "matched", "ground truth", "examples")
    body = [
        (
            row.category.value,
            str(row.candidate_count),
            str(row.matched_count),
            str(row.ground_truth_count),
            "; ".join(row.examples),
        )
        for row in report.rows
    ]
    if report.rows:
        body.append(
            (
                "TOTAL",
                str(report.total_candidates),
                str(report.total_matched),
                str(report.total_ground_truth),
                "",
            )
        )
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in body)) if body else len(headers[i])
        for i in range(len(headers))
    ]

    def fmt(cells) -> str:
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(cells)).rstrip()

    lines = [fmt(headers), fmt(tuple("-" * w for w in widths))]
    lines.extend(fmt(row) for row in body)
    suffix = " (no candidates)" if report.precision_degenerate else ""
    lines.append(f"precision: {report.precision:.4f}{suffix}")
    suffix = " (no ground truth)" if report.recall_degenerate else ""
    lines.append(f"recall:    {report.recall:.4f}{suffix}")
    for key in sorted(report.metadata):
        lines.append(f"{key}: {report.metadata[key]}")
    return "\n".join(lines) + "\n"


def render_report(report: LeakageReport, format: ReportFormat | str) -> str:
    """Serialize a report deterministically; JSON round-trips losslessly."""
    fmt = ReportFormat(format) if not isinstance(format, ReportFormat) else format
    if fmt is ReportFormat.JSON:
        return json.dumps(report.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    if fmt is ReportFormat.CSV:
        return _render_csv(report)
    return _render_text(report)


def parse_report_json(text: str) -> LeakageReport:
    return LeakageReport.from_dict(json.loads(text))
