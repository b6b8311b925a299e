"""Attack planning and execution.

Two attacks are supported: naive extraction (blank and reference-text
snippet prompts against a classification-fine-tuned model, with the same
prompts sent to a base model for the baseline set difference) and
autocomplete extraction (a fixed instruction template applied to email
subjects, several queries per subject).

Runs persist a manifest (plan, seeds, backend descriptors, plan hash) plus a
JSONL file of generation records, checkpointed atomically so an interrupted
run can resume and, with mock backends, end up byte-identical to an
uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .backend import (
    ROLE_BASE,
    ROLE_FINE_TUNED,
    GenerationConfig,
    GenerationRecord,
    TokenBudget,
    estimate_token_budget,
)
from .corpus import CLASSIFICATION_SEPARATOR, AUTOCOMPLETE_PROMPT_TEMPLATE
from .errors import (
    PlanMismatchError,
    RateLimitedError,
    ReferenceTooShortError,
    RunExistsError,
    RunFailedError,
    UpstreamError,
    CompletionTimeoutError,
    ValidationError,
)

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"

#: Per-request backend failures that are flagged and skipped rather than
#: aborting the run outright.
_RECORDED_FAILURES = (RateLimitedError, UpstreamError, CompletionTimeoutError)


class AttackKind(Enum):
    NAIVE_EXTRACTION = "naive_extraction"
    AUTOCOMPLETE = "autocomplete"


class SourceKind(Enum):
    REFERENCE_CORPUS_SNIPPETS = "reference_corpus_snippets"
    BLANK = "blank"
    SUBJECT_LIST = "subject_list"


@dataclass(frozen=True)
class PromptSource:
    """Where attack prompts come from; hashed into the plan fingerprint."""

    kind: SourceKind
    reference_text: str = ""
    subjects: tuple[str, ...] = ()

    @classmethod
    def reference(cls, text: str) -> "PromptSource":
        return cls(kind=SourceKind.REFERENCE_CORPUS_SNIPPETS, reference_text=text)

    @classmethod
    def blank(cls) -> "PromptSource":
        return cls(kind=SourceKind.BLANK)

    @classmethod
    def subject_list(cls, subjects: Iterable[str]) -> "PromptSource":
        return cls(kind=SourceKind.SUBJECT_LIST, subjects=tuple(subjects))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.value.encode("utf-8"))
        h.update(b"\x00")
        h.update(self.reference_text.encode("utf-8"))
        for subject in self.subjects:
            h.update(b"\x00")
            h.update(subject.encode("utf-8"))
        return h.hexdigest()


@dataclass(frozen=True)
class AttackPlan:
    """Everything that determines a run's prompt sequence and sampling."""

    kind: AttackKind
    n_queries: int
    config: GenerationConfig
    seed: str = "0"
    blank_fraction: float = 0.5
    snippet_length_chars: int = 100
    queries_per_subject: int = 5

    def __post_init__(self):
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if not (0.0 <= self.blank_fraction <= 1.0):
            raise ValueError("blank_fraction must be within [0, 1]")
        if self.snippet_length_chars < 1:
            raise ValueError("snippet_length_chars must be >= 1")
        if self.queries_per_subject < 1:
            raise ValueError("queries_per_subject must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_queries": self.n_queries,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "blank_fraction": self.blank_fraction,
            "snippet_length_chars": self.snippet_length_chars,
            "queries_per_subject": self.queries_per_subject,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AttackPlan":
        return cls(
            kind=AttackKind(data["kind"]),
            n_queries=int(data["n_queries"]),
            config=GenerationConfig.from_dict(data["config"]),
            seed=str(data["seed"]),
            blank_fraction=float(data["blank_fraction"]),
            snippet_length_chars=int(data["snippet_length_chars"]),
            queries_per_subject=int(data["queries_per_subject"]),
        )


def naive_plan(
    n_queries: int = 1800,
    seed: str | int = "0",
    max_tokens: int = 256,
    blank_fraction: float = 0.5,
    snippet_length_chars: int = 100,
    temperature_fixed: float | None = None,
) -> AttackPlan:
    seed = str(seed)
    return AttackPlan(
        kind=AttackKind.NAIVE_EXTRACTION,
        n_queries=n_queries,
        config=GenerationConfig(
            max_tokens=max_tokens,
            temperature_fixed=temperature_fixed,
            temperature_seed=seed,
        ),
        seed=seed,
        blank_fraction=blank_fraction,
        snippet_length_chars=snippet_length_chars,
    )


def autocomplete_plan(
    n_subjects: int,
    queries_per_subject: int = 5,
    seed: str | int = "0",
    max_tokens: int = 256,
    temperature_fixed: float | None = None,
) -> AttackPlan:
    if n_subjects < 1:
        raise ValidationError("autocomplete attack needs at least one subject")
    seed = str(seed)
    return AttackPlan(
        kind=AttackKind.AUTOCOMPLETE,
        n_queries=n_subjects * queries_per_subject,
        config=GenerationConfig(
            max_tokens=max_tokens,
            temperature_fixed=temperature_fixed,
            temperature_seed=seed,
        ),
        seed=seed,
        queries_per_subject=queries_per_subject,
    )


# -- prompt construction ------------------------------------------------


def _sample_snippet(reference_text: str, length_chars: int, seed: str, index: int) -> str:
    if len(reference_text) < length_chars:
        raise ReferenceTooShortError(
            f"reference text has {len(reference_text)} chars, need {length_chars}"
        )
    rng = random.Random(f"snippet:{seed}:{index}")
    for _ in range(200):
        offset = rng.randrange(0, len(reference_text) - length_chars + 1)
        snippet = reference_text[offset : offset + length_chars]
        if CLASSIFICATION_SEPARATOR not in snippet:
            return snippet
    raise ReferenceTooShortError(
        "could not sample a snippet free of the training separator"
    )


def sample_naive_prompts(
    reference_text: str, count: int, length_chars: int = 100, seed: str | int = "0"
) -> list[str]:
    """Deterministically sample ``count`` exact-length slices of the text.

    Character offsets, not bytes; slices containing the classification
    separator are rejected and resampled.
    """
    if count < 0:
        raise ValidationError("count must be >= 0")
    seed = str(seed)
    return [_sample_snippet(reference_text, length_chars, seed, i) for i in range(count)]


def blank_positions(n_queries: int, blank_fraction: float) -> frozenset[int]:
    """Which request indices get the blank prompt.

    The blank count is blank_fraction x n rounded to the nearest integer;
    blanks fill even indices first, then odd ones, so a 50/50 split
    alternates blank/snippet exactly.
    """
    n_blank = int(blank_fraction * n_queries + 0.5)
    order = list(range(0, n_queries, 2)) + list(range(1, n_queries, 2))
    return frozenset(order[:n_blank])


class QueryPrompt(NamedTuple):
    index: int
    text: str
    subject_index: int | None


def build_prompt_sequence(plan: AttackPlan, source: PromptSource) -> list[QueryPrompt]:
    """The full, deterministic prompt list for a plan.

    Rebuilding this is how resume recovers the prompts it still owes.
    """
    if plan.kind is AttackKind.NAIVE_EXTRACTION:
        blanks = blank_positions(plan.n_queries, plan.blank_fraction)
        if source.kind is SourceKind.BLANK:
            if len(blanks) != plan.n_queries:
                raise ValidationError(
                    "a blank-only source requires blank_fraction that rounds to all queries"
                )
        elif source.kind is not SourceKind.REFERENCE_CORPUS_SNIPPETS:
            raise ValidationError(f"naive attack cannot use source {source.kind.value}")
        prompts = []
        for i in range(plan.n_queries):
            if i in blanks:
                text = ""
            else:
                text = _sample_snippet(
                    source.reference_text, plan.snippet_length_chars, plan.seed, i
                )
            prompts.append(QueryPrompt(index=i, text=text, subject_index=None))
    elif plan.kind is AttackKind.AUTOCOMPLETE:
        if source.kind is not SourceKind.SUBJECT_LIST:
            raise ValidationError("autocomplete attack needs a subject list source")
        if not source.subjects:
            raise ValidationError("autocomplete attack needs at least one subject")
        expected = len(source.subjects) * plan.queries_per_subject
        if plan.n_queries != expected:
            raise ValidationError(
                f"plan has {plan.n_queries} queries but "
                f"{len(source.subjects)} subjects x {plan.queries_per_subject} = {expected}"
            )
        prompts = [
            QueryPrompt(
                index=i,
                text=AUTOCOMPLETE_PROMPT_TEMPLATE + source.subjects[i // plan.queries_per_subject],
                subject_index=i // plan.queries_per_subject,
            )
            for i in range(plan.n_queries)
        ]
    else:  # pragma: no cover - enum is closed
        raise ValidationError(f"unknown attack kind {plan.kind}")

    for prompt in prompts:
        if CLASSIFICATION_SEPARATOR in prompt.text:
            raise ValidationError(
                f"prompt {prompt.index} contains the training separator"
            )
    return prompts


def unique_subjects(records: Iterable) -> list[str]:
    """Distinct non-blank subjects of the records, in first-seen order."""
    seen = dict.fromkeys(
        record.subject for record in records if record.subject.strip()
    )
    return list(seen)


def plan_token_budget(plan: AttackPlan) -> TokenBudget:
    """Per-backend worst-case token spend for the plan."""
    return estimate_token_budget(plan.n_queries, plan.config)


# -- run engine ---------------------------------------------------------


def plan_fingerprint(plan: AttackPlan, source: PromptSource, descriptors) -> str:
    payload = {
        "plan": plan.to_dict(),
        "source_digest": source.digest(),
        "backends": [d.to_dict() for d in descriptors],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class RunResult:
    """Outcome of one (possibly partial) attack invocation."""

    run_dir: Path
    manifest: dict
    records: list[GenerationRecord]
    failed: dict[str, list[int]]
    complete: bool

    def records_for(self, backend_role: str) -> list[GenerationRecord]:
        return [r for r in self.records if r.backend_role == backend_role]


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _records_blob(records: list[GenerationRecord], role_rank: dict[str, int]) -> str:
    ordered = sorted(
        records, key=lambda r: (role_rank[r.backend_role], r.request_index)
    )
    return "".join(record.to_json_line() + "\n" for record in ordered)


def _manifest_blob(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def load_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise ValidationError(f"no run manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_run_records(run_dir: str | Path) -> list[GenerationRecord]:
    path = Path(run_dir) / RECORDS_NAME
    if not path.exists():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(GenerationRecord.from_dict(json.loads(line)))
    return records


def _execute_chunk(backend, chunk: list[QueryPrompt], config: GenerationConfig):
    """Run one chunk of prompts, results ordered by request index.

    Concurrency is capped by the backend's in-flight bound; outputs are
    (prompt, result-or-None, error-message-or-None) triples.
    """

    def one(prompt: QueryPrompt):
        try:
            return prompt, backend.complete(prompt.text, prompt.index, config), None
        except _RECORDED_FAILURES as exc:
            return prompt, None, f"{exc.kind}: {exc}"

    bound = getattr(backend, "max_in_flight", 1)
    if bound <= 1 or len(chunk) <= 1:
        return [one(prompt) for prompt in chunk]
    with ThreadPoolExecutor(max_workers=min(bound, len(chunk))) as pool:
        return list(pool.map(one, chunk))


def _reconcile_progress(
    manifest: dict, records: list[GenerationRecord], roles: list[str], n_queries: int
) -> dict[str, int]:
    """Number of settled (succeeded or flagged-failed) indices per role."""
    progress = {}
    by_role: dict[str, set[int]] = {role: set() for role in roles}
    for record in records:
        if record.backend_role not in by_role:
            raise RunFailedError(
                f"checkpoint contains records for unknown role {record.backend_role!r}"
            )
        by_role[record.backend_role].add(record.request_index)
    for role in roles:
        done = by_role[role] | set(manifest["failed"].get(role, []))
        if done != set(range(len(done))):
            raise RunFailedError(f"checkpoint for role {role!r} is not contiguous")
        if len(done) > n_queries:
            raise RunFailedError(f"checkpoint for role {role!r} overruns the plan")
        progress[role] = len(done)
    return progress


def _drive_run(
    run_dir: Path,
    plan: AttackPlan,
    source: PromptSource,
    backends: Sequence,
    *,
    fresh: bool,
    checkpoint_every: int,
    failure_threshold: float,
    stop_after: int | None,
) -> RunResult:
    if checkpoint_every < 1:
        raise ValidationError("checkpoint_every must be >= 1")
    if not (0.0 <= failure_threshold <= 1.0):
        raise ValidationError("failure_threshold must be within [0, 1]")

    descriptors = [b.descriptor for b in backends]
    roles = [d.role for d in descriptors]
    if len(set(roles)) != len(roles):
        raise ValidationError(f"backend roles must be distinct, got {roles}")
    prompts = build_prompt_sequence(plan, source)
    fingerprint = plan_fingerprint(plan, source, descriptors)
    role_rank = {role: i for i, role in enumerate(roles)}
    manifest_path = run_dir / MANIFEST_NAME
    records_path = run_dir / RECORDS_NAME

    if fresh:
        if manifest_path.exists():
            raise RunExistsError(f"refusing to overwrite existing run at {run_dir}")
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "attack_kind": plan.kind.value,
            "plan": plan.to_dict(),
            "source_digest": source.digest(),
            "backends": [d.to_dict() for d in descriptors],
            "roles": roles,
            "n_queries": plan.n_queries,
            "fingerprint": fingerprint,
            "failed": {role: [] for role in roles},
            "status": "in_progress",
        }
        records: list[GenerationRecord] = []
        progress = {role: 0 for role in roles}
    else:
        manifest = load_manifest(run_dir)
        if manifest.get("fingerprint") != fingerprint:
            raise PlanMismatchError(
                "run manifest does not match the supplied plan/source/backends"
            )
        manifest.setdefault("failed", {role: [] for role in roles})
        records = load_run_records(run_dir)
        progress = _reconcile_progress(manifest, records, roles, plan.n_queries)

    failed = {role: list(manifest["failed"].get(role, [])) for role in roles}
    total_planned = plan.n_queries * len(backends)
    failures_total = sum(len(v) for v in failed.values())
    executed = 0

    def checkpoint() -> None:
        manifest["failed"] = {role: sorted(failed[role]) for role in roles}
        _atomic_write_text(records_path, _records_blob(records, role_rank))
        _atomic_write_text(manifest_path, _manifest_blob(manifest))

    def result(done: bool) -> RunResult:
        return RunResult(
            run_dir=run_dir,
            manifest=manifest,
            records=list(records),
            failed={role: sorted(failed[role]) for role in roles},
            complete=done,
        )

    checkpoint()
    for backend, descriptor in zip(backends, descriptors):
        role = descriptor.role
        is_mock = descriptor.kind == "mock"
        i = progress[role]
        while i < plan.n_queries:
            if stop_after is not None and executed >= stop_after:
                checkpoint()
                return result(done=False)
            size = min(checkpoint_every, plan.n_queries - i)
            if stop_after is not None:
                size = min(size, stop_after - executed)
            chunk = prompts[i : i + size]
            timestamp = None if is_mock else _utc_now()
            for prompt, completion, error in _execute_chunk(backend, chunk, plan.config):
                if completion is None:
                    failed[role].append(prompt.index)
                    failures_total += 1
                else:
                    records.append(
                        GenerationRecord(
                            request_index=prompt.index,
                            backend_role=role,
                            prompt=prompt.text,
                            completion=completion.text,
                            model=completion.model,
                            temperature=completion.temperature,
                            max_tokens=plan.config.max_tokens,
                            timestamp=timestamp,
                            subject_index=prompt.subject_index,
                        )
                    )
            i += size
            executed += size
            progress[role] = i
            checkpoint()
            if failures_total > failure_threshold * total_planned:
                manifest["status"] = "failed"
                checkpoint()
                raise RunFailedError(
                    f"{failures_total} of {total_planned} requests failed, "
                    f"over the {failure_threshold:.0%} threshold"
                )

    manifest["status"] = "complete"
    checkpoint()
    return result(done=True)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_naive_attack(
    run_dir: str | Path,
    ft_backend,
    base_backend,
    plan: AttackPlan,
    source: PromptSource,
    *,
    checkpoint_every: int = 50,
    failure_threshold: float = 0.1,
    stop_after: int | None = None,
) -> RunResult:
    """Send the same prompt sequence to the fine-tuned and base backends.

    Refuses to start over an existing run directory; use resume_run for
    continuation.
    """
    if plan.kind is not AttackKind.NAIVE_EXTRACTION:
        raise ValidationError("run_naive_attack needs a naive-extraction plan")
    if ft_backend.descriptor.role != ROLE_FINE_TUNED:
        raise ValidationError("first backend must have the fine-tuned role")
    if base_backend.descriptor.role != ROLE_BASE:
        raise ValidationError("second backend must have the base role")
    return _drive_run(
        Path(run_dir),
        plan,
        source,
        [ft_backend, base_backend],
        fresh=True,
        checkpoint_every=checkpoint_every,
        failure_threshold=failure_threshold,
        stop_after=stop_after,
    )


def run_autocomplete_attack(
    run_dir: str | Path,
    backend,
    subjects: Sequence[str],
    plan: AttackPlan,
    *,
    checkpoint_every: int = 50,
    failure_threshold: float = 0.1,
    stop_after: int | None = None,
) -> RunResult:
    """Query one backend with the subject template, several times per subject."""
    if plan.kind is not AttackKind.AUTOCOMPLETE:
        raise ValidationError("run_autocomplete_attack needs an autocomplete plan")
    return _drive_run(
        Path(run_dir),
        plan,
        PromptSource.subject_list(subjects),
        [backend],
        fresh=True,
        checkpoint_every=checkpoint_every,
        failure_threshold=failure_threshold,
        stop_after=stop_after,
    )


def resume_run(
    run_dir: str | Path,
    backends: Sequence,
    source: PromptSource,
    *,
    checkpoint_every: int = 50,
    failure_threshold: float = 0.1,
    stop_after: int | None = None,
) -> RunResult:
    """Complete the remaining request indices of a checkpointed run.

    The stored plan hash must match the recomputed one for the given source
    and backends; resuming an already-complete run performs zero requests.
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    plan = AttackPlan.from_dict(manifest["plan"])
    return _drive_run(
        run_dir,
        plan,
        source,
        backends,
        fresh=False,
        checkpoint_every=checkpoint_every,
        failure_threshold=failure_threshold,
        stop_after=stop_after,
    )
