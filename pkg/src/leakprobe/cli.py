"""Command-line pipeline driver.

Stages communicate through files under the output directory, so each
subcommand can be run, inspected, and re-run independently; ``audit`` chains
them all. Configuration is a TOML file; ``${VAR}`` interpolation from the
environment is applied to secret fields (API keys) only.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis, attack, corpus, pii
from .backend import (
    ROLE_BASE,
    ROLE_FINE_TUNED,
    HttpBackend,
    MockMemorizingBackend,
    RetryPolicy,
    estimate_token_budget,
)
from .errors import ConfigError, LeakprobeError, RunError, ValidationError
from .pii import Provenance

logger = logging.getLogger(__name__)

_ENV_REF_PREFIX = "${"

TASK_CHOICES = ("classification", "autocomplete")
BACKEND_CHOICES = ("mock", "http")

_TASKS = {
    "classification": corpus.TaskKind.CLASSIFICATION,
    "autocomplete": corpus.TaskKind.AUTOCOMPLETE,
}


def _bundled_text(name: str) -> str:
    return (
        resources.files("leakprobe").joinpath("data").joinpath(name).read_text("utf-8")
    )


def _bundled_bytes(name: str) -> bytes:
    return resources.files("leakprobe").joinpath("data").joinpath(name).read_bytes()


# -- configuration ------------------------------------------------------


@dataclass
class AttackOptions:
    n_queries: int = 1800
    blank_fraction: float = 0.5
    snippet_length_chars: int = 100
    queries_per_subject: int = 5
    max_tokens: int = 256
    temperature_fixed: float | None = None
    checkpoint_every: int = 50
    failure_threshold: float = 0.1
    subjects_from: str = "train"
    subtract_base: bool = False
    reference_path: Path | None = None


@dataclass
class RunConfig:
    """Validated run configuration; every path checked at load time."""

    config_path: Path
    corpus_path: Path
    corpus_format: str
    policy: corpus.FilterPolicy
    train_count: int
    task: corpus.TaskKind
    seed: str
    out_dir: Path
    backend_specs: dict[str, dict] = field(default_factory=dict)
    attack_opts: AttackOptions = field(default_factory=AttackOptions)
    gazetteer_path: Path | None = None
    pattern_names: list[str] | None = None
    k_examples: int = 3


def _want(table: dict, key: str, kind: type, where: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"missing required key {key!r} in [{where}]")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is str and isinstance(value, int) and not isinstance(value, bool):
        value = str(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(
            f"key {key!r} in [{where}] must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _resolve_secret(value: str, where: str) -> str:
    """Expand a ``${VAR}`` reference from the environment; secrets only."""
    if value.startswith(_ENV_REF_PREFIX) and value.endswith("}"):
        var = value[2:-1]
        resolved = os.environ.get(var)
        if not resolved:
            raise ConfigError(f"[{where}] references unset environment variable {var}")
        return resolved
    return value


def _existing_path(raw: str, base: Path, what: str) -> Path:
    path = Path(raw)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError(f"{what} {path} does not exist")
    return path


def load_config(
    config_path: str | Path,
    out: str | None = None,
    seed: str | None = None,
    task: str | None = None,
    backend_kind: str | None = None,
) -> RunConfig:
    config_path = Path(config_path)
    if not config_path.exists():
        raise ConfigError(f"config file {config_path} does not exist")
    try:
        raw = tomllib.loads(config_path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {config_path}: {exc}") from exc
    base = config_path.parent

    corpus_tbl = raw.get("corpus", {})
    corpus_raw = _want(corpus_tbl, "path", str, "corpus", required=True)
    corpus_path = _existing_path(corpus_raw, base, "corpus file")
    corpus_format = _want(
        corpus_tbl,
        "format",
        str,
        "corpus",
        default="jsonl" if corpus_path.suffix == ".jsonl" else "csv",
    ).lower()
    if corpus_format not in ("csv", "jsonl"):
        raise ConfigError(f"corpus format must be csv or jsonl, got {corpus_format!r}")

    filter_tbl = raw.get("filter", {})
    try:
        policy = corpus.FilterPolicy(
            min_sentences=_want(filter_tbl, "min_sentences", int, "filter", default=3),
            min_words=_want(filter_tbl, "min_words", int, "filter", default=25),
            max_words=_want(filter_tbl, "max_words", int, "filter", default=256),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [filter] settings: {exc}") from exc

    split_tbl = raw.get("split", {})
    train_count = _want(split_tbl, "train_count", int, "split", required=True)

    task_name = task or _want(
        raw.get("task", {}), "kind", str, "task", default="classification"
    )
    if task_name not in _TASKS:
        raise ConfigError(f"task must be one of {TASK_CHOICES}, got {task_name!r}")

    seed_value = seed if seed is not None else _want(raw, "seed", str, "top level", default="0")

    out_tbl = raw.get("output", {})
    out_dir = Path(out or _want(out_tbl, "dir", str, "output", default="out"))

    backend_tbl = raw.get("backend", {})
    specs: dict[str, dict] = {}
    for role, default_leak in ((ROLE_FINE_TUNED, 0.35), (ROLE_BASE, 0.0)):
        spec = dict(backend_tbl.get(role, {}))
        spec.setdefault("kind", "mock")
        if backend_kind is not None:
            spec["kind"] = backend_kind
        if spec["kind"] not in BACKEND_CHOICES:
            raise ConfigError(
                f"backend kind must be one of {BACKEND_CHOICES}, got {spec['kind']!r}"
            )
        if spec["kind"] == "mock":
            spec.setdefault("leak_rate", default_leak)
        else:
            for key in ("endpoint", "model"):
                if not spec.get(key):
                    raise ConfigError(
                        f"[backend.{role}] with kind=http requires {key!r}"
                    )
            if "api_key" in spec:
                spec["api_key"] = _resolve_secret(
                    str(spec["api_key"]), f"backend.{role}"
                )
        specs[role] = spec

    attack_tbl = raw.get("attack", {})
    opts = AttackOptions(
        n_queries=_want(attack_tbl, "n_queries", int, "attack", default=1800),
        blank_fraction=_want(attack_tbl, "blank_fraction", float, "attack", default=0.5),
        snippet_length_chars=_want(
            attack_tbl, "snippet_length_chars", int, "attack", default=100
        ),
        queries_per_subject=_want(
            attack_tbl, "queries_per_subject", int, "attack", default=5
        ),
        max_tokens=_want(attack_tbl, "max_tokens", int, "attack", default=256),
        temperature_fixed=_want(
            attack_tbl, "temperature_fixed", float, "attack", default=None
        ),
        checkpoint_every=_want(attack_tbl, "checkpoint_every", int, "attack", default=50),
        failure_threshold=_want(
            attack_tbl, "failure_threshold", float, "attack", default=0.1
        ),
        subjects_from=_want(attack_tbl, "subjects_from", str, "attack", default="train"),
        subtract_base=_want(attack_tbl, "subtract_base", bool, "attack", default=False),
    )
    if opts.subjects_from not in ("train", "ood"):
        raise ConfigError("attack.subjects_from must be 'train' or 'ood'")
    reference_raw = _want(attack_tbl, "reference_text", str, "attack", default=None)
    if reference_raw is not None:
        opts.reference_path = _existing_path(reference_raw, base, "reference text file")

    pii_tbl = raw.get("pii", {})
    gazetteer_raw = _want(pii_tbl, "gazetteer", str, "pii", default=None)
    gazetteer_path = (
        _existing_path(gazetteer_raw, base, "gazetteer file")
        if gazetteer_raw is not None
        else None
    )
    patterns_raw = pii_tbl.get("patterns")
    if patterns_raw is not None and (
        not isinstance(patterns_raw, list)
        or not all(isinstance(p, str) for p in patterns_raw)
    ):
        raise ConfigError("pii.patterns must be a list of category names")

    report_tbl = raw.get("report", {})
    k_examples = _want(report_tbl, "examples", int, "report", default=3)

    return RunConfig(
        config_path=config_path,
        corpus_path=corpus_path,
        corpus_format=corpus_format,
        policy=policy,
        train_count=train_count,
        task=_TASKS[task_name],
        seed=str(seed_value),
        out_dir=out_dir,
        backend_specs=specs,
        attack_opts=opts,
        gazetteer_path=gazetteer_path,
        pattern_names=patterns_raw,
        k_examples=k_examples,
    )


# -- shared plumbing ----------------------------------------------------


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _stage_dir(cfg: RunConfig, name: str) -> Path:
    path = cfg.out_dir / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_artifact(path: Path, data: bytes) -> str:
    """Write an output file; returns its digest for the stage manifest."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return _sha256_bytes(data)


def _write_stage_manifest(
    stage_path: Path, stage: str, params: dict, inputs: dict, outputs: dict
) -> None:
    manifest = {"stage": stage, "params": params, "inputs": inputs, "outputs": outputs}
    blob = json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    _write_artifact(stage_path / "manifest.json", blob.encode("utf-8"))


def _load_gazetteer(cfg: RunConfig) -> pii.Gazetteer:
    if cfg.gazetteer_path is not None:
        data = cfg.gazetteer_path.read_bytes()
    else:
        data = _bundled_bytes("demo_gazetteer.json")
    return pii.Gazetteer.from_dict(json.loads(data.decode("utf-8")))


def _patterns(cfg: RunConfig):
    if cfg.pattern_names is None:
        return None
    return pii.default_patterns(cfg.pattern_names)


def _reference_text(cfg: RunConfig) -> str:
    if cfg.attack_opts.reference_path is not None:
        return cfg.attack_opts.reference_path.read_text(encoding="utf-8")
    return _bundled_text("reference_text.txt")


# -- stages -------------------------------------------------------------


def _stage_prepare(cfg: RunConfig) -> tuple[list, list]:
    corpus_bytes = cfg.corpus_path.read_bytes()
    with open(cfg.corpus_path, "rb") as fh:
        records = corpus.parse_email_corpus(fh, cfg.corpus_format)
    kept, rejected = corpus.apply_filter_policy(records, cfg.policy)
    split = corpus.split_train_ood(kept, cfg.train_count, seed=f"{cfg.seed}:split")

    stage = _stage_dir(cfg, "prepared")
    outputs = {}
    train_blob = _email_jsonl(split.train)
    ood_blob = _email_jsonl(split.ood)
    rejected_blob = (
        "".join(
            json.dumps(
                {"record": rec.to_dict(), "reason": reason},
                sort_keys=True,
                ensure_ascii=False,
            )
            + "\n"
            for rec, reason in rejected
        )
    ).encode("utf-8")
    outputs["train.jsonl"] = _write_artifact(stage / "train.jsonl", train_blob)
    outputs["ood.jsonl"] = _write_artifact(stage / "ood.jsonl", ood_blob)
    outputs["rejected.jsonl"] = _write_artifact(stage / "rejected.jsonl", rejected_blob)
    _write_stage_manifest(
        stage,
        "prepare",
        params={
            "min_sentences": cfg.policy.min_sentences,
            "min_words": cfg.policy.min_words,
            "max_words": cfg.policy.max_words,
            "train_count": cfg.train_count,
            "seed": cfg.seed,
            "parsed": len(records),
            "kept": len(kept),
            "rejected": len(rejected),
        },
        inputs={"corpus": {"path": str(cfg.corpus_path), "sha256": _sha256_bytes(corpus_bytes)}},
        outputs=outputs,
    )
    print(
        f"prepared: {len(records)} parsed, {len(kept)} kept "
        f"({len(split.train)} train / {len(split.ood)} ood), {len(rejected)} rejected"
    )
    return list(split.train), list(split.ood)


def _email_jsonl(records) -> bytes:
    return (
        "".join(
            json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n"
            for r in records
        )
    ).encode("utf-8")


def _load_prepared(cfg: RunConfig) -> tuple[list, list]:
    stage = cfg.out_dir / "prepared"
    train_path = stage / "train.jsonl"
    ood_path = stage / "ood.jsonl"
    if not train_path.exists():
        raise ValidationError(f"{train_path} missing; run `prepare` first")
    with open(train_path, "rb") as fh:
        train = corpus.load_records(fh)
    ood = []
    if ood_path.exists():
        with open(ood_path, "rb") as fh:
            ood = corpus.load_records(fh)
    return train, ood


def _stage_build(cfg: RunConfig) -> list[corpus.FinetuneExample]:
    train, _ = _load_prepared(cfg)
    if cfg.task is corpus.TaskKind.CLASSIFICATION:
        examples = corpus.build_classification_examples(train)
    else:
        examples = corpus.build_autocomplete_examples(train)
    stage = _stage_dir(cfg, "build")
    blob = (
        "".join(
            json.dumps(
                {
                    "task": ex.task.value,
                    "prompt": ex.prompt,
                    "completion": ex.completion,
                    "source_id": ex.source_id,
                },
                sort_keys=True,
                ensure_ascii=False,
            )
            + "\n"
            for ex in examples
        )
    ).encode("utf-8")
    digest = _write_artifact(stage / "examples.jsonl", blob)
    _write_stage_manifest(
        stage,
        "build",
        params={"task": cfg.task.value, "examples": len(examples)},
        inputs={"train": {"path": "prepared/train.jsonl"}},
        outputs={"examples.jsonl": digest},
    )
    print(f"built {len(examples)} fine-tune examples ({cfg.task.value})")
    return examples


def _load_built_examples(cfg: RunConfig) -> list[corpus.FinetuneExample]:
    path = cfg.out_dir / "build" / "examples.jsonl"
    if not path.exists():
        raise ValidationError(f"{path} missing; run `build` first")
    examples = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        examples.append(
            corpus.FinetuneExample(
                task=corpus.TaskKind(obj["task"]),
                prompt=obj["prompt"],
                completion=obj["completion"],
                source_id=obj["source_id"],
            )
        )
    return examples


def _stage_export(cfg: RunConfig) -> Path:
    examples = _load_built_examples(cfg)
    stage = _stage_dir(cfg, "export")
    path = stage / "finetune.jsonl"
    sink = io.BytesIO()
    count = corpus.export_finetune_file(examples, sink)
    digest = _write_artifact(path, sink.getvalue())
    _write_stage_manifest(
        stage,
        "export",
        params={"examples": count},
        inputs={"examples": {"path": "build/examples.jsonl"}},
        outputs={"finetune.jsonl": digest},
    )
    print(f"exported {count} examples to {path}")
    return path


def _build_backends(cfg: RunConfig, train) -> tuple[object, object]:
    docs = [corpus.record_document(r) for r in train]
    return (
        _one_backend(cfg, ROLE_FINE_TUNED, docs),
        _one_backend(cfg, ROLE_BASE, docs),
    )


def _one_backend(cfg: RunConfig, role: str, docs: list[str]):
    spec = cfg.backend_specs[role]
    where = f"backend.{role}"
    if spec["kind"] == "mock":
        leak_rate = float(spec.get("leak_rate", 0.0))
        return MockMemorizingBackend(
            documents=tuple(docs),
            leak_rate=leak_rate,
            seed=str(spec.get("seed", f"{cfg.seed}:{role}")),
            model=str(spec.get("model", f"mock-{role}")),
            role=role,
        )
    retry = RetryPolicy(
        max_retries=int(spec.get("max_retries", 3)),
        backoff_base=float(spec.get("backoff_base", 0.5)),
        backoff_factor=float(spec.get("backoff_factor", 2.0)),
        timeout=float(spec.get("timeout", 60.0)),
    )
    try:
        return HttpBackend(
            endpoint=str(spec["endpoint"]),
            model=str(spec["model"]),
            api_key=spec.get("api_key"),
            role=role,
            retry=retry,
            max_in_flight=int(spec.get("max_in_flight", 4)),
        )
    except ConfigError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def _needs_base_run(cfg: RunConfig) -> bool:
    if cfg.task is corpus.TaskKind.CLASSIFICATION:
        return True
    return cfg.attack_opts.subtract_base


def _stage_attack(cfg: RunConfig, stop_after: int | None = None) -> dict:
    train, ood = _load_prepared(cfg)
    opts = cfg.attack_opts
    ft_backend, base_backend = _build_backends(cfg, train)
    stage = _stage_dir(cfg, "attack")
    run_dir = stage / "run"
    summary: dict = {"task": cfg.task.value}

    if cfg.task is corpus.TaskKind.CLASSIFICATION:
        plan = attack.naive_plan(
            n_queries=opts.n_queries,
            seed=cfg.seed,
            max_tokens=opts.max_tokens,
            blank_fraction=opts.blank_fraction,
            snippet_length_chars=opts.snippet_length_chars,
            temperature_fixed=opts.temperature_fixed,
        )
        source = attack.PromptSource.reference(_reference_text(cfg))
        if (run_dir / attack.MANIFEST_NAME).exists():
            result = attack.resume_run(
                run_dir,
                [ft_backend, base_backend],
                source,
                checkpoint_every=opts.checkpoint_every,
                failure_threshold=opts.failure_threshold,
                stop_after=stop_after,
            )
        else:
            result = attack.run_naive_attack(
                run_dir,
                ft_backend,
                base_backend,
                plan,
                source,
                checkpoint_every=opts.checkpoint_every,
                failure_threshold=opts.failure_threshold,
                stop_after=stop_after,
            )
        results = [result]
    else:
        pool = train if opts.subjects_from == "train" else ood
        subjects = attack.unique_subjects(pool)
        if not subjects:
            raise ValidationError(
                f"no usable subjects in the {opts.subjects_from} split"
            )
        plan = attack.autocomplete_plan(
            len(subjects),
            queries_per_subject=opts.queries_per_subject,
            seed=cfg.seed,
            max_tokens=opts.max_tokens,
            temperature_fixed=opts.temperature_fixed,
        )
        results = [
            _run_or_resume_autocomplete(
                run_dir, ft_backend, subjects, plan, opts, stop_after
            )
        ]
        if opts.subtract_base:
            results.append(
                _run_or_resume_autocomplete(
                    stage / "run_base", base_backend, subjects, plan, opts, stop_after
                )
            )
        summary["subjects"] = len(subjects)

    budget = estimate_token_budget(plan.n_queries, plan.config)
    summary.update(
        {
            "n_queries": plan.n_queries,
            "max_tokens_total": budget.max_tokens_total,
            "approx_words": budget.approx_words,
            "complete": all(r.complete for r in results),
            "failed_requests": sum(
                len(indices) for r in results for indices in r.failed.values()
            ),
        }
    )
    _write_stage_manifest(
        stage,
        "attack",
        params=summary,
        inputs={"train": {"path": "prepared/train.jsonl"}},
        outputs={"run": str(run_dir.relative_to(cfg.out_dir))},
    )
    status = "complete" if summary["complete"] else "interrupted (resume with `attack`)"
    print(
        f"attack {status}: {plan.n_queries} queries planned, "
        f"token ceiling {budget.max_tokens_total} (~{budget.approx_words} words)"
    )
    return summary


def _run_or_resume_autocomplete(run_dir, backend, subjects, plan, opts, stop_after):
    if (run_dir / attack.MANIFEST_NAME).exists():
        return attack.resume_run(
            run_dir,
            [backend],
            attack.PromptSource.subject_list(subjects),
            checkpoint_every=opts.checkpoint_every,
            failure_threshold=opts.failure_threshold,
            stop_after=stop_after,
        )
    return attack.run_autocomplete_attack(
        run_dir,
        backend,
        subjects,
        plan,
        checkpoint_every=opts.checkpoint_every,
        failure_threshold=opts.failure_threshold,
        stop_after=stop_after,
    )


def _load_attack_records(cfg: RunConfig) -> tuple[list, list, dict]:
    stage = cfg.out_dir / "attack"
    run_dir = stage / "run"
    if not (run_dir / attack.MANIFEST_NAME).exists():
        raise ValidationError(f"no attack run under {stage}; run `attack` first")
    manifest = attack.load_manifest(run_dir)
    if manifest.get("status") != "complete":
        raise ValidationError(
            "attack run is incomplete; run `attack` again to resume it"
        )
    records = attack.load_run_records(run_dir)
    base_dir = stage / "run_base"
    if (base_dir / attack.MANIFEST_NAME).exists():
        base_manifest = attack.load_manifest(base_dir)
        if base_manifest.get("status") != "complete":
            raise ValidationError(
                "base attack run is incomplete; run `attack` again to resume it"
            )
        records.extend(attack.load_run_records(base_dir))
    ft = [r for r in records if r.backend_role == ROLE_FINE_TUNED]
    base = [r for r in records if r.backend_role == ROLE_BASE]
    return ft, base, manifest


def _stage_extract(cfg: RunConfig) -> None:
    ft_records, base_records, run_manifest = _load_attack_records(cfg)
    gazetteer = _load_gazetteer(cfg)
    patterns = _patterns(cfg)
    train, _ = _load_prepared(cfg)

    e_ft = analysis.collect_extracted_pii(
        ft_records, gazetteer, patterns, provenance=Provenance.FINE_TUNED_GENERATIONS
    )
    ground_truth = pii.build_ground_truth(train, gazetteer, patterns)

    stage = _stage_dir(cfg, "extract")
    outputs = {
        "e_ft.json": _write_artifact(stage / "e_ft.json", _set_blob(e_ft)),
        "ground_truth.json": _write_artifact(
            stage / "ground_truth.json", _set_blob(ground_truth)
        ),
    }
    counts = {"e_ft": len(e_ft), "ground_truth": len(ground_truth)}
    if base_records or _needs_base_run(cfg):
        e_base = analysis.collect_extracted_pii(
            base_records, gazetteer, patterns, provenance=Provenance.BASE_GENERATIONS
        )
        outputs["e_base.json"] = _write_artifact(stage / "e_base.json", _set_blob(e_base))
        counts["e_base"] = len(e_base)
    _write_stage_manifest(
        stage,
        "extract",
        params={"counts": counts, "fingerprint": run_manifest.get("fingerprint", "")},
        inputs={"run": {"path": "attack/run"}},
        outputs=outputs,
    )
    print(
        "extracted PII sets: "
        + ", ".join(f"{name}={count}" for name, count in sorted(counts.items()))
    )


def _set_blob(pii_set: pii.PiiSet) -> bytes:
    return (
        json.dumps(pii_set.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    ).encode("utf-8")


def _load_set(path: Path, what: str) -> pii.PiiSet:
    if not path.exists():
        raise ValidationError(f"{path} missing; run `extract` first ({what})")
    return pii.PiiSet.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _stage_analyze(cfg: RunConfig) -> analysis.LeakageReport:
    stage_in = cfg.out_dir / "extract"
    e_ft = _load_set(stage_in / "e_ft.json", "fine-tuned extraction set")
    ground_truth = _load_set(stage_in / "ground_truth.json", "ground truth set")

    subtract = _needs_base_run(cfg)
    if subtract:
        e_base = _load_set(stage_in / "e_base.json", "base extraction set")
        candidates = analysis.filter_novel(e_ft, e_base)
    else:
        candidates = e_ft

    _, _, run_manifest = _load_attack_records(cfg)
    metadata = {
        "task": cfg.task.value,
        "attack_kind": run_manifest.get("attack_kind", ""),
        "n_queries": run_manifest.get("n_queries", 0),
        "seed": cfg.seed,
        "base_subtracted": subtract,
        "fingerprint": run_manifest.get("fingerprint", ""),
        "failed_requests": sum(
            len(v) for v in run_manifest.get("failed", {}).values()
        ),
    }
    report = analysis.build_report(
        candidates, ground_truth, metadata=metadata, k_examples=cfg.k_examples
    )
    stage = _stage_dir(cfg, "analyze")
    digest = _write_artifact(
        stage / "report.json",
        analysis.render_report(report, analysis.ReportFormat.JSON).encode("utf-8"),
    )
    _write_stage_manifest(
        stage,
        "analyze",
        params={"base_subtracted": subtract, "k_examples": cfg.k_examples},
        inputs={"extract": {"path": "extract"}},
        outputs={"report.json": digest},
    )
    print(
        f"analysis: precision {report.precision:.4f}, recall {report.recall:.4f} "
        f"({report.total_matched} matched / {report.total_candidates} candidates "
        f"/ {report.total_ground_truth} ground truth)"
    )
    return report


def _stage_report(cfg: RunConfig) -> analysis.LeakageReport:
    source = cfg.out_dir / "analyze" / "report.json"
    if not source.exists():
        raise ValidationError(f"{source} missing; run `analyze` first")
    report = analysis.parse_report_json(source.read_text(encoding="utf-8"))
    stage = _stage_dir(cfg, "report")
    outputs = {}
    for fmt, name in (
        (analysis.ReportFormat.JSON, "report.json"),
        (analysis.ReportFormat.CSV, "report.csv"),
        (analysis.ReportFormat.TEXT_TABLE, "report.txt"),
    ):
        blob = analysis.render_report(report, fmt).encode("utf-8")
        outputs[name] = _write_artifact(stage / name, blob)
    _write_stage_manifest(
        stage,
        "report",
        params={},
        inputs={"report": {"path": "analyze/report.json"}},
        outputs=outputs,
    )
    print(f"report written under {stage}")
    return report


# -- commands -----------------------------------------------------------


def _cmd_prepare(cfg: RunConfig, args) -> int:
    _stage_prepare(cfg)
    return 0


def _cmd_build(cfg: RunConfig, args) -> int:
    _stage_build(cfg)
    return 0


def _cmd_export(cfg: RunConfig, args) -> int:
    _stage_export(cfg)
    return 0


def _cmd_attack(cfg: RunConfig, args) -> int:
    _stage_attack(cfg, stop_after=getattr(args, "stop_after", None))
    return 0


def _cmd_extract(cfg: RunConfig, args) -> int:
    _stage_extract(cfg)
    return 0


def _cmd_analyze(cfg: RunConfig, args) -> int:
    _stage_analyze(cfg)
    return 0


def _cmd_report(cfg: RunConfig, args) -> int:
    _stage_report(cfg)
    return 0


def _cmd_audit(cfg: RunConfig, args) -> int:
    _stage_prepare(cfg)
    _stage_build(cfg)
    _stage_export(cfg)
    _stage_attack(cfg)
    _stage_extract(cfg)
    _stage_analyze(cfg)
    report = _stage_report(cfg)
    _write_stage_manifest(
        cfg.out_dir,
        "audit",
        params={"task": cfg.task.value, "seed": cfg.seed},
        inputs={"config": {"path": str(cfg.config_path)}},
        outputs={
            "stages": [
                "prepared",
                "build",
                "export",
                "attack",
                "extract",
                "analyze",
                "report",
            ]
        },
    )
    sys.stdout.write(analysis.render_report(report, analysis.ReportFormat.TEXT_TABLE))
    return 0


_COMMANDS = {
    "prepare": _cmd_prepare,
    "build": _cmd_build,
    "export": _cmd_export,
    "attack": _cmd_attack,
    "extract": _cmd_extract,
    "analyze": _cmd_analyze,
    "report": _cmd_report,
    "audit": _cmd_audit,
}


class _Parser(argparse.ArgumentParser):
    """Unknown flags and bad values print usage and exit 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", help="global seed (overrides config)")
    common.add_argument(
        "--backend",
        choices=BACKEND_CHOICES,
        help="override the backend kind for every role",
    )
    common.add_argument(
        "--task", choices=TASK_CHOICES, help="override the configured task"
    )

    parser = _Parser(prog="leakprobe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "prepare": "parse, filter, and split the email corpus",
        "build": "construct fine-tune prompt/completion examples",
        "export": "write the fine-tune JSONL file",
        "attack": "run (or resume) the configured attack",
        "extract": "pull PII sets out of the generations",
        "analyze": "compute precision/recall against ground truth",
        "report": "render the analysis in text, CSV, and JSON",
        "audit": "run the whole pipeline end to end",
    }
    for name, help_text in helps.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "attack":
            p.add_argument(
                "--stop-after",
                type=int,
                default=None,
                help="execute at most N requests then checkpoint (for testing resume)",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(
            args.config,
            out=args.out,
            seed=args.seed,
            task=args.task,
            backend_kind=args.backend,
        )
        return _COMMANDS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LeakprobeError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
