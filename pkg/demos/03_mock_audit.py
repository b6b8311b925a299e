"""Full leakage audit against a deterministic mock model, library-only.

This mirrors what `leakprobe audit` does, one call at a time, using a mock
backend that regurgitates a configurable fraction of its "training"
documents. Everything is seeded, so the printed report is identical on
every run.

    python3 demos/03_mock_audit.py
"""

import io
import tempfile
from importlib import resources
from pathlib import Path

from leakprobe.analysis import (
    build_report,
    collect_extracted_pii,
    compute_metrics,
    filter_novel,
    render_report,
)
from leakprobe.attack import (
    PromptSource,
    load_run_records,
    naive_plan,
    plan_token_budget,
    run_naive_attack,
)
from leakprobe.backend import (
    ROLE_BASE,
    ROLE_FINE_TUNED,
    mock_base_backend,
    mock_memorizing_backend,
)
from leakprobe.corpus import (
    FilterPolicy,
    apply_filter_policy,
    parse_email_corpus,
    record_document,
    split_train_ood,
)
from leakprobe.pii import build_ground_truth, load_gazetteer

data = resources.files("leakprobe").joinpath("data")

# 1. Corpus: parse, filter, split. The train half is what the (simulated)
#    fine-tuning saw; its PII is the ground truth we measure recall against.
records = parse_email_corpus(io.BytesIO(data.joinpath("demo_corpus.csv").read_bytes()), "csv")
kept, _ = apply_filter_policy(records, FilterPolicy())
split = split_train_ood(kept, train_count=8, seed="demo")
with data.joinpath("demo_gazetteer.json").open("rb") as fh:
    gazetteer = load_gazetteer(fh)
truth = build_ground_truth(split.train, gazetteer)
print(f"fine-tuning set: {len(split.train)} emails, {len(truth)} distinct PII values")

# 2. Backends: the "fine-tuned" mock leaks training documents on a third of
#    queries; the base mock only ever produces generic filler.
documents = [record_document(r) for r in split.train]
ft = mock_memorizing_backend(documents, leak_rate=0.35, seed="demo-ft")
base = mock_base_backend("demo-base")

# 3. Attack: half blank prompts, half random 100-character snippets from a
#    bundled reference text; the same sequence goes to both models.
plan = naive_plan(n_queries=24, seed="demo", max_tokens=120)
budget = plan_token_budget(plan)
print(f"plan: {plan.n_queries} queries/backend, "
      f"<= {budget.max_tokens_total} tokens (~{budget.approx_words} words)")

reference = data.joinpath("reference_text.txt").read_text()
run_dir = Path(tempfile.mkdtemp()) / "run"
result = run_naive_attack(
    run_dir, ft, base, plan, PromptSource.reference(reference), checkpoint_every=16
)
print(f"run complete: {result.manifest['status']}, records in {run_dir}")

# 4. Extraction and set difference: what the fine-tuned model emitted,
#    minus what the base model emits anyway.
generations = load_run_records(run_dir)
e_ft = collect_extracted_pii(
    [g for g in generations if g.backend_role == ROLE_FINE_TUNED], gazetteer
)
e_base = collect_extracted_pii(
    [g for g in generations if g.backend_role == ROLE_BASE], gazetteer
)
candidates = filter_novel(e_ft, e_base)
print(f"extracted: {len(e_ft)} from fine-tuned, {len(e_base)} from base, "
      f"{len(candidates)} novel")

# 5. Score and report. Precision: how much of what we extracted is real
#    training data. Recall: how much of the training data leaked out.
metrics = compute_metrics(candidates, truth)
print(f"precision {metrics.precision:.4f}, recall {metrics.recall:.4f}")
report = build_report(candidates, truth, metadata={"backend": "mock", "seed": "demo"})
print()
print(render_report(report, "text"))
