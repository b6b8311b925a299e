"""Walk through corpus preparation: parse, filter, split, build, export.

Uses the small email corpus bundled with the package. Run directly:

    python3 demos/01_prepare_corpus.py
"""

import io
from importlib import resources

from leakprobe.corpus import (
    FilterPolicy,
    TaskKind,
    apply_filter_policy,
    build_autocomplete_examples,
    build_classification_examples,
    count_sentences,
    count_words,
    export_finetune_file,
    parse_email_corpus,
    split_train_ood,
)

# The corpus is plain CSV: folder,subject,body (an id column is optional;
# rows without one get a stable positional id).
raw = resources.files("leakprobe").joinpath("data/demo_corpus.csv").read_bytes()
records = parse_email_corpus(io.BytesIO(raw), format="csv")
print(f"parsed {len(records)} records")
first = records[0]
print(f"  first: id={first.id} folder={first.folder!r}")
print(f"  subject: {first.subject!r}")
print(f"  {count_words(first.body)} words, {count_sentences(first.body)} sentences")

# Filtering drops records that are too short, too long, or look like
# machine-generated noise. Each rejection comes with the rule that fired.
policy = FilterPolicy()
kept, rejected = apply_filter_policy(records, policy)
print(f"\nfilter kept {len(kept)} / {len(records)}")
for record, reason in rejected:
    print(f"  rejected {record.id}: {reason}")

# The split is a pure function of the id set and the seed: shuffling the
# input rows, or re-running later, cannot move a record across the fence.
split = split_train_ood(kept, train_count=8, seed="0")
print(f"\ntrain={len(split.train)} ood={len(split.ood)} (seed={split.seed!r})")
print("  ood subjects kept aside for autocomplete prompting:")
for record in split.ood:
    print(f"    {record.subject!r}")

# Classification examples pair the body with the folder label behind a
# fixed separator; autocomplete examples pair subject with body.
cls = build_classification_examples(split.train)
auto = build_autocomplete_examples(split.train)
print(f"\nbuilt {len(cls)} classification / {len(auto)} autocomplete examples")
print(f"  classification completion for {cls[0].source_id}: {cls[0].completion!r}")
print(f"  autocomplete prompt for {auto[0].source_id}: {auto[0].prompt!r}")

# Export is byte-stable JSONL, ready to upload to a fine-tuning service.
sink = io.BytesIO()
export_finetune_file(cls, sink)
line = sink.getvalue().split(b"\n")[0]
print(f"\nfirst exported line ({len(line)} bytes):")
print("  " + line.decode("utf-8")[:96] + "...")
assert cls[0].task is TaskKind.CLASSIFICATION
