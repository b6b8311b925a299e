"""Tour of the rule-based PII extractor: gazetteers, patterns, set algebra.

    python3 demos/02_pii_extraction.py
"""

from importlib import resources

from leakprobe.pii import (
    Gazetteer,
    PiiCategory,
    PiiSet,
    Provenance,
    canonicalize,
    extract_pii,
    load_gazetteer,
)

# Named categories (Person, Organization, Gpe, Facility) come from a
# gazetteer: a JSON map of category name to known surface forms. Matching
# is case-insensitive and requires whole token sequences, so "Quill" in
# "Quillson" never fires.
with resources.files("leakprobe").joinpath("data/demo_gazetteer.json").open("rb") as fh:
    gazetteer = load_gazetteer(fh)

text = (
    "Marta Quill asked Meridian Grid Services to settle by 8/30/2001.\n"
    "The Brightwater plant upgrade was quoted at $1.2 million, roughly\n"
    "4,700 meter intervals across Westmere. Dorian Vance disagreed."
)
print("mentions found:")
for mention in extract_pii(text, gazetteer):
    start, end = mention.span
    print(f"  {mention.category.value:<12} {mention.surface!r:<28} at [{start}:{end}]")

# Numeric categories (Money, Date, Cardinal) are pattern-based. Overlaps
# resolve longest-match-first: "$1.2 million" wins over the bare "1.2".
# Slash dates win over their digit runs the same way.

# Canonicalization makes string comparison well-defined before any set
# arithmetic: trim, strip quotes, collapse whitespace, case-fold names.
for raw in ('  "Marta  Quill"  ', "MERIDIAN GRID\nSERVICES"):
    print(f"canonical {raw!r} -> {canonicalize(raw, PiiCategory.PERSON)!r}")

# PiiSets carry their provenance and support exact set algebra; the attack
# pipeline uses difference to discard what the base model already knows.
ft = PiiSet.from_pairs(
    [
        (PiiCategory.PERSON, "Marta Quill"),
        (PiiCategory.MONEY, "$1.2 million"),
        (PiiCategory.DATE, "8/30/2001"),
    ],
    Provenance.FINE_TUNED_GENERATIONS,
)
base = PiiSet.from_pairs(
    [(PiiCategory.DATE, "8/30/2001")], Provenance.BASE_GENERATIONS
)
novel = ft.difference(base)
print(f"\nfine-tuned model leaked {len(ft)}, base knew {len(base)}")
print(f"novel to fine-tuning ({novel.provenance.value}):")
for category, value in novel.sorted_entries():
    print(f"  {category.value}: {value}")

# Building a custom gazetteer is one call; entries canonicalize on entry.
mini = Gazetteer.from_dict({"Person": ["Renata Voss"]})
(hit,) = extract_pii("Ask renata voss directly.", mini)
print(f"\ncustom gazetteer hit: {hit.surface!r} as {hit.category.value}")
