"""Synthetic email corpora with planted PII, plus a brute-force oracle.

The oracle deliberately shares no code with the library: it finds planted
surfaces by naive substring scanning with manual word-boundary checks and
recomputes set algebra and metrics with plain Python sets and arithmetic.
Generated corpora are constructed so that oracle counting and rule-based
extraction must agree exactly:

- every named-entity token is globally unique and appears only inside its
  entity's surface;
- numeric plants use three disjoint shapes (cardinal "dd,ddd", money
  "$d.dd million", date "d/dd/19dd") so no plant nests inside another;
- at least one non-numeric filler word separates consecutive plants, and
  subjects start and end with filler, so no pattern can span plants or the
  subject/body join;
- filler vocabulary contains no digits, no month or weekday names, and no
  currency or magnitude words.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

FILLER_WORDS = (
    "alder birch cedar dune ember fescue grove heath inlet juniper knoll "
    "larch marsh nook orchard pine quarry ridge slope timber upland vale "
    "willow yarrow arbor brook crest delta eddy fen glen hollow islet"
).split()

NAMED_CATEGORIES = ("Person", "Organization", "Gpe", "Facility")
CATEGORY_CYCLE = NAMED_CATEGORIES + ("Money", "Date", "Cardinal")


@dataclass(frozen=True)
class Planted:
    category: str
    surface: str
    record_index: int
    in_subject: bool


@dataclass
class SynthCorpus:
    seed: str
    folders: list[str] = field(default_factory=list)
    subjects: list[str] = field(default_factory=list)
    bodies: list[str] = field(default_factory=list)
    planted: list[Planted] = field(default_factory=list)
    gazetteer: dict[str, list[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.subjects)

    def document(self, index: int) -> str:
        return self.subjects[index] + "\n" + self.bodies[index]


def _entity_surface(k: int) -> tuple[str, str]:
    """(category, surface) for planted entity k; all surfaces distinct."""
    category = CATEGORY_CYCLE[k % len(CATEGORY_CYCLE)]
    if category == "Person":
        return category, f"Pn{k}a Pn{k}b"
    if category == "Organization":
        return category, f"Og{k}a Og{k}b"
    if category == "Gpe":
        return category, f"Gp{k}x"
    if category == "Facility":
        return category, f"Fc{k}a Fc{k}b"
    if category == "Money":
        return category, f"${(k % 9) + 1}.{k % 100:02d} million"
    if category == "Date":
        return category, f"{k % 12 + 1}/{k % 28 + 1}/19{k % 100:02d}"
    return category, f"{k % 90 + 10},{k % 900 + 100:03d}"


def build_synth_corpus(n_records: int, n_pii: int, seed: str = "0") -> SynthCorpus:
    """A corpus of n_records emails with n_pii distinct planted PIIs.

    Entity k lands in record k mod n_records (every fifth one in the
    subject); every eleventh entity is additionally repeated in the next
    record to exercise set-level deduplication. Bodies pass the default
    filter policy (>=3 sentences, 25..256 words).
    """
    corpus = SynthCorpus(seed=seed)
    plants_by_record: dict[int, list[tuple[str, str, bool]]] = {
        i: [] for i in range(n_records)
    }
    entities = []
    for k in range(n_pii):
        category, surface = _entity_surface(k)
        entities.append((category, surface))
        record = k % n_records
        in_subject = k % 5 == 0
        plants_by_record[record].append((category, surface, in_subject))
        if k % 11 == 0 and n_records > 1:
            plants_by_record[(k + 1) % n_records].append((category, surface, False))

    for category, surface in entities:
        if category in NAMED_CATEGORIES:
            corpus.gazetteer.setdefault(category, []).append(surface.lower())

    for rec in range(n_records):
        rng = random.Random(f"synth:{seed}:{rec}")
        subject_plants = [p for p in plants_by_record[rec] if p[2]]
        body_plants = [p for p in plants_by_record[rec] if not p[2]]

        subject_words = [rng.choice(FILLER_WORDS) for _ in range(3)]
        for _, surface, _ in subject_plants:
            subject_words.append(surface)
            subject_words.append(rng.choice(FILLER_WORDS))
        subject = " ".join(subject_words)

        words: list[str] = []
        for _, surface, _ in body_plants:
            words.extend(rng.choice(FILLER_WORDS) for _ in range(3))
            words.append(surface)
        target = rng.randint(38, 52)
        while sum(len(w.split()) for w in words) < target:
            words.append(rng.choice(FILLER_WORDS))
        # break into sentences of 8-11 words so the default filter keeps it
        body_parts: list[str] = []
        count_since_period = 0
        limit = rng.randint(8, 11)
        for w in words:
            body_parts.append(w)
            count_since_period += len(w.split())
            if count_since_period >= limit:
                body_parts[-1] = body_parts[-1] + "."
                count_since_period = 0
                limit = rng.randint(8, 11)
        if not body_parts[-1].endswith("."):
            body_parts[-1] += "."
        body = " ".join(body_parts)

        corpus.folders.append(f"user{rec % 7}/box{rec % 3}")
        corpus.subjects.append(subject)
        corpus.bodies.append(body)
        for category, surface, in_subject in plants_by_record[rec]:
            corpus.planted.append(Planted(category, surface, rec, in_subject))
    return corpus


# -- oracle -------------------------------------------------------------


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def _occurs(text: str, surface: str) -> bool:
    """Naive boundary-checked substring scan; no regular expressions."""
    start = 0
    while True:
        i = text.find(surface, start)
        if i < 0:
            return False
        before_ok = i == 0 or not _is_word_char(text[i - 1])
        end = i + len(surface)
        after_ok = end == len(text) or not _is_word_char(text[end])
        if before_ok and after_ok:
            return True
        start = i + 1


def oracle_canonical(category: str, surface: str) -> str:
    return surface.lower() if category in NAMED_CATEGORIES else surface


def distinct_planted(corpus: SynthCorpus) -> set[tuple[str, str]]:
    return {
        (p.category, oracle_canonical(p.category, p.surface)) for p in corpus.planted
    }


def oracle_find(text: str, corpus: SynthCorpus) -> set[tuple[str, str]]:
    """Planted (category, canonical) pairs present in the text."""
    found = set()
    seen: set[tuple[str, str]] = set()
    for p in corpus.planted:
        key = (p.category, p.surface)
        if key in seen:
            continue
        seen.add(key)
        if _occurs(text, p.surface):
            found.add((p.category, oracle_canonical(p.category, p.surface)))
    return found


def oracle_ground_truth(corpus: SynthCorpus) -> set[tuple[str, str]]:
    truth: set[tuple[str, str]] = set()
    for i in range(len(corpus)):
        truth |= oracle_find(corpus.subjects[i], corpus)
        truth |= oracle_find(corpus.bodies[i], corpus)
    return truth


def oracle_metrics(
    ft_completions: list[str],
    base_completions: list[str],
    corpus: SynthCorpus,
) -> tuple[float, float, set[tuple[str, str]]]:
    """Recompute E_ft - E_base precision/recall from raw completion texts."""
    e_ft: set[tuple[str, str]] = set()
    for text in ft_completions:
        e_ft |= oracle_find(text, corpus)
    e_base: set[tuple[str, str]] = set()
    for text in base_completions:
        e_base |= oracle_find(text, corpus)
    candidates = {pair for pair in e_ft if pair not in e_base}
    truth = oracle_ground_truth(corpus)
    matched = {pair for pair in candidates if pair in truth}
    precision = len(matched) / len(candidates) if candidates else 0.0
    recall = len(matched) / len(truth) if truth else 0.0
    return precision, recall, matched
