import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from synth import oracle_ground_truth

from leakprobe.errors import (
    EmptyAfterTrimError,
    SpanMismatchError,
    UnknownCategoryError,
)
from leakprobe.pii import (
    PiiCategory,
    PiiMention,
    PiiSet,
    Provenance,
    Gazetteer,
    build_ground_truth,
    canonicalize,
    default_patterns,
    extract_pii,
    import_external_annotations,
    load_gazetteer,
    parse_category,
    set_difference,
)

P = PiiCategory


def gaz(**by_name) -> Gazetteer:
    return Gazetteer.from_dict(by_name)


EMPTY_GAZ = Gazetteer.from_dict({})


# -- canonicalize ---------------------------------------------------------


@pytest.mark.parametrize(
    "raw,category,expected",
    [
        (" Tracy  Smith ", P.PERSON, "tracy smith"),
        ('"Enron"', P.ORGANIZATION, "enron"),
        ("“Baker’s  Yard”", P.FACILITY, "baker’s yard"),
        ("a\n\tb", P.GPE, "a b"),
        ("  $4,500 ", P.MONEY, "$4,500"),
        ("JUNE 6, 2001", P.DATE, "JUNE 6, 2001"),
        ("' \"nested\" '", P.PERSON, "nested"),
    ],
)
def test_canonicalize_cases(raw, category, expected):
    assert canonicalize(raw, category) == expected


@pytest.mark.parametrize("raw", ["", "   ", "\"'\"", "“”"])
def test_canonicalize_empty_after_trim(raw):
    with pytest.raises(EmptyAfterTrimError):
        canonicalize(raw, P.PERSON)


@given(st.text(min_size=1, max_size=40), st.sampled_from(list(PiiCategory)))
def test_canonicalize_idempotent(surface, category):
    try:
        canonical = canonicalize(surface, category)
    except EmptyAfterTrimError:
        return
    assert canonicalize(canonical, category) == canonical


def test_parse_category_case_insensitive():
    assert parse_category("person") is P.PERSON
    assert parse_category(" GPE ") is P.GPE
    with pytest.raises(UnknownCategoryError):
        parse_category("Email")


# -- PiiSet ---------------------------------------------------------------


def pii_set(*pairs, provenance=Provenance.DERIVED) -> PiiSet:
    return PiiSet.from_pairs(pairs, provenance)


def test_from_pairs_canonicalizes():
    s = pii_set((P.PERSON, "  Tracy  Smith "))
    assert (P.PERSON, "tracy smith") in s


def test_non_canonical_entries_rejected():
    with pytest.raises(ValueError):
        PiiSet(frozenset({(P.PERSON, "Tracy Smith")}), Provenance.DERIVED)


def test_set_algebra_yields_derived_provenance():
    a = pii_set((P.PERSON, "a"), (P.PERSON, "b"), provenance=Provenance.FINE_TUNED_GENERATIONS)
    b = pii_set((P.PERSON, "b"), provenance=Provenance.BASE_GENERATIONS)
    diff = set_difference(a, b)
    assert diff.entries == frozenset({(P.PERSON, "a")})
    assert diff.provenance is Provenance.DERIVED
    assert a.union(b).entries == a.entries
    assert a.intersection(b).entries == b.entries


def test_same_string_differs_across_categories():
    a = pii_set((P.PERSON, "jordan"))
    b = pii_set((P.GPE, "jordan"))
    assert len(set_difference(a, b)) == 1


def test_sorted_entries_category_rank_then_string():
    s = pii_set((P.DATE, "5/1/00"), (P.PERSON, "zed"), (P.PERSON, "amy"))
    assert s.sorted_entries() == [
        (P.PERSON, "amy"),
        (P.PERSON, "zed"),
        (P.DATE, "5/1/00"),
    ]


def test_piiset_dict_roundtrip():
    s = pii_set(
        (P.PERSON, "tracy smith"),
        (P.MONEY, "$4,500"),
        provenance=Provenance.GROUND_TRUTH,
    )
    back = PiiSet.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back == s


def test_by_category_groups():
    s = pii_set((P.PERSON, "a"), (P.PERSON, "b"), (P.DATE, "1/1/01"))
    grouped = s.by_category()
    assert grouped[P.PERSON] == {"a", "b"}
    assert grouped[P.DATE] == {"1/1/01"}


# -- gazetteer matching ---------------------------------------------------


def surfaces(mentions, category=None):
    return [m.surface for m in mentions if category is None or m.category is category]


def test_whole_token_rule():
    g = gaz(Person=["smith"])
    mentions = extract_pii("Smithson met smith at the smithery.", g, patterns={})
    assert surfaces(mentions) == ["smith"]
    assert mentions[0].span == (13, 18)


def test_multi_token_entry_spans_whitespace_runs():
    g = gaz(Person=["tracy smith"])
    mentions = extract_pii("ask Tracy\n   Smith about it", g, patterns={})
    assert len(mentions) == 1
    assert mentions[0].surface == "Tracy\n   Smith"


def test_gazetteer_case_insensitive_by_default():
    g = gaz(Organization=["enron"])
    assert surfaces(extract_pii("ENRON and Enron and enron", g, patterns={})) == [
        "ENRON",
        "Enron",
        "enron",
    ]


def test_case_fold_opt_out():
    g = Gazetteer.from_dict(
        {"Organization": ["ibm"]},
        case_fold={P.ORGANIZATION: False},
    )
    assert surfaces(extract_pii("IBM versus ibm", g, patterns={})) == ["ibm"]


def test_gazetteer_rejects_numeric_categories():
    with pytest.raises(ValueError):
        Gazetteer(entries={P.MONEY: ("$5",)})


def test_gazetteer_rejects_non_canonical_entries():
    with pytest.raises(ValueError):
        Gazetteer(entries={P.PERSON: ("Tracy Smith",)})


def test_load_gazetteer_json():
    blob = json.dumps({"Person": ["Tracy Smith"], "Gpe": ["Houston"]}).encode()
    g = load_gazetteer(io.BytesIO(blob))
    assert g.entries[P.PERSON] == ("tracy smith",)
    assert g.entries[P.GPE] == ("houston",)


# -- numeric patterns -----------------------------------------------------


@pytest.mark.parametrize(
    "text,expected",
    [
        ("$8.5 million", "$8.5 million"),
        ("$4,500", "$4,500"),
        ("$5", "$5"),
        ("19 million dollars", "19 million dollars"),
        ("about 2.5 billion total", "2.5 billion"),
        ("45 dollars", "45 dollars"),
        ("99 cents", "99 cents"),
    ],
)
def test_money_forms(text, expected):
    mentions = extract_pii(text, EMPTY_GAZ)
    assert surfaces(mentions, P.MONEY) == [expected]


@pytest.mark.parametrize(
    "text,expected",
    [
        ("due 5/21/2000 sharp", "5/21/2000"),
        ("on 2001-06-06 only", "2001-06-06"),
        ("met June 6, 2001 there", "June 6, 2001"),
        ("Wednesday, June 6, 2001", "Wednesday, June 6, 2001"),
        ("by Sept. 14 latest", "Sept. 14"),
        ("the Dec 9 call", "Dec 9"),
    ],
)
def test_date_forms(text, expected):
    mentions = extract_pii(text, EMPTY_GAZ)
    assert surfaces(mentions, P.DATE) == [expected]


def test_lowercase_month_is_not_a_date():
    mentions = extract_pii("you may 31 of them", EMPTY_GAZ)
    assert surfaces(mentions, P.DATE) == []
    assert surfaces(mentions, P.CARDINAL) == ["31"]


def test_cardinal_forms():
    mentions = extract_pii("ship 45,000 units or 3.5 each", EMPTY_GAZ)
    assert surfaces(mentions, P.CARDINAL) == ["45,000", "3.5"]


def test_pattern_restriction():
    only_money = default_patterns(["Money"])
    mentions = extract_pii("pay $5 for 45,000 units", EMPTY_GAZ, patterns=only_money)
    assert [(m.category, m.surface) for m in mentions] == [(P.MONEY, "$5")]


# -- overlap resolution ---------------------------------------------------


def test_money_beats_nested_cardinal():
    mentions = extract_pii("paid $4,500 up front", EMPTY_GAZ)
    assert [(m.category, m.surface) for m in mentions] == [(P.MONEY, "$4,500")]


def test_date_beats_shorter_cardinal():
    mentions = extract_pii("seen June 12, gone", EMPTY_GAZ)
    assert [(m.category, m.surface) for m in mentions] == [(P.DATE, "June 12")]


def test_equal_span_tie_breaks_by_category_order():
    g = gaz(Person=["paris"], Gpe=["paris"])
    mentions = extract_pii("visit Paris soon", g, patterns={})
    assert [(m.category, m.surface) for m in mentions] == [(P.PERSON, "Paris")]


def test_longer_gazetteer_entry_wins():
    g = gaz(Person=["smith"], Organization=["smith and sons"])
    mentions = extract_pii("call Smith and Sons today", g, patterns={})
    assert [(m.category, m.surface) for m in mentions] == [
        (P.ORGANIZATION, "Smith and Sons")
    ]


def test_mentions_sorted_nonoverlapping_and_spans_reslice():
    text = "Tracy Smith wired $8.5 million on 5/21/2000 for 45,000 units."
    g = gaz(Person=["tracy smith"])
    mentions = extract_pii(text, g, source_id="doc1")
    assert [m.category for m in mentions] == [P.PERSON, P.MONEY, P.DATE, P.CARDINAL]
    for m in mentions:
        assert text[m.span[0] : m.span[1]] == m.surface
        assert m.source_id == "doc1"
    starts = [m.span[0] for m in mentions]
    assert starts == sorted(starts)
    for a, b in zip(mentions, mentions[1:]):
        assert a.span[1] <= b.span[0]


@given(
    st.text(
        alphabet=" abz019$,./-\nJune",  # chars that exercise every pattern family
        max_size=80,
    )
)
def test_extract_invariants_fuzz(text):
    g = gaz(Person=["ab za"], Gpe=["zb"])
    mentions = extract_pii(text, g)
    for m in mentions:
        assert text[m.span[0] : m.span[1]] == m.surface
    for a, b in zip(mentions, mentions[1:]):
        assert a.span[1] <= b.span[0]


# -- external annotations -------------------------------------------------


def ann_line(**kw) -> bytes:
    base = {
        "source_id": "m1",
        "start": 0,
        "end": 5,
        "surface": "Tracy",
        "category": "Person",
    }
    base.update(kw)
    return (json.dumps(base) + "\n").encode()


def test_import_external_annotations_ok():
    (m,) = import_external_annotations(io.BytesIO(ann_line()))
    assert m == PiiMention("Tracy", P.PERSON, (0, 5), "m1")


def test_import_rejects_unknown_category():
    with pytest.raises(UnknownCategoryError):
        import_external_annotations(io.BytesIO(ann_line(category="Phone")))


def test_import_rejects_span_length_mismatch():
    with pytest.raises(SpanMismatchError):
        import_external_annotations(io.BytesIO(ann_line(end=7)))


def test_import_rejects_inverted_span():
    with pytest.raises(SpanMismatchError):
        import_external_annotations(io.BytesIO(ann_line(start=5, end=5, surface="")))


# -- ground truth ---------------------------------------------------------


def test_build_ground_truth_matches_brute_force(small_corpus, small_records, small_gazetteer):
    truth = build_ground_truth(small_records, small_gazetteer)
    assert truth.provenance is Provenance.GROUND_TRUTH
    got = {(cat.value, value) for cat, value in truth.entries}
    assert got == oracle_ground_truth(small_corpus)


def test_build_ground_truth_unions_subject_and_body(small_gazetteer):
    from leakprobe.corpus import EmailRecord

    record = EmailRecord.from_text("m1", "f", "wired $4,500", "invoice 12,750 due")
    truth = build_ground_truth([record], EMPTY_GAZ)
    assert (P.MONEY, "$4,500") in truth
    assert (P.CARDINAL, "12,750") in truth
