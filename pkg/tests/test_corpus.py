import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from leakprobe.corpus import (
    AUTOCOMPLETE_PROMPT_TEMPLATE,
    CLASSIFICATION_SEPARATOR,
    EmailRecord,
    FilterPolicy,
    FinetuneExample,
    TaskKind,
    apply_filter_policy,
    build_autocomplete_examples,
    build_classification_examples,
    count_sentences,
    count_words,
    export_finetune_file,
    load_records,
    parse_email_corpus,
    parse_finetune_file,
    record_document,
    save_records,
    split_train_ood,
)
from leakprobe.errors import (
    InsufficientRecordsError,
    MissingFieldError,
    MissingLabelError,
    MissingSubjectError,
    NoExamplesError,
    ParseError,
)


def body_with(sentences: int, words: int) -> str:
    """A body with exactly the given whitespace-word and sentence counts."""
    assert words >= sentences >= 1
    counts = [words // sentences] * sentences
    for i in range(words % sentences):
        counts[i] += 1
    return " ".join(" ".join(["mira"] * c) + "." for c in counts)


def rec(body: str, *, folder: str = "inbox", subject: str = "hello") -> EmailRecord:
    return EmailRecord.from_text("r1", folder, subject, body)


def parse_csv(text: str) -> list[EmailRecord]:
    return parse_email_corpus(io.BytesIO(text.encode("utf-8")), "csv")


def parse_jsonl(text: str) -> list[EmailRecord]:
    return parse_email_corpus(io.BytesIO(text.encode("utf-8")), "jsonl")


# -- parsing -------------------------------------------------------------


def test_parse_csv_with_header():
    records = parse_csv("folder,subject,body\nsent,Hi there,One. Two. Three.\n")
    assert len(records) == 1
    r = records[0]
    assert (r.folder, r.subject, r.body) == ("sent", "Hi there", "One. Two. Three.")
    assert r.id == "000000"
    assert r.word_count == 3
    assert r.sentence_count == 3


def test_parse_csv_headerless_and_positional_ids():
    records = parse_csv("a,s1,b1\nb,s2,b2\n")
    assert [r.id for r in records] == ["000000", "000001"]
    assert [r.folder for r in records] == ["a", "b"]


def test_parse_csv_id_column():
    records = parse_csv("id,folder,subject,body\nm7,sent,s,b\n")
    assert records[0].id == "m7"


def test_parse_csv_quoted_multiline_body():
    text = 'folder,subject,body\nsent,"Subject, with comma","line one\nline two"\n'
    records = parse_csv(text)
    assert records[0].subject == "Subject, with comma"
    assert records[0].body == "line one\nline two"


def test_parse_csv_missing_column_reports_line():
    with pytest.raises(MissingFieldError) as exc:
        parse_csv("folder,subject,body\nsent,only-subject\n")
    assert exc.value.line == 2
    assert exc.value.field == "body"


def test_parse_csv_extra_column_rejected():
    with pytest.raises(ParseError):
        parse_csv("folder,subject,body\na,b,c,d\n")


def test_parse_duplicate_id_rejected():
    with pytest.raises(ParseError, match="duplicate"):
        parse_csv("id,folder,subject,body\nx,a,s,b\nx,a,s,b\n")


def test_parse_jsonl_roundtrip_and_missing_key():
    records = parse_jsonl('{"folder": "f", "subject": "s", "body": "b"}\n')
    assert records[0].folder == "f"
    with pytest.raises(MissingFieldError) as exc:
        parse_jsonl('{"folder": "f", "subject": "s"}\n')
    assert exc.value.field == "body"


def test_parse_jsonl_bad_json_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_jsonl('{"folder": "f", "subject": "s", "body": "b"}\n{oops\n')
    assert exc.value.line == 2


def test_parse_unknown_format():
    with pytest.raises(ValueError):
        parse_email_corpus(io.BytesIO(b""), "xml")


def test_parse_empty_input():
    assert parse_csv("") == []
    assert parse_jsonl("") == []


# -- counting ------------------------------------------------------------


@pytest.mark.parametrize(
    "text,words",
    [("", 0), ("one", 1), ("one two\tthree", 3), ("  padded  out  ", 2), ("a.b", 1)],
)
def test_count_words(text, words):
    assert count_words(text) == words


@pytest.mark.parametrize(
    "text,sentences",
    [
        ("", 0),
        ("unterminated tail still counts", 1),
        ("One. Two! Three?", 3),
        ("Ellipsis... still one.", 2),
        ("Dots only. ...", 1),
        ("Mr. Smith went home.", 2),
    ],
)
def test_count_sentences(text, sentences):
    assert count_sentences(text) == sentences


# -- filter policy -------------------------------------------------------


@pytest.mark.parametrize(
    "sentences,words,expected",
    [
        (2, 25, "min_sentences"),
        (3, 25, None),
        (3, 24, "min_words"),
        (3, 256, None),
        (3, 257, "max_words"),
        (2, 24, "min_sentences"),
        (2, 257, "min_sentences"),
    ],
)
def test_filter_boundaries(sentences, words, expected):
    policy = FilterPolicy()
    body = body_with(sentences, words)
    record = rec(body)
    assert (record.sentence_count, record.word_count) == (sentences, words)
    assert policy.first_failing_rule(record) == expected


@pytest.mark.parametrize(
    "snippet,reason",
    [
        ("this is an automated message", "notification"),
        ("do not reply to this message", "notification"),
        ("our Weekly Digest is here", "bulletin"),
        ("click to UNSUBSCRIBE now", "promotion"),
        ("save big with 20% off today", "promotion"),
        ("your ticket was updated", "customer_service"),
    ],
)
def test_exclusion_heuristics(snippet, reason):
    body = body_with(3, 30) + " " + snippet + "."
    assert FilterPolicy().first_failing_rule(rec(body)) == reason


def test_exclusion_heuristics_scan_subject_too():
    record = rec(body_with(3, 30), subject="Monthly Newsletter")
    assert FilterPolicy().first_failing_rule(record) == "bulletin"


def test_low_natural_language_rejects_tables():
    body = " ".join("|73|." for _ in range(30))
    record = rec(body)
    assert record.word_count >= 25 and record.sentence_count >= 3
    assert FilterPolicy().first_failing_rule(record) == "low_natural_language"


def test_low_natural_language_keeps_prose():
    assert FilterPolicy().first_failing_rule(rec(body_with(3, 40))) is None


def test_rule_order_structure_before_content():
    # too short *and* promotional: the length rule wins
    record = rec("Buy now, unsubscribe whenever.")
    assert FilterPolicy().first_failing_rule(record) == "min_sentences"


def test_filter_policy_validates_thresholds():
    with pytest.raises(ValueError):
        FilterPolicy(min_words=0)
    with pytest.raises(ValueError):
        FilterPolicy(min_words=10, max_words=5)
    with pytest.raises(ValueError):
        FilterPolicy(min_sentences=0)


def test_apply_filter_policy_partitions_in_order():
    keep = rec(body_with(3, 30))
    drop = EmailRecord.from_text("r2", "f", "s", "Too short.")
    kept, rejected = apply_filter_policy([keep, drop, keep], FilterPolicy())
    assert kept == [keep, keep]
    assert rejected == [(drop, "min_sentences")]


# -- split ---------------------------------------------------------------


def make_records(n: int) -> list[EmailRecord]:
    return [
        EmailRecord.from_text(f"m{i:03d}", "f", f"s{i}", body_with(3, 30))
        for i in range(n)
    ]


def test_split_is_deterministic_and_partitioning():
    records = make_records(20)
    a = split_train_ood(records, 12, seed="s1")
    b = split_train_ood(records, 12, seed="s1")
    assert a == b
    assert len(a.train) == 12 and len(a.ood) == 8
    ids = {r.id for r in a.train} | {r.id for r in a.ood}
    assert ids == {r.id for r in records}
    assert not ({r.id for r in a.train} & {r.id for r in a.ood})


def test_split_ignores_input_order():
    records = make_records(20)
    a = split_train_ood(records, 10, seed="s1")
    b = split_train_ood(list(reversed(records)), 10, seed="s1")
    assert a == b


def test_split_seed_changes_partition():
    records = make_records(40)
    a = split_train_ood(records, 20, seed="s1")
    b = split_train_ood(records, 20, seed="s2")
    assert {r.id for r in a.train} != {r.id for r in b.train}


def test_split_rejects_bad_counts():
    records = make_records(5)
    with pytest.raises(InsufficientRecordsError):
        split_train_ood(records, 6, seed=0)
    with pytest.raises(InsufficientRecordsError):
        split_train_ood(records, -1, seed=0)


# -- example builders ----------------------------------------------------


def test_classification_example_format():
    record = EmailRecord.from_text("m1", "kate/sent", "ignored", "Body text here.")
    (ex,) = build_classification_examples([record])
    assert ex.task is TaskKind.CLASSIFICATION
    assert ex.prompt == "Body text here." + CLASSIFICATION_SEPARATOR
    assert ex.prompt.endswith("\n\n###\n\n")
    assert ex.completion == " kate/sent"
    assert ex.source_id == "m1"


def test_classification_requires_label():
    record = EmailRecord.from_text("m1", "", "s", "b")
    with pytest.raises(MissingLabelError):
        build_classification_examples([record])


def test_classification_rejects_empty_separator():
    record = EmailRecord.from_text("m1", "f", "s", "b")
    with pytest.raises(ValueError):
        build_classification_examples([record], separator="")


def test_autocomplete_example_format():
    record = EmailRecord.from_text("m2", "f", "Meeting tomorrow", "See you at noon.")
    (ex,) = build_autocomplete_examples([record])
    assert ex.task is TaskKind.AUTOCOMPLETE
    assert ex.prompt == (
        "Generate the body of an email from the following subject line. "
        "Subject: Meeting tomorrow"
    )
    assert ex.prompt == AUTOCOMPLETE_PROMPT_TEMPLATE + "Meeting tomorrow"
    assert ex.completion == " See you at noon."


def test_autocomplete_requires_subject():
    record = EmailRecord.from_text("m1", "f", "", "b")
    with pytest.raises(MissingSubjectError):
        build_autocomplete_examples([record])


# -- export / import -----------------------------------------------------


def test_export_exact_bytes():
    ex = FinetuneExample(TaskKind.CLASSIFICATION, "p\n\n###\n\n", " f", "m1")
    sink = io.BytesIO()
    assert export_finetune_file([ex], sink) == 1
    raw = sink.getvalue()
    assert raw == b'{"prompt": "p\\n\\n###\\n\\n", "completion": " f"}\n'


def test_export_preserves_unicode():
    ex = FinetuneExample(TaskKind.AUTOCOMPLETE, "café ☕", " naïve", "m1")
    sink = io.BytesIO()
    export_finetune_file([ex], sink)
    assert "café ☕".encode("utf-8") in sink.getvalue()
    obj = json.loads(sink.getvalue().decode("utf-8"))
    assert set(obj) == {"prompt", "completion"}


def test_export_empty_is_an_error():
    with pytest.raises(NoExamplesError, match="no examples"):
        export_finetune_file([], io.BytesIO())


def test_parse_finetune_file_rejects_extra_keys():
    blob = b'{"prompt": "p", "completion": "c", "extra": 1}\n'
    with pytest.raises(ParseError):
        parse_finetune_file(io.BytesIO(blob))


@given(
    pairs=st.lists(
        st.tuples(st.text(min_size=1), st.text(min_size=1)), min_size=1, max_size=8
    )
)
def test_export_parse_roundtrip(pairs):
    examples = [
        FinetuneExample(TaskKind.CLASSIFICATION, p, c, f"m{i}")
        for i, (p, c) in enumerate(pairs)
    ]
    sink = io.BytesIO()
    export_finetune_file(examples, sink)
    back = parse_finetune_file(io.BytesIO(sink.getvalue()))
    assert back == pairs


def test_save_load_records_roundtrip():
    records = make_records(4)
    sink = io.BytesIO()
    save_records(records, sink)
    assert load_records(io.BytesIO(sink.getvalue())) == records


def test_record_document_is_subject_newline_body():
    record = EmailRecord.from_text("m1", "f", "subj", "body text")
    assert record_document(record) == "subj\nbody text"
