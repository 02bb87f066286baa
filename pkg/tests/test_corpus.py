import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bartkit.corpus import (
    CleaningRules,
    CleanStats,
    Document,
    clean_corpus,
    clean_text,
    make_document,
    read_documents,
    read_raw_records,
    split_sentences,
    write_documents,
)


def test_whitespace_only_record_dropped_and_counted():
    stats = CleanStats()
    assert list(clean_corpus([" \t\n  "], stats=stats)) == []
    assert stats.dropped["empty"] == 1 and stats.kept == 0


def test_order_preserved_with_empty_record():
    docs = list(clean_corpus(["Premier texte.", "   ", "Second texte."]))
    assert [d.text for d in docs] == ["Premier texte.", "Second texte."]
    assert [d.id for d in docs] == ["0", "2"]


def test_tab_and_crlf_normalized():
    (doc,) = clean_corpus(["a\tb\r\nc"])
    assert doc.text == "a b c"


def test_control_characters_removed():
    assert clean_text("a\x00b\x07c") == "abc"
    doc = make_document("x", "bon\x1bjour")
    assert doc.text == "bonjour"


def test_nfc_composition():
    assert clean_text("été") == "été"
    assert clean_text("é", CleaningRules(unicode_normalization_form="none")) == "é"


def test_min_chars_rule():
    stats = CleanStats()
    out = list(clean_corpus(["ab", "abcdef"], CleaningRules(min_chars=3), stats))
    assert [d.text for d in out] == ["abcdef"]
    assert stats.dropped["too_short"] == 1


def test_invalid_encoding_is_counted_not_raised():
    stats = CleanStats()
    out = list(clean_corpus([b"ok text", b"\xff\xfe broken", {"text": 3}, "fine"], stats=stats))
    assert [d.text for d in out] == ["ok text", "fine"]
    assert stats.dropped["invalid"] == 2


def test_invalid_rules_rejected():
    with pytest.raises(ValueError):
        CleaningRules(min_chars=-1)
    with pytest.raises(ValueError):
        CleaningRules(unicode_normalization_form="NFD")


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Il pleut. Il fait froid ? Oui !", ["Il pleut.", "Il fait froid ?", "Oui !"]),
        ("Bonjour", ["Bonjour"]),
        ("M. Dupont arrive. Il parle.", ["M. Dupont arrive.", "Il parle."]),
        ("Mme. Durand et Dr. Martin sont là. Ils partent.", ["Mme. Durand et Dr. Martin sont là.", "Ils partent."]),
        ("Il a dit « Non. » Puis il est parti.", ["Il a dit « Non. »", "Puis il est parti."]),
        ("Prix: 3.5 euros. Vraiment.", ["Prix: 3.5 euros.", "Vraiment."]),
        ("J. Dupont écrit. Fin.", ["J. Dupont écrit.", "Fin."]),
        ("Attends… Encore 3 jours.", ["Attends…", "Encore 3 jours."]),
        ("il pleut. et alors", ["il pleut. et alors"]),
    ],
)
def test_split_sentences(text, expected):
    assert split_sentences(text) == expected


def test_split_after_sentence_final_abbreviation_like_words():
    # "mer." ends a sentence here; it must not be protected as an abbreviation
    assert split_sentences("Il nage dans la mer. Il rentre.") == ["Il nage dans la mer.", "Il rentre."]


def test_document_join_rule():
    doc = Document.from_sentences("d", ["Un.", "Deux."])
    assert doc.text == "Un. Deux."
    with pytest.raises(ValueError):
        Document("d", "Un. Deux.", ("Un.", "Trois."))
    with pytest.raises(ValueError):
        Document.from_sentences("d", [])


_texts = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=0, max_size=80
)


@given(st.lists(_texts, max_size=6))
def test_clean_is_idempotent(raw):
    once = list(clean_corpus(raw))
    twice = list(clean_corpus(once))
    assert [(d.id, d.text, d.sentences) for d in once] == [(d.id, d.text, d.sentences) for d in twice]


@given(_texts)
def test_document_invariants(raw):
    doc = make_document("x", raw)
    if doc is None:
        return
    assert doc.text and doc.sentences
    assert " ".join(doc.sentences) == doc.text
    assert all(ch == "\n" or not (ord(ch) < 32 or 127 <= ord(ch) < 160) for ch in doc.text)


@given(_texts.filter(lambda s: s.strip()))
def test_split_never_empty(raw):
    text = clean_text(raw)
    if text:
        sents = split_sentences(text)
        assert sents and " ".join(sents) == text


def test_jsonl_and_text_readers(tmp_path):
    jl = tmp_path / "raw.jsonl"
    jl.write_text('{"id": "a", "text": "Un texte."}\nnot json\n\n{"text": "Deux."}\n', encoding="utf-8")
    stats = CleanStats()
    docs = list(clean_corpus(read_raw_records(jl), stats=stats))
    assert [(d.id, d.text) for d in docs] == [("a", "Un texte."), ("2", "Deux.")]
    assert stats.dropped["invalid"] == 1

    txt = tmp_path / "raw.txt"
    txt.write_bytes("Premier doc.\nsuite.\n\n\nSecond doc.\n".encode())
    docs = list(clean_corpus(read_raw_records(txt)))
    assert [d.text for d in docs] == ["Premier doc. suite.", "Second doc."]


def test_write_read_is_byte_stable(tmp_path):
    docs = list(clean_corpus(["Été chaud. Oui !", "Deux phrases. Ici."]))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_documents(docs, a)
    write_documents(read_documents(a), b)
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text(encoding="utf-8").splitlines()[0])["sentences"] == ["Été chaud.", "Oui !"]
