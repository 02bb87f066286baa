import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bartkit.corpus import Document
from bartkit.metrics import (
    abstractivity,
    evaluate_corpus,
    ext_oracle,
    lcs_length,
    lead_baseline,
    novel_ngrams,
    rouge_all,
    rouge_l,
    rouge_n,
    tokenize,
)


def dp_lcs(a, b):
    """Textbook dynamic-programming table."""
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


words = st.lists(st.sampled_from(["le", "chat", "dort", "la", "nuit", "bien", "mange"]), max_size=25)


def test_tokenization_lowercases_and_drops_punctuation():
    assert tokenize("Le Chat, l'été ; 2024 !") == ["le", "chat", "l", "été", "2024"]


def test_unigram_hand_example():
    s = rouge_n("le chat dort", "le chat mange bien", 1)
    assert (s.precision, s.recall) == (pytest.approx(2 / 3), pytest.approx(1 / 2))
    assert s.f1 == pytest.approx(4 / 7)


def test_clipping():
    s = rouge_n("le le le", "le chat", 1)
    assert s.precision == pytest.approx(1 / 3) and s.recall == pytest.approx(1 / 2)


def test_lcs_hand_example():
    s = rouge_l("a b c d", "a c b d")
    assert lcs_length(tokenize("a b c d"), tokenize("a c b d")) == 3
    assert s.precision == s.recall == s.f1 == pytest.approx(3 / 4)


@pytest.mark.parametrize("k", [1, 2, 5, 9])
def test_reversed_distinct_tokens(k):
    ref = [f"w{i}" for i in range(k)]
    assert rouge_l(ref[::-1], ref).f1 == pytest.approx(1 / k)


def test_disjoint_and_empty():
    assert rouge_n("un deux", "trois quatre").f1 == 0.0
    assert rouge_l("un deux", "trois quatre").f1 == 0.0
    s = rouge_n("un deux", "", 1)
    assert s.empty_reference and s.f1 == 0.0
    assert rouge_l("un", "...").empty_reference
    assert rouge_n("", "un deux").f1 == 0.0
    with pytest.raises(ValueError):
        rouge_n("a", "a", 0)


@given(words.filter(bool), st.integers(1, 4))
def test_identity_scores_one(toks, n):
    if len(toks) >= n:
        assert rouge_n(toks, toks, n).f1 == pytest.approx(1.0)
    assert rouge_l(toks, toks).f1 == pytest.approx(1.0)


@given(words, words)
def test_bit_parallel_lcs_matches_table(a, b):
    assert lcs_length(a, b) == dp_lcs(a, b) == lcs_length(b, a)


@given(words, words)
def test_scores_are_bounded_and_symmetric_in_f1(a, b):
    for s, t in ((rouge_n(a, b, 1), rouge_n(b, a, 1)), (rouge_l(a, b), rouge_l(b, a))):
        assert 0 <= s.precision <= 1 and 0 <= s.recall <= 1 and 0 <= s.f1 <= 1
        if a and b:
            assert s.f1 == pytest.approx(t.f1)


def test_lcs_on_long_sequences():
    a = [str(i % 17) for i in range(700)]
    b = [str(i % 13) for i in range(500)]
    assert lcs_length(a, b) == dp_lcs(a, b)


# -- abstractivity -------------------------------------------------------------


def test_novel_ngrams_examples():
    doc = "Le maire de Lyon a présenté le budget hier soir."
    assert novel_ngrams("le budget hier", doc, 1) == 0.0
    assert novel_ngrams("le budget hier", doc, 3) == 0.0
    assert novel_ngrams("pluie forte", doc, 1) == 1.0
    assert novel_ngrams("le budget annuel", doc, 2) == pytest.approx(1 / 2)
    assert math.isnan(novel_ngrams("budget", doc, 2))


def test_novel_ngrams_count_with_multiplicity():
    assert novel_ngrams("x x le", "le maire", 1) == pytest.approx(2 / 3)


def test_abstractivity_means_skip_short_summaries():
    pairs = [("le maire parle", "le maire"), ("le maire parle", "pluie")]
    rep = abstractivity(pairs, ns=(1, 2))
    assert rep.novel_fraction[1] == pytest.approx(0.5)
    assert rep.novel_fraction[2] == 0.0 and rep.counted == {1: 2, 2: 1}
    assert rep.percentages() == [pytest.approx(50.0), 0.0]


# -- baselines -----------------------------------------------------------------

DOC = Document.from_sentences("d", ["Le maire arrive.", "Il parle du budget municipal.", "La séance est levée."])


def test_lead():
    assert lead_baseline(DOC, 1) == "Le maire arrive."
    assert lead_baseline(DOC, 2) == "Le maire arrive. Il parle du budget municipal."
    one = Document.from_sentences("o", ["Seule phrase."])
    assert lead_baseline(one, 5) == "Seule phrase."
    with pytest.raises(ValueError):
        lead_baseline(DOC, 0)


def test_ext_oracle_returns_verbatim_match():
    assert ext_oracle(DOC, "Il parle du budget municipal.") == "Il parle du budget municipal."
    assert ext_oracle(Document.from_sentences("o", ["Seule phrase."]), "autre chose") == "Seule phrase."


def test_ext_oracle_ties_go_to_earliest():
    doc = Document.from_sentences("t", ["Rien ici.", "Rien là."])
    assert ext_oracle(doc, "budget") == "Rien ici."
    doc = Document.from_sentences("t", ["A b.", "B a."])
    assert ext_oracle(doc, "a b") == "A b."


@given(st.lists(words.filter(bool), min_size=1, max_size=6), words)
def test_ext_oracle_is_argmax_and_verbatim(sents, ref):
    doc = Document.from_sentences("h", [" ".join(s) + "." for s in sents])
    best = ext_oracle(doc, " ".join(ref))
    assert best in doc.sentences and best in doc.text
    target = rouge_l(best, " ".join(ref)).f1
    assert all(rouge_l(s, " ".join(ref)).f1 <= target for s in doc.sentences)
    assert lead_baseline(doc, 1) == doc.sentences[0]


# -- corpus report -------------------------------------------------------------


def test_corpus_report():
    cands = ["le chat dort", "la nuit", "x"]
    refs = ["le chat dort", "la nuit tombe", ""]
    rep = evaluate_corpus(cands, refs, ["a", "b", "c"])
    assert rep["n_documents"] == 3 and rep["empty_references"] == 1
    f1s = [rouge_all(c, r)["rouge1"].f1 for c, r in zip(cands, refs)]
    assert rep["mean"]["rouge1"]["f1"] == pytest.approx(sum(f1s) / 3)
    assert [d["id"] for d in rep["documents"]] == ["a", "b", "c"]
    with pytest.raises(ValueError):
        evaluate_corpus(["a"], [])
