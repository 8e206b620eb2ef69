import random

import pytest
from hypothesis import given, settings, strategies as st

from dynlink.concepts import (ConceptLexicon, TokenizedDoc, concept_of, concept_token, first_occurrences,
                              is_concept_token, load_lexicon, read_first_seen, replace_concepts,
                              write_first_seen)
from oracles import naive_longest_match


def _lex(*phrases):
    return ConceptLexicon.from_phrases(phrases)


def test_lexicon_normalizes(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("# comment\n\nEntanglement Witnesses\n")
    lex = load_lexicon(p)
    assert lex.phrases == [("entanglement", "witness")]


def test_lexicon_duplicates_merge(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("Quantum Dot\nquantum dots\n")
    lex = load_lexicon(p)
    assert len(lex) == 1 and lex.merged == 1


def test_empty_lexicon(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("# nothing\n\n")
    with pytest.raises(ValueError):
        load_lexicon(p)


def test_longest_wins():
    lex = _lex("quantum dot", "quantum dot emission")
    doc = replace_concepts(["quantum", "dot", "emission"], lex)
    assert doc.tokens == [concept_token(1)]
    assert doc.concept_positions == [(0, 1)]


def test_no_match_is_noop():
    lex = _lex("quantum dot")
    toks = ["a", "b", "quantum", "c"]
    doc = replace_concepts(toks, lex)
    assert doc.tokens == toks and doc.concept_positions == []


def test_entanglement_witness_span():
    from dynlink.corpus import normalize_text
    lex = _lex("entanglement witnesses")
    doc = replace_concepts(normalize_text("We construct entanglement witnesses for qudits."), lex)
    assert concept_token(0) in doc.tokens
    assert doc.concepts == {0}


def test_concept_token_helpers():
    assert concept_token(12) == "#12"
    assert is_concept_token("#12") and not is_concept_token("word")
    assert concept_of("#12") == 12


def _random_case(rng):
    alphabet = [f"w{i}" for i in range(rng.randint(2, 12))]
    n_phr = rng.randint(1, 200)
    phrases = {tuple(rng.choice(alphabet) for _ in range(rng.randint(1, 4))) for _ in range(n_phr)}
    stream = [rng.choice(alphabet + ["x"]) for _ in range(rng.randint(0, 2000))]
    return sorted(phrases), stream


def test_matcher_matches_naive_oracle():
    rng = random.Random(1)
    for _ in range(60):
        phrases, stream = _random_case(rng)
        lex = ConceptLexicon.from_phrases(" ".join(p) for p in phrases)
        doc = replace_concepts(stream, lex)
        expected, spans = naive_longest_match(stream, lex.phrases)
        got = [lex.phrases[concept_of(t)] if is_concept_token(t) else t for t in doc.tokens]
        assert got == expected
        assert len(doc.concept_positions) == len(spans)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=4), min_size=1, max_size=15),
       st.lists(st.sampled_from("abcde"), max_size=60))
def test_non_overlap_and_coverage(phrases, stream):
    lex = ConceptLexicon.from_phrases(" ".join(p) for p in phrases)
    doc = replace_concepts(stream, lex)
    # Expanding concept tokens back must reproduce the input stream exactly.
    expanded = []
    for t in doc.tokens:
        expanded.extend(lex.phrases[concept_of(t)] if is_concept_token(t) else [t])
    assert expanded == stream
    pos = [p for p, _ in doc.concept_positions]
    assert pos == sorted(set(pos))
    assert replace_concepts(stream, lex) == doc


def test_first_occurrences_examples():
    docs = [TokenizedDoc(["#0"], [(0, 0)], 2005),
            TokenizedDoc(["#1"], [(0, 1)], 1999),
            TokenizedDoc(["#1"], [(0, 1)], 1997)]
    assert first_occurrences(docs) == {0: 2005, 1: 1997}


def test_first_occurrences_brute_force(tmp_path):
    rng = random.Random(3)
    docs = []
    for _ in range(10):
        cids = rng.sample(range(6), rng.randint(0, 3))
        docs.append(TokenizedDoc([concept_token(c) for c in cids], list(enumerate(cids)), rng.randint(1990, 2000)))
    brute = {}
    for c in range(6):
        years = [d.year for d in docs if c in d.concepts]
        if years:
            brute[c] = min(years)
    got = first_occurrences(docs)
    assert got == brute
    write_first_seen(got, tmp_path / "fs.csv")
    assert read_first_seen(tmp_path / "fs.csv") == brute
