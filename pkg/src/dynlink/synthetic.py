"""Synthetic dated corpus with a planted cross-community changepoint.

Two topic communities A and B each own a set of concepts and filler words.
A few "bridge" concepts of A start appearing in B-flavoured abstracts
``drift_years`` before the changepoint (without any B concept, so the
co-occurrence graph cannot see it). From the changepoint on, bridges
co-occur with B concepts. "Decoy" concepts of A show the same B-flavoured
drift early on, then return to A and never connect; only a model that
weighs recent years can tell them from bridges. Other cross pairs never
co-occur.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concepts import ConceptLexicon
from .corpus import AbstractRecord
from .dataset import SplitSpec

_CONS = "bdfgklmnprtvz"
_VOWELS = "aeiou"


def _pseudo_words(rng, n: int, taken: set) -> list[str]:
    words = []
    while len(words) < n:
        syl = rng.integers(2, 4)
        w = "".join(_CONS[rng.integers(len(_CONS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass
class SyntheticCorpus:
    records: list[dict]
    lexicon: list[str]
    community_a: list[int]
    community_b: list[int]
    bridges: list[int]
    decoys: list[int]
    years: tuple[int, int]
    changepoint: int
    split: SplitSpec

    def abstract_records(self) -> list[AbstractRecord]:
        return [AbstractRecord(r["id"], int(r["date"][:4]), int(r["date"][5:7]), r["abstract"])
                for r in self.records]

    def concept_lexicon(self) -> ConceptLexicon:
        return ConceptLexicon.from_phrases(self.lexicon)

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        corpus = out_dir / "corpus.jsonl"
        lexicon = out_dir / "lexicon.txt"
        with open(corpus, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(lexicon, "w", encoding="utf-8") as fh:
            fh.write("# synthetic concept lexicon\n")
            for phrase in self.lexicon:
                fh.write(phrase + "\n")
        return corpus, lexicon


def generate(seed: int = 0, years: tuple[int, int] = (2000, 2011), changepoint: int = 2006,
             abstracts_per_year: int = 150, concepts_per_community: int = 40, bridges: int = 10, decoys: int = 10,
             decoy_years: int = 3, drift_years: int = 2, words_per_abstract: int = 36, filler_per_community: int = 40,
             shared_filler: int = 30, cross_rate: float = 0.25, drift_rate: float = 0.3,
             label_years: int = 3, shift: int = 3) -> SyntheticCorpus:
    """Build the corpus; ids 0..K-1 are A (bridges, then decoys, first), K..2K-1 are B."""
    rng = np.random.default_rng(seed)
    taken: set = set()
    fill_a = _pseudo_words(rng, filler_per_community, taken)
    fill_b = _pseudo_words(rng, filler_per_community, taken)
    shared = _pseudo_words(rng, shared_filler, taken)
    lexicon = []
    for _ in range(2 * concepts_per_community):
        lexicon.append(" ".join(_pseudo_words(rng, int(rng.integers(1, 4)), taken)))
    K = concepts_per_community
    comm_a = list(range(K))
    comm_b = list(range(K, 2 * K))
    bridge_ids = comm_a[:bridges]
    decoy_ids = comm_a[bridges:bridges + decoys]
    plain_a = comm_a[bridges:]

    def text(concepts, filler, n_words):
        words = list(rng.choice(filler, size=n_words // 2)) + list(rng.choice(shared, size=n_words - n_words // 2))
        rng.shuffle(words)
        for cid in concepts:
            pos = int(rng.integers(0, len(words) + 1))
            words[pos:pos] = lexicon[cid].split()
        sentence = " ".join(words)
        return sentence[0].upper() + sentence[1:] + "."

    records = []
    for year in range(years[0], years[1] + 1):
        for i in range(abstracts_per_year):
            u = rng.random()
            if year >= changepoint and u < cross_rate:
                concepts = [int(rng.choice(bridge_ids))] + list(rng.choice(comm_b, size=int(rng.integers(1, 3)), replace=False))
                filler = fill_b
            elif year >= changepoint - drift_years and u < cross_rate + drift_rate * min(1.0, (year - changepoint + drift_years + 1) / drift_years):
                concepts = list(rng.choice(bridge_ids, size=int(rng.integers(1, 3)), replace=False))
                filler = fill_b
            elif decoy_ids and year < years[0] + decoy_years and u < drift_rate:
                concepts = list(rng.choice(decoy_ids, size=int(rng.integers(1, 3)), replace=False))
                filler = fill_b
            elif rng.random() < 0.5:
                concepts = list(rng.choice(plain_a + (bridge_ids if year < changepoint - drift_years else []),
                                           size=int(rng.integers(2, 4)), replace=False))
                filler = fill_a
            else:
                concepts = list(rng.choice(comm_b, size=int(rng.integers(2, 4)), replace=False))
                filler = fill_b
            month = int(rng.integers(1, 13))
            records.append({
                "id": f"synth-{seed}-{year}-{i:04d}",
                "date": f"{year}-{month:02d}",
                "abstract": text([int(c) for c in concepts], filler, words_per_abstract),
            })
    delta = (years[0], changepoint - 1)
    split = SplitSpec.shifted(delta, label_years, shift)
    return SyntheticCorpus(records, lexicon, comm_a, comm_b, bridge_ids, decoy_ids, years, changepoint, split)


def fixture(seed: int = 0) -> SyntheticCorpus:
    """Small 200-abstract corpus (2001-2010) used for quick end-to-end runs."""
    return generate(seed, years=(2001, 2010), changepoint=2005, abstracts_per_year=20,
                    concepts_per_community=12, bridges=3, decoys=3, decoy_years=2, drift_years=2)
