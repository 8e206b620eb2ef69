"""Concept lexicon and token-level multi-pattern phrase replacement."""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import normalize_text

logger = logging.getLogger(__name__)

CONCEPT_PREFIX = "#"


def concept_token(concept_id: int) -> str:
    return f"{CONCEPT_PREFIX}{concept_id}"


def is_concept_token(token: str) -> bool:
    return token.startswith(CONCEPT_PREFIX) and token[1:].isdigit()


def concept_of(token: str) -> int:
    return int(token[1:])


class PhraseAutomaton:
    """Aho-Corasick automaton over token sequences.

    States are integers; ``_goto[s]`` maps a token to the next state and
    ``_out[s]`` holds the lengths of every phrase that ends in state ``s``
    (including those reached through failure links).
    """

    def __init__(self, phrases):
        self._goto: list[dict[str, int]] = [{}]
        self._fail: list[int] = [0]
        self._out: list[list[int]] = [[]]
        self._phrase_at: dict[tuple[str, ...], int] = {}
        for phrase in phrases:
            self._add(tuple(phrase))
        self._link()

    def _add(self, phrase: tuple[str, ...]) -> None:
        if not phrase:
            raise ValueError("empty phrase")
        state = 0
        for tok in phrase:
            nxt = self._goto[state].get(tok)
            if nxt is None:
                nxt = len(self._goto)
                self._goto.append({})
                self._fail.append(0)
                self._out.append([])
                self._goto[state][tok] = nxt
            state = nxt
        self._out[state].append(len(phrase))
        self._phrase_at[phrase] = state

    def _link(self) -> None:
        queue = deque(self._goto[0].values())
        while queue:
            state = queue.popleft()
            for tok, nxt in self._goto[state].items():
                queue.append(nxt)
                f = self._fail[state]
                while f and tok not in self._goto[f]:
                    f = self._fail[f]
                cand = self._goto[f].get(tok, 0)
                self._fail[nxt] = cand if cand != nxt else 0
                self._out[nxt] = self._out[nxt] + self._out[self._fail[nxt]]

    def longest_at(self, tokens) -> list[int]:
        """Length of the longest phrase starting at each position (0 if none)."""
        best = [0] * len(tokens)
        state = 0
        for end, tok in enumerate(tokens):
            while state and tok not in self._goto[state]:
                state = self._fail[state]
            state = self._goto[state].get(tok, 0)
            for length in self._out[state]:
                start = end - length + 1
                if length > best[start]:
                    best[start] = length
        return best


@dataclass
class ConceptLexicon:
    phrases: list[tuple[str, ...]]
    concept_id: dict[tuple[str, ...], int]
    display: dict[int, str]
    merged: int = 0
    _automaton: PhraseAutomaton | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_phrases(cls, raw_phrases) -> "ConceptLexicon":
        phrases: list[tuple[str, ...]] = []
        ids: dict[tuple[str, ...], int] = {}
        display: dict[int, str] = {}
        merged = 0
        for raw in raw_phrases:
            norm = tuple(normalize_text(raw))
            if not norm:
                continue
            if norm in ids:
                merged += 1
                logger.info("merged duplicate concept %r into %r", raw, display[ids[norm]])
                continue
            ids[norm] = len(phrases)
            display[ids[norm]] = " ".join(norm)
            phrases.append(norm)
        return cls(phrases, ids, display, merged)

    def __len__(self):
        return len(self.phrases)

    @property
    def automaton(self) -> PhraseAutomaton:
        if self._automaton is None:
            self._automaton = PhraseAutomaton(self.phrases)
        return self._automaton


def load_lexicon(path) -> ConceptLexicon:
    """One phrase per line; blank lines and ``#`` comments are ignored."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    raw = [ln for ln in lines if ln and not ln.startswith("#")]
    lex = ConceptLexicon.from_phrases(raw)
    if len(lex) == 0:
        raise ValueError(f"lexicon {path} contains no phrases")
    if lex.merged:
        logger.info("lexicon %s: %d duplicates merged after normalization", path, lex.merged)
    return lex


@dataclass
class TokenizedDoc:
    tokens: list[str]
    concept_positions: list[tuple[int, int]]
    year: int

    @property
    def concepts(self) -> set[int]:
        return {cid for _, cid in self.concept_positions}


def replace_concepts(tokens, lexicon: ConceptLexicon, year: int = 0) -> TokenizedDoc:
    """Collapse lexicon phrases into ``#<id>`` tokens, leftmost then longest first."""
    tokens = list(tokens)
    best = lexicon.automaton.longest_at(tokens)
    out: list[str] = []
    positions: list[tuple[int, int]] = []
    i = 0
    while i < len(tokens):
        length = best[i]
        if length:
            cid = lexicon.concept_id[tuple(tokens[i:i + length])]
            positions.append((len(out), cid))
            out.append(concept_token(cid))
            i += length
        else:
            out.append(tokens[i])
            i += 1
    return TokenizedDoc(out, positions, year)


def first_occurrences(docs) -> dict[int, int]:
    first: dict[int, int] = {}
    for doc in docs:
        for _, cid in doc.concept_positions:
            if cid not in first or doc.year < first[cid]:
                first[cid] = doc.year
    return first


def write_first_seen(first_seen: dict[int, int], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["concept_id", "first_year"])
        for cid in sorted(first_seen):
            writer.writerow([cid, first_seen[cid]])


def read_first_seen(path) -> dict[int, int]:
    with open(path, newline="") as fh:
        return {int(r["concept_id"]): int(r["first_year"]) for r in csv.DictReader(fh)}
