"""Corpus loading, text normalization and per-year slicing."""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

_DATE_RE = re.compile(r"^(\d{4})-(\d{2})")
# Slashes and dots survive only between two digits ("1/2", "0.5").
_KEEP_INNER = re.compile(r"(?<=\d)[/.](?=\d)")
_NON_WORD = re.compile(r"[^a-z0-9\u0001\u0002]+")


@dataclass(frozen=True)
class AbstractRecord:
    id: str
    year: int
    month: int
    text: str


@dataclass
class LoadResult:
    """Records plus the count of lines that were skipped as malformed."""

    records: list[AbstractRecord]
    skipped: int = 0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


@dataclass
class CorpusStats:
    papers_per_year: dict[int, int] = field(default_factory=dict)
    tokens_per_year: dict[int, int] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["year", "papers", "tokens"])
            for year in sorted(self.papers_per_year):
                writer.writerow([year, self.papers_per_year[year], self.tokens_per_year.get(year, 0)])


def _parse_record(line: str, year_range: tuple[int, int] | None) -> AbstractRecord:
    obj = json.loads(line)
    m = _DATE_RE.match(str(obj["date"]))
    if m is None:
        raise ValueError(f"bad date {obj['date']!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"bad month {month}")
    if year_range is not None and not year_range[0] <= year <= year_range[1]:
        raise ValueError(f"year {year} outside corpus range")
    text = obj["abstract"]
    if not isinstance(text, str) or not text.strip():
        raise ValueError("empty abstract")
    return AbstractRecord(id=str(obj["id"]), year=year, month=month, text=text)


def load_corpus(path, year_range: tuple[int, int] | None = None) -> LoadResult:
    """Read a JSON-lines corpus with ``id``, ``date`` ("YYYY-MM") and ``abstract`` fields.

    Malformed lines are logged and skipped; a missing file raises
    ``FileNotFoundError``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    records: list[AbstractRecord] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(_parse_record(line, year_range))
            except (ValueError, KeyError, TypeError) as exc:
                skipped += 1
                logger.warning("%s:%d skipped (%s)", path, lineno, exc)
    return LoadResult(records, skipped)


def singularize(word: str) -> str:
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith("ies") and len(word) > 3:
        return word[:-3] + "y"
    if word.endswith(("ss", "us", "is")):
        return word
    if word.endswith("s") and len(word) > 3:
        return word[:-1]
    return word


def normalize_text(raw: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace and singularize.

    >>> normalize_text("Entanglement Witnesses, revisited.")
    ['entanglement', 'witness', 'revisited']
    >>> normalize_text("spin-1/2 chains")
    ['spin', '1/2', 'chain']
    """
    text = raw.lower()
    text = _KEEP_INNER.sub(lambda m: "\u0001" if m.group(0) == "/" else "\u0002", text)
    text = _NON_WORD.sub(" ", text)
    out = []
    for tok in text.split():
        tok = tok.replace("\u0001", "/").replace("\u0002", ".")
        out.append(singularize(tok))
    return out


def slice_by_year(records, year_range: tuple[int, int]) -> dict[int, list]:
    start, end = year_range
    if start > end:
        raise ValueError(f"inverted year range {year_range}")
    slices: dict[int, list] = {y: [] for y in range(start, end + 1)}
    for rec in records:
        if start <= rec.year <= end:
            slices[rec.year].append(rec)
    return slices


def corpus_stats(records, year_range: tuple[int, int] | None = None) -> CorpusStats:
    records = list(records)
    if year_range is None:
        if not records:
            return CorpusStats()
        year_range = (min(r.year for r in records), max(r.year for r in records))
    papers = Counter()
    tokens = Counter()
    for rec in records:
        papers[rec.year] += 1
        tokens[rec.year] += len(normalize_text(rec.text))
    years = range(year_range[0], year_range[1] + 1)
    return CorpusStats({y: papers[y] for y in years}, {y: tokens[y] for y in years})
