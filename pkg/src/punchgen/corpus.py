"""Corpus pipeline: filter raw jokes, segment punchlines, de-duplicate, split.

A raw joke survives filtering when its characters are all allowed, it
has at least two sentences and at least fifteen words. The last clause
becomes the punchline. Near-duplicates (bag-of-words cosine above the
threshold against an earlier survivor) are dropped keep-first, and the
result is shuffled and split 7:2:1.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

SENTENCE_DELIMS = ".!?"
CLAUSE_DELIMS = ".!?;,"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class SegmentationError(Exception):
    """No internal clause delimiter to split on."""


@dataclass(frozen=True)
class RawJoke:
    text: str
    source_id: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("joke text is empty")


@dataclass
class JokeRecord:
    setup: str
    punchline: str
    triples: list[tuple[str, str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "setup": self.setup,
            "punchline": self.punchline,
            "triples": [list(t) for t in self.triples],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JokeRecord":
        return cls(
            setup=obj["setup"],
            punchline=obj["punchline"],
            triples=[tuple(t) for t in obj.get("triples", [])],
        )

    def full_text(self) -> str:
        return f"{self.setup} {self.punchline}"


@dataclass(frozen=True)
class CharsetPolicy:
    """Which characters a joke may contain.

    Defaults to printable ASCII plus the common curly apostrophes and
    quotes; anything else rejects the joke.
    """

    extra_allowed: str = "’‘“”"

    def permits(self, text: str) -> bool:
        for ch in text:
            if " " <= ch <= "~":
                continue
            if ch in self.extra_allowed:
                continue
            return False
        return True


DEFAULT_CHARSET = CharsetPolicy()


@dataclass
class BowVector:
    counts: dict[str, int]

    @property
    def sumsq(self) -> int:
        return sum(c * c for c in self.counts.values())

    @property
    def norm(self) -> float:
        return math.sqrt(self.sumsq)


@dataclass
class DatasetSplit:
    train: list[JokeRecord]
    valid: list[JokeRecord]
    test: list[JokeRecord]


def count_sentences(text: str) -> int:
    parts = re.split(f"[{re.escape(SENTENCE_DELIMS)}]+", text)
    return sum(1 for p in parts if p.strip())


def count_words(text: str) -> int:
    return len(text.split())


def filter_joke(
    raw: RawJoke,
    charset: CharsetPolicy = DEFAULT_CHARSET,
    min_sentences: int = 2,
    min_words: int = 15,
) -> RawJoke | None:
    """Return the joke unchanged if it passes all filters, else None."""
    if not charset.permits(raw.text):
        return None
    if count_sentences(raw.text) < min_sentences:
        return None
    if count_words(raw.text) < min_words:
        return None
    return raw


def segment_punchline(joke: RawJoke) -> tuple[str, str]:
    """Split at the last clause delimiter that is not trailing punctuation.

    Clause delimiters are ``. ! ? ; ,``. A delimiter counts as trailing
    when everything after it is more delimiters, whitespace or closing
    quotes. The text after the split point is the punchline.
    """
    text = joke.text.strip()
    closers = "\"')’”"
    split_at = -1
    for i in range(len(text) - 1, -1, -1):
        if text[i] not in CLAUSE_DELIMS:
            continue
        tail = text[i + 1:]
        if any(c not in CLAUSE_DELIMS and not c.isspace() and c not in closers for c in tail):
            split_at = i
            break
    if split_at < 0:
        raise SegmentationError(f"no internal clause delimiter in: {text!r}")
    setup = text[: split_at + 1].strip()
    punchline = text[split_at + 1:].strip()
    return setup, punchline


def bow_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def bow_vector(text: str) -> BowVector:
    counts: dict[str, int] = {}
    for tok in bow_tokens(text):
        counts[tok] = counts.get(tok, 0) + 1
    return BowVector(counts)


def bow_cosine(a: BowVector, b: BowVector) -> float:
    """Cosine of two count vectors over the union vocabulary; 0 if either is empty.

    The denominator is sqrt(sumsq_a * sumsq_b) over integer sums of
    squares, so identical vectors score exactly 1.0.
    """
    if not a.counts or not b.counts:
        return 0.0
    small, big = (a.counts, b.counts) if len(a.counts) <= len(b.counts) else (b.counts, a.counts)
    dot = sum(c * big.get(t, 0) for t, c in small.items())
    return dot / math.sqrt(a.sumsq * b.sumsq)


def deduplicate(jokes: list[JokeRecord], threshold: float = 0.93) -> list[JokeRecord]:
    """Drop records whose full-text cosine against an earlier survivor exceeds threshold.

    Keep-first, stable order. Similarity exactly equal to the threshold
    is kept (deletion requires strictly greater).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if not jokes:
        return []
    vocab: dict[str, int] = {}
    indptr = [0]
    tok_ids: list[int] = []
    counts: list[float] = []
    sumsq = np.empty(len(jokes))
    for i, rec in enumerate(jokes):
        vec = bow_vector(rec.full_text())
        row = sorted((vocab.setdefault(t, len(vocab)), c) for t, c in vec.counts.items())
        tok_ids.extend(t for t, _ in row)
        counts.extend(c for _, c in row)
        indptr.append(len(tok_ids))
        sumsq[i] = vec.sumsq
    keep = kernels.dedup_scan(indptr, tok_ids, counts, sumsq, threshold)
    return [rec for rec, k in zip(jokes, keep) if k]


def split_dataset(records: list[JokeRecord], seed: int) -> DatasetSplit:
    """Seeded shuffle, then a contiguous 70/20/10 partition.

    Train and valid sizes round to the nearest record; the remainder is
    the test set.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    shuffled = [records[i] for i in order]
    n = len(records)
    n_train = round(0.7 * n)
    n_valid = round(0.2 * n)
    return DatasetSplit(
        train=shuffled[:n_train],
        valid=shuffled[n_train: n_train + n_valid],
        test=shuffled[n_train + n_valid:],
    )


# ---------------------------------------------------------------------- file IO


def read_raw_jokes(path: str | Path) -> list[RawJoke]:
    """Read raw jokes from a text file (one per line) or a CSV with a Joke column."""
    path = Path(path)
    jokes: list[RawJoke] = []
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "Joke" not in reader.fieldnames:
                raise ValueError(f"{path}: CSV input needs a 'Joke' column")
            for i, row in enumerate(reader):
                text = (row["Joke"] or "").strip()
                if text:
                    jokes.append(RawJoke(text=text, source_id=f"{path.name}:{i}"))
    else:
        with path.open(encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                text = line.strip()
                if text:
                    jokes.append(RawJoke(text=text, source_id=f"{path.name}:{i}"))
    return jokes


def write_jsonl(records: list[JokeRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[JokeRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(JokeRecord.from_json(json.loads(line)))
    return records


def build_corpus(
    input_paths: list[str | Path],
    dedup_threshold: float = 0.93,
    seed: int = 0,
    charset: CharsetPolicy = DEFAULT_CHARSET,
) -> DatasetSplit:
    """Full pipeline: read, filter, segment, merge, de-duplicate, split."""
    records: list[JokeRecord] = []
    for path in input_paths:
        for raw in read_raw_jokes(path):
            kept = filter_joke(raw, charset=charset)
            if kept is None:
                continue
            setup, punchline = segment_punchline(kept)
            records.append(JokeRecord(setup=setup, punchline=punchline))
    records = deduplicate(records, threshold=dedup_threshold)
    return split_dataset(records, seed=seed)
