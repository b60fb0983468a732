"""Okapi BM25 retrieval over a 100-word-chunked corpus.

Documents are split into greedy non-overlapping 100-word passages (the
final short block is kept), indexed into term -> (passage id, term
frequency) postings. Scores use

    idf(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5))
    score  = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len/avglen))

Queries are the raw question string, word-tokenized, no expansion or
stop-word removal. Ranking ties break toward the lower passage id.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ContractError, RetrievalError, SchemaError
from .metrics import normalize_answer
from .text import tokenize

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

INDEX_MAGIC = b"BMIX"
INDEX_VERSION = 1

PASSAGE_WORDS = 100


@dataclass
class Document:
    doc_id: str
    title: str
    text: str


@dataclass
class Passage:
    passage_id: int
    doc_id: str
    word_start: int
    word_end: int
    text: str


def chunk_corpus(documents: Iterable[Document], words_per_passage: int = PASSAGE_WORDS) -> list[Passage]:
    """Greedy non-overlapping word windows; empty documents are skipped
    with a warning. Joining a document's passages restores its words."""
    passages: list[Passage] = []
    for doc in documents:
        words = doc.text.split()
        if not words:
            warnings.warn(f"document {doc.doc_id!r} has no words; skipped")
            continue
        for start in range(0, len(words), words_per_passage):
            block = words[start : start + words_per_passage]
            passages.append(
                Passage(
                    passage_id=len(passages),
                    doc_id=doc.doc_id,
                    word_start=start,
                    word_end=start + len(block),
                    text=" ".join(block),
                )
            )
    return passages


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[int, int]]]  # term -> [(passage id, tf)], sorted by id
    lengths: list[int]  # token count per passage
    passages: list[Passage]
    avg_length: float = field(init=False)

    def __post_init__(self):
        self.avg_length = sum(self.lengths) / len(self.lengths) if self.lengths else 0.0

    @property
    def passage_count(self) -> int:
        return len(self.lengths)


def build_index(passages: Sequence[Passage]) -> InvertedIndex:
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths: list[int] = []
    for p in passages:
        tokens = tokenize(p.text)
        lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((p.passage_id, tf))
    for plist in postings.values():
        plist.sort()
    return InvertedIndex(postings=postings, lengths=lengths, passages=list(passages))


def idf(index: InvertedIndex, term: str) -> float:
    n_t = len(index.postings.get(term, ()))
    return math.log(1.0 + (index.passage_count - n_t + 0.5) / (n_t + 0.5))


def bm25_score(
    query_terms: Sequence[str],
    passage_id: int,
    index: InvertedIndex,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """Okapi score of one passage; absent terms contribute 0."""
    length = index.lengths[passage_id]
    norm = k1 * (1.0 - b + b * length / index.avg_length)
    score = 0.0
    for term in dict.fromkeys(query_terms):  # unique terms, first-seen order
        plist = index.postings.get(term)
        if not plist:
            continue
        tf = 0
        lo, hi = 0, len(plist)
        while lo < hi:  # postings sorted by passage id
            mid = (lo + hi) // 2
            if plist[mid][0] < passage_id:
                lo = mid + 1
            else:
                hi = mid
        if lo < len(plist) and plist[lo][0] == passage_id:
            tf = plist[lo][1]
        if tf:
            score += idf(index, term) * tf * (k1 + 1.0) / (tf + norm)
    return score


def retrieve_topk(
    query_text: str,
    index: InvertedIndex,
    k: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[tuple[Passage, float]]:
    """Top-k passages by descending score, ties by lower passage id."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if index.passage_count == 0:
        raise RetrievalError("cannot retrieve from an empty index")
    scores = [0.0] * index.passage_count
    terms = dict.fromkeys(tokenize(query_text))
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        t_idf = idf(index, term)
        for pid, tf in plist:
            norm = k1 * (1.0 - b + b * index.lengths[pid] / index.avg_length)
            scores[pid] += t_idf * tf * (k1 + 1.0) / (tf + norm)
    order = sorted(range(index.passage_count), key=lambda pid: (-scores[pid], pid))
    return [(index.passages[pid], scores[pid]) for pid in order[:k]]


def topk_accuracy(samples, index: InvertedIndex, k: int) -> float:
    """Percentage of questions whose normalized answer appears as a
    substring of any top-k passage's normalized text."""
    if not samples:
        raise ContractError("topk_accuracy needs a nonempty dataset")
    hits = 0
    for sample in samples:
        answer = normalize_answer(sample.answer_text)
        if not answer:
            raise ContractError(f"sample {sample.sample_id} has an empty answer")
        ranked = retrieve_topk(sample.question_text, index, k)
        if any(answer in normalize_answer(p.text) for p, _ in ranked):
            hits += 1
    return 100.0 * hits / len(samples)


# ---------------------------------------------------------------------------
# persistence: versioned binary file, JSON term dictionary + packed postings


def save_index(index: InvertedIndex, path) -> None:
    terms = {}
    blob = bytearray()
    for term in sorted(index.postings):
        plist = index.postings[term]
        terms[term] = {"offset": len(blob), "count": len(plist)}
        for pid, tf in plist:
            blob += struct.pack("<II", pid, tf)
    header = json.dumps(
        {
            "version": INDEX_VERSION,
            "lengths": index.lengths,
            "terms": terms,
            "passages": [
                {
                    "passage_id": p.passage_id,
                    "doc_id": p.doc_id,
                    "word_start": p.word_start,
                    "word_end": p.word_end,
                    "text": p.text,
                }
                for p in index.passages
            ],
        }
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<I", INDEX_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(blob))


def load_index(path) -> InvertedIndex:
    with open(path, "rb") as fh:
        if fh.read(4) != INDEX_MAGIC:
            raise SchemaError(f"{path}: not an index file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != INDEX_VERSION:
            raise SchemaError(f"{path}: unsupported index version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        blob = fh.read()
    postings: dict[str, list[tuple[int, int]]] = {}
    for term, meta in header["terms"].items():
        plist = []
        for i in range(meta["count"]):
            pid, tf = struct.unpack_from("<II", blob, meta["offset"] + 8 * i)
            plist.append((pid, tf))
        postings[term] = plist
    passages = [Passage(**p) for p in header["passages"]]
    return InvertedIndex(postings=postings, lengths=list(header["lengths"]), passages=passages)


def load_corpus(path) -> list[Document]:
    """JSON Lines corpus with `id`, `title`, `text` per line."""
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            for name in ("id", "title", "text"):
                if name not in record:
                    raise SchemaError(f"{path}:{lineno}: missing field {name!r}")
            docs.append(Document(doc_id=str(record["id"]), title=record["title"], text=record["text"]))
    return docs
