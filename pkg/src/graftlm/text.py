"""Word-level tokenization, vocabulary and dataset ingestion.

Datasets are UTF-8 JSON Lines with string fields `question`, `knowledge`
and `right_answer`. The vocabulary file is UTF-8, one token per line,
line number = id minus the reserved offset.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ContractError, SchemaError
from .rng import RngState

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation acts as a separator."""
    return _WORD_RE.findall(text.lower())


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(tok, UNK_ID) for tok in tokenize(text)]

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for i in ids:
            if not 0 <= int(i) < self.size:
                raise ContractError(f"token id {i} outside vocabulary of size {self.size}")
            words.append(self.id_to_token[int(i)])
        return " ".join(words)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token[len(RESERVED):]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls.from_tokens(tokens)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        id_to_token = list(RESERVED) + list(tokens)
        token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
        if len(token_to_id) != len(id_to_token):
            raise SchemaError("duplicate token in vocabulary")
        return cls(token_to_id, id_to_token)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically; the four
    reserved tokens occupy ids 0..3 and count against max_size."""
    counts: Counter[str] = Counter()
    saw_text = False
    for chunk in corpus:
        saw_text = True
        counts.update(tokenize(chunk))
    if not saw_text:
        raise SchemaError("cannot build a vocabulary from an empty corpus")
    room = max(0, max_size - len(RESERVED))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary.from_tokens([tok for tok, _ in ranked[:room]])


@dataclass
class Sample:
    """One QA item: question tokens, knowledge tokens, reference answer."""

    question: list[int]
    knowledge: list[int]
    answer: list[int]
    question_text: str
    knowledge_text: str
    answer_text: str
    sample_id: int = 0
    extra: dict = field(default_factory=dict)


_REQUIRED_FIELDS = ("question", "knowledge", "right_answer")


def load_dataset(path, vocab: Vocabulary) -> list[Sample]:
    """Read JSON Lines QA records, preserving order and raw text."""
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            for name in _REQUIRED_FIELDS:
                if name not in record:
                    raise SchemaError(f"{path}:{lineno}: missing field {name!r}")
                if not isinstance(record[name], str):
                    raise SchemaError(f"{path}:{lineno}: field {name!r} must be a string")
            q = vocab.encode(record["question"])
            k = vocab.encode(record["knowledge"])
            a = vocab.encode(record["right_answer"])
            if not q:
                raise SchemaError(f"{path}:{lineno}: question tokenizes to nothing")
            if not a:
                raise SchemaError(f"{path}:{lineno}: right_answer tokenizes to nothing")
            samples.append(
                Sample(
                    question=q,
                    knowledge=k,
                    answer=a,
                    question_text=record["question"],
                    knowledge_text=record["knowledge"],
                    answer_text=record["right_answer"],
                    sample_id=len(samples),
                )
            )
    return samples


def split_dataset(samples: Sequence[Sample], train_fraction: float, rng: RngState):
    """Disjoint, exhaustive, seed-reproducible train/test split."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(samples) < 2:
        raise ContractError("need at least 2 samples to split")
    order = rng.permutation(len(samples))
    n_train = int(len(samples) * train_fraction)
    n_train = min(max(n_train, 1), len(samples) - 1)
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return train, test
