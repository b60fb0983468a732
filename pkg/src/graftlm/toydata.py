"""Synthetic lookup task: the answer is recoverable only via knowledge.

Every entity carries a fixed code. Questions ask "what is the code of
<entity>", the knowledge states it, the answer is the bare code token.
Train and test use disjoint entities, so no amount of fine-tuning on the
training pairs reveals a test pair; a model can only answer by reading
the code out of the knowledge text. Codes are shared across splits (and
forced to all appear in training) so every answer token is in-vocabulary.

Artifacts written per call: train/test JSONL datasets, a pretraining
text corpus (train-pair knowledge plus bare questions plus neutral
mentions of test entities; never a test pair), and a retrieval corpus
with one document per entity for RAG runs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .rng import RngState


@dataclass
class ToyDataPaths:
    train: Path
    test: Path
    corpus_text: Path
    retrieval_corpus: Path
    meta: Path


def make_toy_data(
    out_dir,
    n_train: int = 500,
    n_test: int = 100,
    n_codes: int = 50,
    seed: int = 0,
    distractor_docs: int = 20,
) -> ToyDataPaths:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngState(seed)

    n_entities = n_train + n_test
    entities = [f"item{i}" for i in range(n_entities)]
    codes = [f"code{i}" for i in range(n_codes)]
    # round-robin over a shuffled code list: every code occurs in training
    order = rng.permutation(n_codes)
    assignment = {entities[i]: codes[int(order[i % n_codes])] for i in range(n_entities)}

    def record(entity: str) -> dict:
        code = assignment[entity]
        return {
            "question": f"what is the code of {entity}",
            "knowledge": f"the code of {entity} is {code}",
            "right_answer": code,
        }

    train_entities = entities[:n_train]
    test_entities = entities[n_train:]

    paths = ToyDataPaths(
        train=out / "train.jsonl",
        test=out / "test.jsonl",
        corpus_text=out / "corpus.txt",
        retrieval_corpus=out / "retrieval_corpus.jsonl",
        meta=out / "meta.json",
    )

    with open(paths.train, "w", encoding="utf-8") as fh:
        for e in train_entities:
            fh.write(json.dumps(record(e)) + "\n")
    with open(paths.test, "w", encoding="utf-8") as fh:
        for e in test_entities:
            fh.write(json.dumps(record(e)) + "\n")

    corpus_lines = (
        [f"the code of {e} is {assignment[e]}" for e in train_entities]
        + [f"what is the code of {e}" for e in train_entities]
        + [f"{e} is listed in the registry" for e in test_entities]
    )
    corpus_lines = [corpus_lines[int(i)] for i in rng.permutation(len(corpus_lines))]
    with open(paths.corpus_text, "w", encoding="utf-8") as fh:
        for line in corpus_lines:
            fh.write(line + "\n")

    with open(paths.retrieval_corpus, "w", encoding="utf-8") as fh:
        for i, e in enumerate(entities):
            doc = {"id": f"d{i}", "title": e, "text": f"the code of {e} is {assignment[e]}"}
            fh.write(json.dumps(doc) + "\n")
        for j in range(distractor_docs):
            doc = {
                "id": f"x{j}",
                "title": f"note{j}",
                "text": "the registry keeps a code for every listed item and is updated daily",
            }
            fh.write(json.dumps(doc) + "\n")

    with open(paths.meta, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "n_train": n_train,
                "n_test": n_test,
                "n_codes": n_codes,
                "seed": seed,
                "distractor_docs": distractor_docs,
            },
            fh,
            indent=2,
        )
    return paths
