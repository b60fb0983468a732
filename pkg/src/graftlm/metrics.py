"""Reference-based generation metrics: ROUGE-1/2/L, Exact Match, BLEU.

One normalizer (lowercase, strip punctuation, strip the articles a/an/the,
collapse whitespace) is shared by Exact Match, ROUGE tokenization and the
retrieval answer-span matcher, so "answer present" means the same thing
everywhere. No stemming. ROUGE is reported as F1, BLEU at corpus level
with the standard brevity penalty exp(1 - r/c) for short hypotheses.
All scores are percentages in [0, 100].
"""
from __future__ import annotations

import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ContractError, SchemaError

_PUNCT_RE = re.compile(r"[^\w\s]")
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")

BLEU_EPS = 1e-9


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = _PUNCT_RE.sub(" ", text)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def _tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def rouge_n(hypothesis: str, reference: str, n: int) -> float:
    """Clipped n-gram overlap F1, as a percentage."""
    if n not in (1, 2):
        raise ContractError(f"rouge_n supports n in {{1, 2}}, got {n}")
    hyp, ref = _tokens(hypothesis), _tokens(reference)
    if not ref:
        warnings.warn("empty reference in rouge_n; scoring 0")
        return 0.0
    hyp_grams, ref_grams = _ngrams(hyp, n), _ngrams(ref, n)
    overlap = sum((hyp_grams & ref_grams).values())
    total_hyp = max(sum(hyp_grams.values()), 0)
    total_ref = sum(ref_grams.values())
    if total_hyp == 0 or total_ref == 0:
        return 0.0
    return 100.0 * _f1(overlap / total_hyp, overlap / total_ref)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: str, reference: str) -> float:
    """Longest-common-subsequence F1, as a percentage."""
    hyp, ref = _tokens(hypothesis), _tokens(reference)
    if not ref:
        warnings.warn("empty reference in rouge_l; scoring 0")
        return 0.0
    if not hyp:
        return 0.0
    lcs = _lcs_length(hyp, ref)
    return 100.0 * _f1(lcs / len(hyp), lcs / len(ref))


def exact_match(hypothesis: str, reference: str) -> int:
    """1 iff the normalized strings are equal."""
    return int(normalize_answer(hypothesis) == normalize_answer(reference))


def bleu(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> tuple[float, float]:
    """Corpus BLEU and its brevity penalty.

    Geometric mean of clipped n-gram precisions up to max_n; a zero match
    count is smoothed to BLEU_EPS matches so the geometric mean stays
    defined. BP = exp(1 - r/c) when the hypothesis corpus is shorter than
    the reference corpus, else 1.
    """
    if len(hypotheses) != len(references):
        raise ContractError(
            f"hypothesis/reference counts differ: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise ContractError("bleu needs a nonempty corpus")
    hyp_tokens = [_tokens(h) for h in hypotheses]
    ref_tokens = [_tokens(r) for r in references]
    c = sum(len(t) for t in hyp_tokens)
    r = sum(len(t) for t in ref_tokens)
    if c == 0:
        return 0.0, 1.0
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    log_precisions = []
    for n in range(1, max_n + 1):
        matches = 0
        total = 0
        for hyp, ref in zip(hyp_tokens, ref_tokens):
            hg = _ngrams(hyp, n)
            total += sum(hg.values())
            matches += sum((hg & _ngrams(ref, n)).values())
        if total == 0:
            break  # corpus too short for this order and above; use lower orders only
        log_precisions.append(math.log(max(matches, BLEU_EPS) / total))
    if not log_precisions:
        return 0.0, bp
    return 100.0 * bp * math.exp(sum(log_precisions) / len(log_precisions)), bp


@dataclass
class MetricReport:
    rouge1: float
    rouge2: float
    rougeL: float
    exact_match: float
    bleu: float
    brevity_penalty: float
    sample_count: int
    per_sample: list[dict] = field(default_factory=list)

    def as_dict(self, with_samples: bool = False) -> dict:
        out = {
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "exact_match": self.exact_match,
            "bleu": self.bleu,
            "brevity_penalty": self.brevity_penalty,
            "sample_count": self.sample_count,
        }
        if with_samples:
            out["per_sample"] = self.per_sample
        return out

    def table(self, label: str = "") -> str:
        header = f"{'run':<24}{'ROUGE-1':>9}{'ROUGE-2':>9}{'ROUGE-L':>9}{'Exact Match':>13}{'BLEU':>8}"
        row = (
            f"{label or 'eval':<24}{self.rouge1:>9.2f}{self.rouge2:>9.2f}{self.rougeL:>9.2f}"
            f"{self.exact_match:>13.2f}{self.bleu:>8.2f}"
        )
        return header + "\n" + row


def score_pairs(outputs: Sequence[str], references: Sequence[str]) -> MetricReport:
    if len(outputs) != len(references):
        raise ContractError(f"output/reference counts differ: {len(outputs)} vs {len(references)}")
    per_sample = []
    for out, ref in zip(outputs, references):
        per_sample.append(
            {
                "rouge1": rouge_n(out, ref, 1),
                "rouge2": rouge_n(out, ref, 2),
                "rougeL": rouge_l(out, ref),
                "exact_match": exact_match(out, ref),
            }
        )
    bleu_score, bp = bleu(outputs, references)
    n = len(outputs)
    return MetricReport(
        rouge1=sum(s["rouge1"] for s in per_sample) / n,
        rouge2=sum(s["rouge2"] for s in per_sample) / n,
        rougeL=sum(s["rougeL"] for s in per_sample) / n,
        exact_match=100.0 * sum(s["exact_match"] for s in per_sample) / n,
        bleu=bleu_score,
        brevity_penalty=bp,
        sample_count=n,
        per_sample=per_sample,
    )


def evaluate_run(generations_path, samples) -> MetricReport:
    """Score a generations file (JSON Lines of {id, output}) against the
    dataset's reference answers, aligned by id."""
    outputs: dict[int, str] = {}
    with open(generations_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{generations_path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if "id" not in record or "output" not in record:
                raise SchemaError(f"{generations_path}:{lineno}: need fields 'id' and 'output'")
            outputs[int(record["id"])] = str(record["output"])
    wanted = [s.sample_id for s in samples]
    missing = sorted(set(wanted) - set(outputs))
    if missing:
        raise SchemaError(f"generations missing for sample ids {missing}")
    return score_pairs([outputs[i] for i in wanted], [s.answer_text for s in samples])
