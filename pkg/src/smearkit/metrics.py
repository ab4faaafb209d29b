"""Benchmark scoring: lexical matches, BLEU-1, ROUGE-L, similarity, bootstrap.

Question-type policy: true/false and MCQ score accuracy (MCQ predictions may
be option text or a bare option letter), fill-in-the-blank scores exact and
substring match, open-ended scores BLEU-1, ROUGE-L, and embedding cosine
similarity.  Report cells carry bootstrap standard deviations.
"""

from __future__ import annotations

import hashlib
import math
import string
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ValidationError

QTYPES = ("true_false", "mcq", "fill_blank", "open")

METRICS_BY_QTYPE = {
    "true_false": ("accuracy",),
    "mcq": ("accuracy",),
    "fill_blank": ("exact_match", "partial_match"),
    "open": ("bleu1", "rouge_l", "semantic_sim"),
}

DEFAULT_BOOTSTRAP_B = 1000


def normalize(text: str) -> str:
    """Case-fold, map punctuation and symbols to spaces, collapse whitespace."""
    folded = text.casefold()
    cleaned = "".join(ch if ch.isalnum() else " " for ch in folded)
    return " ".join(cleaned.split())


def tokens(text: str) -> list[str]:
    return normalize(text).split()


def exact_match(pred: str, gold: str) -> int:
    return int(normalize(pred) == normalize(gold))


def partial_match(pred: str, gold: str) -> int:
    """1 iff normalized gold occurs inside normalized pred; empty gold never matches."""
    g = normalize(gold)
    if not g:
        return 0
    return int(g in normalize(pred))


def bleu1(pred: str, gold: str) -> float:
    """Clipped unigram precision times brevity penalty; empty prediction scores 0."""
    p = tokens(pred)
    g = tokens(gold)
    if not p:
        return 0.0
    gold_counts: dict[str, int] = {}
    for t in g:
        gold_counts[t] = gold_counts.get(t, 0) + 1
    clipped = 0
    pred_counts: dict[str, int] = {}
    for t in p:
        pred_counts[t] = pred_counts.get(t, 0) + 1
    for t, c in pred_counts.items():
        clipped += min(c, gold_counts.get(t, 0))
    precision = clipped / len(p)
    bp = math.exp(min(0.0, 1.0 - len(g) / len(p)))
    return precision * bp


def rouge_l(pred: str, gold: str) -> float:
    """LCS F1 over normalized tokens (beta = 1)."""
    p = tokens(pred)
    g = tokens(gold)
    if not p or not g:
        return 0.0
    vocab: dict[str, int] = {}
    a = np.array([vocab.setdefault(t, len(vocab)) for t in p], dtype=np.int64)
    b = np.array([vocab.setdefault(t, len(vocab)) for t in g], dtype=np.int64)
    lcs = kernels.lcs_len(a, b)
    if lcs == 0:
        return 0.0
    prec = lcs / len(p)
    rec = lcs / len(g)
    return 2.0 * prec * rec / (prec + rec)


EmbeddingProvider = Callable[[str], np.ndarray]


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def semantic_sim(pred: str, gold: str, provider: EmbeddingProvider | None = None) -> float:
    """Cosine similarity of sentence embeddings.

    The default provider is a deterministic bag-of-words term-count vector
    over normalized tokens (vocabulary shared by the pair), keeping the
    suite offline; an external sentence encoder can be plugged in instead.
    """
    if provider is not None:
        return _cosine(np.asarray(provider(pred), dtype=float),
                       np.asarray(provider(gold), dtype=float))
    p = tokens(pred)
    g = tokens(gold)
    vocab: dict[str, int] = {}
    for t in p + g:
        vocab.setdefault(t, len(vocab))
    u = np.zeros(max(len(vocab), 1))
    v = np.zeros(max(len(vocab), 1))
    for t in p:
        u[vocab[t]] += 1.0
    for t in g:
        v[vocab[t]] += 1.0
    return _cosine(u, v)


def bootstrap_std(scores: Sequence[float], B: int = DEFAULT_BOOTSTRAP_B, seed: int = 0) -> tuple[float, float]:
    """Mean of the scores and the std of B seeded resampled means."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValidationError("bootstrap over an empty score list")
    if B < 1:
        raise ValidationError(f"bootstrap count must be >= 1, got {B}")
    mean = float(scores.mean())
    if scores.min() == scores.max():
        # every resample is the same vector; skip the ulp noise of re-summing
        return mean, 0.0
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, scores.size, size=(B, scores.size))
    resampled = scores[idx].mean(axis=1)
    return mean, float(resampled.std())


@dataclass(frozen=True)
class EvalRecord:
    qa_id: str
    prediction: str
    gold: str
    qtype: str
    task: str
    level: str
    options: tuple[str, ...] = ()


@dataclass(frozen=True)
class CellStats:
    mean: float
    std: float
    n: int


@dataclass
class MetricReport:
    """Per (level, task, qtype) cell: metric name -> (mean, bootstrap std, n)."""

    cells: dict[tuple[str, str, str], dict[str, CellStats]] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, str, str, float, float, int]]:
        out = []
        for (level, task, qtype), metrics in sorted(self.cells.items()):
            for name, stats in sorted(metrics.items()):
                out.append((level, task, qtype, name, stats.mean, stats.std, stats.n))
        return out


def resolve_mcq_prediction(prediction: str, options: Sequence[str]) -> str:
    """Map a bare option letter ('B') onto its option text; otherwise pass through.

    Deliberately strict: paraphrases of an option are not resolved.
    """
    norm = normalize(prediction)
    if len(norm) == 1 and norm in string.ascii_lowercase:
        idx = string.ascii_lowercase.index(norm)
        if idx < len(options):
            return options[idx]
    return prediction


def _score_record(rec: EvalRecord) -> dict[str, float]:
    if rec.qtype in ("true_false", "mcq"):
        pred = rec.prediction
        if rec.qtype == "mcq" and rec.options:
            pred = resolve_mcq_prediction(pred, rec.options)
        return {"accuracy": float(exact_match(pred, rec.gold))}
    if rec.qtype == "fill_blank":
        return {
            "exact_match": float(exact_match(rec.prediction, rec.gold)),
            "partial_match": float(partial_match(rec.prediction, rec.gold)),
        }
    if rec.qtype == "open":
        return {
            "bleu1": bleu1(rec.prediction, rec.gold),
            "rouge_l": rouge_l(rec.prediction, rec.gold),
            "semantic_sim": semantic_sim(rec.prediction, rec.gold),
        }
    raise ValidationError(f"unknown question type {rec.qtype!r}")


def _cell_seed(seed: int, level: str, task: str, qtype: str, metric: str) -> int:
    key = f"{seed}|{level}|{task}|{qtype}|{metric}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def evaluate(records: Iterable[EvalRecord], B: int = DEFAULT_BOOTSTRAP_B, seed: int = 0) -> MetricReport:
    """Score records, group them into (level, task, qtype) cells, and attach
    bootstrap uncertainty.

    Bootstrap RNGs are keyed to (seed, cell, metric) and scores are sorted
    before resampling, so the report depends only on the record multiset.
    """
    grouped: dict[tuple[str, str, str], list[dict[str, float]]] = {}
    for rec in records:
        grouped.setdefault((rec.level, rec.task, rec.qtype), []).append(_score_record(rec))

    report = MetricReport()
    for cell_key, scored in grouped.items():
        level, task, qtype = cell_key
        cell: dict[str, CellStats] = {}
        for metric in METRICS_BY_QTYPE[qtype]:
            values = sorted(s[metric] for s in scored)
            mean, std = bootstrap_std(values, B=B, seed=_cell_seed(seed, level, task, qtype, metric))
            cell[metric] = CellStats(mean, std, len(values))
        report.cells[cell_key] = cell
    return report
