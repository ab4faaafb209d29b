"""Scoring suite: normalization, lexical metrics, bootstrap, report assembly."""

import math
from collections import Counter

import numpy as np
import pytest

from smearkit.errors import ValidationError
from smearkit.metrics import (
    EvalRecord,
    bleu1,
    bootstrap_std,
    evaluate,
    exact_match,
    normalize,
    partial_match,
    resolve_mcq_prediction,
    rouge_l,
    semantic_sim,
)


def _bleu1_oracle(pred, gold):
    # Counter-intersection restatement of clipped unigram precision.
    p = normalize(pred).split()
    g = normalize(gold).split()
    if not p:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    precision = overlap / len(p)
    bp = 1.0 if len(p) >= len(g) else math.exp(1.0 - len(g) / len(p))
    return precision * bp


def _rouge_l_oracle(pred, gold):
    # Full-table LCS, then F1 written out with beta = 1.
    p = normalize(pred).split()
    g = normalize(gold).split()
    if not p or not g:
        return 0.0
    table = [[0] * (len(g) + 1) for _ in range(len(p) + 1)]
    for i in range(1, len(p) + 1):
        for j in range(1, len(g) + 1):
            if p[i - 1] == g[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    lcs = table[len(p)][len(g)]
    if lcs == 0:
        return 0.0
    prec, rec = lcs / len(p), lcs / len(g)
    beta = 1.0
    return (1 + beta ** 2) * prec * rec / (rec + beta ** 2 * prec)


def _random_texts(rng, n, max_len=12, vocab=("a", "b", "c", "d", "e")):
    out = []
    for _ in range(n):
        length = int(rng.integers(0, max_len + 1))
        out.append(" ".join(vocab[int(i)] for i in rng.integers(0, len(vocab), size=length)))
    return out


class TestNormalize:
    def test_examples(self):
        assert normalize("  Neutrophil. ") == "neutrophil"
        assert normalize("hyper-lobated") == "hyper lobated"
        assert normalize("") == ""
        assert normalize("Band, forms?!") == "band forms"
        assert normalize("A\tB\nC") == "a b c"

    def test_digits_survive(self):
        assert normalize("60 percent") == "60 percent"


class TestMatches:
    def test_exact(self):
        assert exact_match("Neutrophil", "neutrophil.") == 1
        assert exact_match("neutrophils", "neutrophil") == 0
        assert exact_match("", "") == 1

    def test_partial_is_gold_in_pred(self):
        assert partial_match("the cell is a neutrophil", "neutrophil") == 1
        assert partial_match("neutrophil", "the cell is a neutrophil") == 0

    def test_partial_empty_gold_never_matches(self):
        assert partial_match("anything", "") == 0
        assert partial_match("", "") == 0

    def test_partial_token_boundary_free(self):
        # substring containment is over the normalized strings, not tokens
        assert partial_match("neutrophils", "neutrophil") == 1


class TestBleu1:
    def test_hand_cases(self):
        assert bleu1("a b", "a c") == pytest.approx(0.5)
        assert bleu1("a b c", "a b c") == pytest.approx(1.0)
        assert bleu1("", "a b") == 0.0
        assert bleu1("a b", "") == 0.0  # no gold tokens to match
        assert bleu1("a a a", "a") == pytest.approx(1.0 / 3.0)

    def test_brevity_penalty(self):
        assert bleu1("a", "a b") == pytest.approx(math.exp(-1.0))
        # no penalty when prediction is longer
        assert bleu1("a b c d", "a b") == pytest.approx(0.5)

    def test_against_oracle(self):
        rng = np.random.default_rng(17)
        preds = _random_texts(rng, 60)
        golds = _random_texts(rng, 60)
        for p, g in zip(preds, golds):
            assert bleu1(p, g) == pytest.approx(_bleu1_oracle(p, g), abs=1e-12)


class TestRougeL:
    def test_hand_cases(self):
        assert rouge_l("a b c", "a c") == pytest.approx(0.8)
        assert rouge_l("x y", "a b") == 0.0
        assert rouge_l("", "a") == 0.0
        assert rouge_l("a", "") == 0.0
        assert rouge_l("a b c", "a b c") == pytest.approx(1.0)

    def test_subsequence_not_substring(self):
        # "a c" is a subsequence of "a b c": lcs 2, prec 1, rec 2/3
        assert rouge_l("a c", "a b c") == pytest.approx(0.8)

    def test_against_oracle(self):
        rng = np.random.default_rng(23)
        preds = _random_texts(rng, 60)
        golds = _random_texts(rng, 60)
        for p, g in zip(preds, golds):
            assert rouge_l(p, g) == pytest.approx(_rouge_l_oracle(p, g), abs=1e-12)


class TestSemanticSim:
    def test_default_provider(self):
        assert semantic_sim("a b", "b a") == pytest.approx(1.0)
        assert semantic_sim("a b", "c d") == pytest.approx(0.0)
        assert semantic_sim("a b", "a") == pytest.approx(1.0 / math.sqrt(2.0))
        assert semantic_sim("", "") == 0.0

    def test_pluggable_provider(self):
        table = {"x": np.array([1.0, 0.0]), "y": np.array([0.0, 2.0]),
                 "z": np.array([1.0, 1.0])}
        sim = lambda a, b: semantic_sim(a, b, provider=table.__getitem__)
        assert sim("x", "y") == pytest.approx(0.0)
        assert sim("x", "z") == pytest.approx(1.0 / math.sqrt(2.0))

    def test_zero_vector_scores_zero(self):
        provider = lambda s: np.zeros(3)
        assert semantic_sim("a", "b", provider=provider) == 0.0


class TestBootstrap:
    def test_constant_scores_zero_std(self):
        mean, std = bootstrap_std([0.7] * 50, B=500, seed=3)
        assert mean == pytest.approx(0.7)
        assert std == 0.0

    def test_single_score_zero_std(self):
        mean, std = bootstrap_std([0.4], B=200, seed=1)
        assert (mean, std) == (0.4, 0.0)

    def test_mean_independent_of_resampling(self):
        scores = [0.0, 1.0, 1.0, 0.5]
        for seed in range(5):
            mean, _ = bootstrap_std(scores, B=50, seed=seed)
            assert mean == pytest.approx(np.mean(scores))

    def test_seeded_repeatable(self):
        scores = list(np.random.default_rng(0).random(30))
        assert bootstrap_std(scores, B=300, seed=9) == bootstrap_std(scores, B=300, seed=9)
        _, s1 = bootstrap_std(scores, B=300, seed=9)
        _, s2 = bootstrap_std(scores, B=300, seed=10)
        assert s1 != s2

    def test_bernoulli_matches_analytic(self):
        scores = [1.0] * 50 + [0.0] * 50
        _, std = bootstrap_std(scores, B=1000, seed=7)
        assert abs(std - 0.05) <= 0.2 * 0.05

    def test_domain_errors(self):
        with pytest.raises(ValidationError):
            bootstrap_std([], B=10)
        with pytest.raises(ValidationError):
            bootstrap_std([1.0], B=0)


class TestMcqResolution:
    OPTIONS = ("anemia", "control", "myelodysplastic syndrome (MDS)")

    def test_bare_letter_maps_to_option(self):
        assert resolve_mcq_prediction("B", self.OPTIONS) == "control"
        assert resolve_mcq_prediction(" c ", self.OPTIONS) == self.OPTIONS[2]
        assert resolve_mcq_prediction("B)", self.OPTIONS) == "control"

    def test_passthrough_cases(self):
        assert resolve_mcq_prediction("anemia", self.OPTIONS) == "anemia"
        assert resolve_mcq_prediction("E", self.OPTIONS) == "E"  # beyond the option list
        assert resolve_mcq_prediction("3", self.OPTIONS) == "3"
        assert resolve_mcq_prediction("bc", self.OPTIONS) == "bc"


def _rec(qa_id, pred, gold, qtype, task="morphology", level="cell", options=()):
    return EvalRecord(qa_id=qa_id, prediction=pred, gold=gold, qtype=qtype,
                      task=task, level=level, options=tuple(options))


class TestEvaluate:
    def test_grouping_and_row_order(self):
        records = [
            _rec("1", "True", "True", "true_false"),
            _rec("2", "False", "True", "true_false"),
            _rec("3", "band forms", "band forms", "fill_blank", task="abnormality"),
            _rec("4", "it shows a round nucleus", "a round nucleus", "open",
                 task="knowledge", level="slide"),
        ]
        report = evaluate(records, B=100, seed=0)
        rows = report.rows()
        keys = [(r[0], r[1], r[2], r[3]) for r in rows]
        assert keys == sorted(keys)
        assert ("cell", "abnormality", "fill_blank", "exact_match") in keys
        assert ("cell", "abnormality", "fill_blank", "partial_match") in keys
        assert ("slide", "knowledge", "open", "bleu1") in keys
        acc = next(r for r in rows if r[:4] == ("cell", "morphology", "true_false", "accuracy"))
        assert acc[4] == pytest.approx(0.5)
        assert acc[6] == 2

    def test_mcq_letter_resolution_in_scoring(self):
        options = ("anemia", "control", "myelodysplastic syndrome (MDS)")
        records = [
            _rec("1", "b", "control", "mcq", task="diagnosis", level="slide", options=options),
            _rec("2", "anemia", "control", "mcq", task="diagnosis", level="slide", options=options),
        ]
        rows = evaluate(records, B=50, seed=0).rows()
        assert rows[0][4] == pytest.approx(0.5)

    def test_record_order_invariance_including_std(self):
        rng = np.random.default_rng(4)
        records = [
            _rec(str(i), f"cell {int(rng.integers(0, 3))}", "cell 1", "open")
            for i in range(40)
        ]
        fwd = evaluate(records, B=400, seed=11).rows()
        rev = evaluate(records[::-1], B=400, seed=11).rows()
        assert fwd == rev

    def test_unknown_qtype_rejected(self):
        with pytest.raises(ValidationError):
            evaluate([_rec("1", "a", "a", "essay")])

    def test_metric_codomain(self):
        rng = np.random.default_rng(31)
        preds = _random_texts(rng, 40)
        golds = _random_texts(rng, 40)
        for metric in (bleu1, rouge_l, semantic_sim):
            for p, g in zip(preds, golds):
                assert 0.0 <= metric(p, g) <= 1.0
        for p, g in zip(preds, golds):
            assert exact_match(p, g) in (0, 1)
            assert partial_match(p, g) in (0, 1)
