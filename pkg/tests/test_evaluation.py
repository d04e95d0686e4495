import math

import numpy as np
import pytest

from pfslda.evaluation import (
    PAPER_LITERAL,
    STANDARD_PMI,
    auc,
    correlation_topn,
    disjointness_overlap,
    rmse,
    select_relevant,
    selection_metrics,
    topic_coherence,
)
from conftest import make_corpus


class TestCoherence:
    def saturated_corpus(self, M=20, V=4):
        return make_corpus([{v: 1 for v in range(V)}] * M, [0.0] * M, V=V)

    def test_saturated_corpus_scores_zero(self):
        corpus = self.saturated_corpus()
        beta = np.full((2, 4), 0.25)
        report = topic_coherence(beta, corpus, top_n=3, formula=STANDARD_PMI)
        assert report.mean == pytest.approx(0.0, abs=1e-12)
        assert len(report.per_topic) == 2

    def half_cooccurring_corpus(self):
        # words 0 and 1 appear together in exactly half of 100 documents;
        # word 2 pads the rest so every document is nonempty
        docs = [{0: 1, 1: 1} if d < 50 else {2: 1} for d in range(100)]
        return make_corpus(docs, [0.0] * 100, V=3)

    def test_half_cooccurrence_pair_near_log_two(self):
        corpus = self.half_cooccurring_corpus()
        beta = np.array([[0.5, 0.5, 1e-9]])
        report = topic_coherence(beta, corpus, top_n=2, formula=STANDARD_PMI)
        assert report.per_topic[0] == pytest.approx(math.log(2), abs=0.02)

    def test_literal_formula_flips_sign(self):
        corpus = self.half_cooccurring_corpus()
        beta = np.array([[0.5, 0.5, 1e-9]])
        report = topic_coherence(beta, corpus, top_n=2, formula=PAPER_LITERAL)
        assert report.per_topic[0] == pytest.approx(-math.log(2), abs=0.02)

    def test_word_order_irrelevant(self, rng):
        docs = [{int(i): 1 for i in rng.choice(6, size=3, replace=False)}
                for _ in range(40)]
        corpus = make_corpus(docs, [0.0] * 40, V=6)
        beta = rng.dirichlet(np.ones(6), size=1)
        a = topic_coherence(beta, corpus, top_n=4).per_topic[0]
        perm = rng.permutation(6)
        b = topic_coherence(beta[:, perm][:, np.argsort(perm)], corpus,
                            top_n=4).per_topic[0]
        assert a == pytest.approx(b, abs=1e-12)

    def test_small_top_n_rejected(self):
        corpus = self.saturated_corpus()
        with pytest.raises(ValueError):
            topic_coherence(np.full((1, 4), 0.25), corpus, top_n=1)

    def test_mean_is_topic_average(self, rng):
        docs = [{int(i): 1 for i in rng.choice(6, size=3, replace=False)}
                for _ in range(40)]
        corpus = make_corpus(docs, [0.0] * 40, V=6)
        beta = rng.dirichlet(np.ones(6), size=3)
        report = topic_coherence(beta, corpus, top_n=3)
        assert report.mean == pytest.approx(np.mean(report.per_topic))


class TestRmse:
    def test_identity(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_constant_offset(self):
        assert rmse([1.0, 2.0], [3.0, 4.0]) == pytest.approx(2.0)

    def test_mixed_errors(self):
        assert rmse([0.0, 3.0], [0.0, -1.0]) == pytest.approx(
            math.sqrt((0 + 16) / 2))
        assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(
            math.sqrt(25 / 2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [0, 0, 1, 1]) == 0.5

    def test_pairwise_enumeration(self):
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])

    def test_monotone_transform_invariance(self, rng):
        scores = rng.normal(size=30)
        labels = rng.integers(0, 2, size=30)
        labels[0], labels[1] = 0, 1
        a = auc(scores, labels)
        b = auc(np.exp(3 * scores), labels)
        assert a == pytest.approx(b, abs=1e-12)


class TestSelection:
    def test_threshold_selection(self):
        assert select_relevant(np.array([1.0, 0.0, 1.0]), 0.99) == {0, 2}

    def test_all_below_threshold(self):
        assert select_relevant(np.full(5, 0.5), 0.99) == set()

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            select_relevant(np.array([0.5]), 1.0)

    def test_exact_match(self):
        m = selection_metrics({1, 2}, {1, 2})
        assert (m.precision, m.recall) == (1.0, 1.0)

    def test_select_all(self):
        m = selection_metrics(set(range(100)), set(range(50)))
        assert (m.precision, m.recall) == (0.5, 1.0)

    def test_empty_selection_convention(self):
        m = selection_metrics(set(), {1, 2})
        assert m.precision == 1.0
        assert m.recall == 0.0
        assert m.empty_selection

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError):
            selection_metrics({1}, set())

    def test_subset_gives_full_precision(self):
        m = selection_metrics({3}, {1, 2, 3})
        assert m.precision == 1.0
        assert m.recall == pytest.approx(1 / 3)


class TestCorrelationFilter:
    def test_count_equal_to_target_ranks_first(self):
        docs = [{0: 1, 1: 2}, {0: 2, 1: 2}, {0: 3, 1: 2}, {0: 4, 1: 2}]
        corpus = make_corpus(docs, [1.0, 2.0, 3.0, 4.0], V=3)
        assert correlation_topn(corpus, 1) == {0}

    def test_constant_word_ranked_last(self):
        docs = [{0: 1, 1: 2, 2: 2}, {0: 2, 1: 2}, {0: 3, 1: 2, 2: 1}]
        corpus = make_corpus(docs, [1.0, 2.0, 3.0], V=3)
        assert 1 not in correlation_topn(corpus, 2)

    def test_tie_broken_by_lower_index(self):
        # words 1 and 2 have identical counts, hence identical correlation
        docs = [{1: 1, 2: 1}, {0: 1, 1: 2, 2: 2}, {1: 3, 2: 3}]
        corpus = make_corpus(docs, [1.0, 2.0, 3.0], V=3)
        selected = correlation_topn(corpus, 2)
        assert 1 in selected

    def test_constant_targets_rejected(self):
        corpus = make_corpus([{0: 1}, {0: 2}, {0: 3}], [1.0, 1.0, 1.0], V=1)
        with pytest.raises(ValueError):
            correlation_topn(corpus, 1)

    def test_n_larger_than_vocab_rejected(self):
        corpus = make_corpus([{0: 1}, {0: 2}], [0.0, 1.0], V=1)
        with pytest.raises(ValueError):
            correlation_topn(corpus, 2)


class TestDisjointness:
    def test_disjoint_supports_zero(self):
        beta = np.array([[0.5, 0.5, 1e-12, 1e-12],
                         [0.9, 0.1, 1e-12, 1e-12]])
        pi = np.array([1e-12, 1e-12, 0.4, 0.6])
        assert disjointness_overlap(beta, pi) == 0.0

    def test_uniform_overlap(self):
        beta = np.full((3, 4), 0.25)
        pi = np.full(4, 0.25)
        assert disjointness_overlap(beta, pi) == pytest.approx(0.25)

    def test_positive_when_sharing_support(self):
        beta = np.array([[0.5, 0.5]])
        pi = np.array([1.0, 1e-12])
        assert disjointness_overlap(beta, pi) > 0.0
