"""Topic coherence, prediction metrics, feature-selection metrics, and the
support-disjointness diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pfslda.corpus import Corpus

STANDARD_PMI = "standard_pmi"
PAPER_LITERAL = "paper_literal"


@dataclass
class CoherenceReport:
    per_topic: np.ndarray
    top_n: int
    formula: str

    @property
    def mean(self) -> float:
        return float(self.per_topic.mean())


@dataclass
class SelectionMetrics:
    precision: float
    recall: float
    selected_count: int
    empty_selection: bool = False


def topic_coherence(beta: np.ndarray, reference: Corpus, top_n: int = 50,
                    formula: str = STANDARD_PMI) -> CoherenceReport:
    """Mean pairwise PMI of each topic's top_n words under document
    co-occurrence in the reference corpus.

    Marginals are document frequencies df / M; joint probabilities use
    add-one smoothing, (df_ij + 1) / (M + 1), so never-co-occurring pairs stay
    finite. "paper_literal" flips the PMI fraction (log of marginal product
    over joint).
    """
    if top_n < 2:
        raise ValueError("top_n must be >= 2")
    K, V = beta.shape
    if top_n > V:
        raise ValueError("top_n exceeds vocabulary size")
    M = reference.num_documents
    if M < 1:
        raise ValueError("reference corpus is empty")

    presence = np.zeros((M, V), dtype=bool)
    for d, doc in enumerate(reference.documents):
        presence[d, doc.word_idx] = True
    df = presence.sum(axis=0)

    per_topic = np.empty(K)
    for k in range(K):
        top = np.argsort(-beta[k], kind="stable")[:top_n]
        sub = presence[:, top].astype(np.float64)            # (M, top_n)
        joint = sub.T @ sub                                  # co-document counts
        p_joint = (joint + 1.0) / (M + 1.0)
        p_marg = df[top] / M
        with np.errstate(divide="ignore"):
            pmi = np.log(p_joint) - np.log(np.outer(p_marg, p_marg))
        if formula == PAPER_LITERAL:
            pmi = -pmi
        elif formula != STANDARD_PMI:
            raise ValueError(f"unknown coherence formula {formula!r}")
        off_diag = pmi.sum() - np.trace(pmi)
        per_topic[k] = off_diag / (top_n * (top_n - 1))
    return CoherenceReport(per_topic, top_n, formula)


def rmse(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size < 1:
        raise ValueError("predictions and targets must have equal length >= 1")
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def auc(scores, labels) -> float:
    """Rank-based Mann-Whitney AUC; ties contribute one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need at least one positive and one negative label")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


def select_relevant(varphi: np.ndarray, threshold: float = 0.99) -> set[int]:
    """Word indices whose channel probability exceeds the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    return set(np.flatnonzero(np.asarray(varphi) > threshold).tolist())


def selection_metrics(selected: set[int], truth: set[int]) -> SelectionMetrics:
    """Precision/recall of a selected word set against ground truth;
    an empty selection gets precision 1.0 by convention (flagged)."""
    if not truth:
        raise ValueError("truth set is empty")
    hit = len(selected & truth)
    if selected:
        return SelectionMetrics(hit / len(selected), hit / len(truth),
                                len(selected))
    return SelectionMetrics(1.0, 0.0, 0, empty_selection=True)


def correlation_topn(corpus: Corpus, n: int) -> set[int]:
    """Top-n words by absolute Pearson correlation of per-document count with
    the target; constant words score 0; ties break toward the lower index."""
    V = corpus.vocab.size
    if n > V:
        raise ValueError("n exceeds vocabulary size")
    if corpus.num_documents < 2:
        raise ValueError("need at least 2 documents")
    y = corpus.targets
    if np.ptp(y) == 0:
        raise ValueError("targets are constant; correlation undefined")
    C = corpus.count_matrix()
    Cc = C - C.mean(axis=0)
    yc = y - y.mean()
    denom = np.sqrt((Cc ** 2).sum(axis=0) * (yc ** 2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, (Cc * yc[:, None]).sum(axis=0) / denom, 0.0)
    order = np.lexsort((np.arange(V), -np.abs(corr)))
    return set(order[:n].tolist())


def disjointness_overlap(beta: np.ndarray, pi: np.ndarray,
                         floor: float = 1e-8) -> float:
    """sum_v (max_k beta_kv) * pi_v with entries below the floor zeroed;
    0 iff the estimated supports are disjoint."""
    b = np.where(beta < floor, 0.0, beta).max(axis=0)
    p = np.where(pi < floor, 0.0, pi)
    return float((b * p).sum())
