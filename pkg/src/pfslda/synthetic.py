"""Well-specified dataset generator with known relevant/irrelevant words.

Topics get Dirichlet(1) mass on a designated relevant subset of the
vocabulary; the additional topic gets Dirichlet(1) mass on the complement.
Each token flips a Bernoulli(p) switch to pick its channel, and the target is
Gaussian in the document's topic proportions.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from pfslda.corpus import Corpus, Document, Vocab, save_corpus


@dataclass
class SyntheticConfig:
    V: int = 100
    relevant_count: int = 50
    K: int = 5
    p: float = 0.25
    alpha: np.ndarray | None = None
    M: int = 1000
    doc_length: int = 100
    eta_low: float = -2.0
    eta_high: float = 2.0
    delta: float = 0.5
    datasets: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.relevant_count < self.V:
            raise ValueError("relevant_count must be in (0, V)")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must be in (0, 1)")
        if self.alpha is None:
            self.alpha = np.ones(self.K)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)


@dataclass
class SyntheticTruth:
    true_beta: np.ndarray          # (K, V), support on relevant words
    true_pi: np.ndarray            # (V,), support on irrelevant words
    true_eta: np.ndarray
    true_delta: float
    relevance_mask: np.ndarray     # bool (V,)

    @property
    def relevant_words(self) -> set[int]:
        return set(np.flatnonzero(self.relevance_mask).tolist())


def generate_dataset(config: SyntheticConfig,
                     dataset_index: int = 0) -> tuple[Corpus, SyntheticTruth]:
    """One corpus drawn from the generative process; deterministic given
    (config.seed, dataset_index)."""
    rng = np.random.default_rng([config.seed, dataset_index])
    V, K = config.V, config.K

    relevant = rng.choice(V, size=config.relevant_count, replace=False)
    mask = np.zeros(V, dtype=bool)
    mask[relevant] = True
    irrelevant = np.flatnonzero(~mask)

    beta = np.zeros((K, V))
    beta[:, relevant] = rng.dirichlet(np.ones(config.relevant_count), size=K)
    pi = np.zeros(V)
    pi[irrelevant] = rng.dirichlet(np.ones(len(irrelevant)))
    eta = np.linspace(config.eta_low, config.eta_high, K)

    beta_cdf = beta.cumsum(axis=1)
    pi_cdf = pi.cumsum()
    documents = []
    targets = np.empty(config.M)
    for d in range(config.M):
        theta = rng.dirichlet(config.alpha)
        n = config.doc_length
        z = rng.choice(K, size=n, p=theta)
        xi = rng.random(n) < config.p
        u = rng.random(n)
        words = np.empty(n, dtype=np.int64)
        for k in range(K):
            sel = xi & (z == k)
            words[sel] = np.searchsorted(beta_cdf[k], u[sel], side="right")
        words[~xi] = np.searchsorted(pi_cdf, u[~xi], side="right")
        np.clip(words, 0, V - 1, out=words)  # float round-off at the cdf end
        counts: dict[int, int] = {}
        for w in words:
            counts[int(w)] = counts.get(int(w), 0) + 1
        documents.append(Document(counts))
        targets[d] = rng.normal(float(eta @ theta), math.sqrt(config.delta))

    vocab = Vocab(tuple(f"w{v:04d}" for v in range(V)))
    corpus = Corpus(vocab, tuple(documents), targets, "real")
    truth = SyntheticTruth(beta, pi, eta, config.delta, mask)
    return corpus, truth


def empirical_channel_rate(corpus: Corpus, truth: SyntheticTruth) -> float:
    """Fraction of tokens on relevant words; with disjoint generating supports
    this equals the realized switch rate."""
    relevant_tokens = 0.0
    total = 0.0
    for doc in corpus.documents:
        sel = truth.relevance_mask[doc.word_idx]
        relevant_tokens += doc.word_cnt[sel].sum()
        total += doc.word_cnt.sum()
    return relevant_tokens / total if total else 0.0


def save_truth(path: str, truth: SyntheticTruth) -> None:
    def row(a):
        return " ".join(f"{x:.17g}" for x in np.atleast_1d(a))

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join("1" if b else "0" for b in truth.relevance_mask) + "\n")
        fh.write("BETA\n")
        for k in range(truth.true_beta.shape[0]):
            fh.write(row(truth.true_beta[k]) + "\n")
        fh.write("PI\n" + row(truth.true_pi) + "\n")
        fh.write("ETA\n" + row(truth.true_eta) + "\n")
        fh.write("DELTA\n" + row(truth.true_delta) + "\n")


def load_truth(path: str) -> SyntheticTruth:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    mask = np.array([c == "1" for c in lines[0].split()], dtype=bool)
    blocks: dict[str, list[np.ndarray]] = {}
    name = None
    for line in lines[1:]:
        if line.replace("_", "").isalpha() and line.isupper():
            name = line
            blocks[name] = []
        else:
            blocks[name].append(np.array(line.split(), dtype=np.float64))
    return SyntheticTruth(np.vstack(blocks["BETA"]),
                          blocks["PI"][0],
                          blocks["ETA"][0],
                          float(blocks["DELTA"][0][0]),
                          mask)


def write_dataset(out_dir: str, corpus: Corpus, truth: SyntheticTruth) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_corpus(corpus,
                os.path.join(out_dir, "vocab.txt"),
                os.path.join(out_dir, "docs.txt"),
                os.path.join(out_dir, "targets.txt"))
    save_truth(os.path.join(out_dir, "truth.txt"), truth)
