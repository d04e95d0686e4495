"""Bag-of-words corpora with aligned prediction targets.

File formats:
  vocab file:   one token per line; the 0-based line number is the word index.
  docs file:    one document per line, space-separated ``index:count`` pairs
                (count >= 1); an empty line is an empty document.
  targets file: one decimal number per line; binary targets must be 0 or 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REAL = "real"
BINARY = "binary"


class CorpusError(ValueError):
    """Raised on malformed corpus files or invariant violations."""


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise CorpusError("vocabulary must contain at least one token")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("vocabulary tokens must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Document:
    """Sparse word counts for one document, plus cached index/count arrays."""

    counts: dict[int, int]
    word_idx: np.ndarray = field(repr=False, default=None)
    word_cnt: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        idx = np.array(sorted(self.counts), dtype=np.int64)
        cnt = np.array([self.counts[i] for i in idx], dtype=np.float64)
        object.__setattr__(self, "word_idx", idx)
        object.__setattr__(self, "word_cnt", cnt)

    @property
    def total_tokens(self) -> int:
        return int(self.word_cnt.sum())

    def __len__(self) -> int:
        return self.total_tokens


@dataclass(frozen=True)
class Corpus:
    vocab: Vocab
    documents: tuple[Document, ...]
    targets: np.ndarray
    target_type: str

    def __post_init__(self):
        if len(self.documents) != len(self.targets):
            raise CorpusError(
                f"{len(self.documents)} documents but {len(self.targets)} targets"
            )
        if self.target_type not in (REAL, BINARY):
            raise CorpusError(f"unknown target_type {self.target_type!r}")
        if self.target_type == BINARY and not np.isin(self.targets, (0.0, 1.0)).all():
            raise CorpusError("binary targets must be 0 or 1")
        V = self.vocab.size
        for d, doc in enumerate(self.documents):
            if len(doc.word_idx) and (doc.word_idx[0] < 0 or doc.word_idx[-1] >= V):
                raise CorpusError(f"document {d} has a word index outside [0, {V})")

    @property
    def num_documents(self) -> int:
        return len(self.documents)

    def count_matrix(self, doc_ids=None) -> np.ndarray:
        """Dense (len(doc_ids), V) count matrix; all documents by default."""
        if doc_ids is None:
            doc_ids = range(self.num_documents)
        C = np.zeros((len(list(doc_ids)), self.vocab.size))
        for row, d in enumerate(doc_ids):
            doc = self.documents[d]
            C[row, doc.word_idx] = doc.word_cnt
        return C


def _parse_doc_line(line: str, V: int, path: str, lineno: int) -> Document:
    counts: dict[int, int] = {}
    for pair in line.split():
        try:
            idx_s, cnt_s = pair.split(":")
            idx, cnt = int(idx_s), int(cnt_s)
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: malformed pair {pair!r}") from None
        if cnt < 1:
            raise CorpusError(f"{path}:{lineno}: count must be >= 1, got {cnt}")
        if not 0 <= idx < V:
            raise CorpusError(f"{path}:{lineno}: word index {idx} out of range [0, {V})")
        if idx in counts:
            raise CorpusError(f"{path}:{lineno}: duplicate word index {idx}")
        counts[idx] = cnt
    return Document(counts)


def load_vocab(path: str) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        tokens = tuple(line.rstrip("\n") for line in fh)
    return Vocab(tokens)


def load_corpus(vocab_path: str, docs_path: str, targets_path: str,
                target_type: str = REAL) -> Corpus:
    vocab = load_vocab(vocab_path)
    documents = []
    with open(docs_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            documents.append(_parse_doc_line(line, vocab.size, docs_path, lineno))
    targets = []
    with open(targets_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            try:
                targets.append(float(line.strip()))
            except ValueError:
                raise CorpusError(
                    f"{targets_path}:{lineno}: not a number: {line.strip()!r}"
                ) from None
    return Corpus(vocab, tuple(documents), np.array(targets, dtype=np.float64),
                  target_type)


def save_corpus(corpus: Corpus, vocab_path: str, docs_path: str,
                targets_path: str) -> None:
    with open(vocab_path, "w", encoding="utf-8") as fh:
        for tok in corpus.vocab.tokens:
            fh.write(tok + "\n")
    with open(docs_path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            fh.write(" ".join(f"{i}:{int(c)}"
                              for i, c in zip(doc.word_idx, doc.word_cnt)) + "\n")
    with open(targets_path, "w", encoding="utf-8") as fh:
        for y in corpus.targets:
            fh.write(repr(float(y)) + "\n")


def build_vocab_filter(corpus: Corpus, stopwords: set[str] = frozenset(),
                       max_doc_frac: float = 1.0,
                       min_doc_count: int = 0) -> np.ndarray:
    """Boolean keep-mask over the vocabulary.

    A word is dropped if it is a stopword, if its document frequency exceeds
    max_doc_frac * M, or if it appears in fewer than min_doc_count documents.
    Document frequency counts presence, not token count.
    """
    if not 0 < max_doc_frac <= 1:
        raise CorpusError("max_doc_frac must be in (0, 1]")
    if min_doc_count < 0:
        raise CorpusError("min_doc_count must be >= 0")
    V = corpus.vocab.size
    df = np.zeros(V, dtype=np.int64)
    for doc in corpus.documents:
        df[doc.word_idx] += 1
    mask = np.ones(V, dtype=bool)
    mask &= df <= max_doc_frac * corpus.num_documents
    mask &= df >= min_doc_count
    for v, tok in enumerate(corpus.vocab.tokens):
        if tok in stopwords:
            mask[v] = False
    return mask


def apply_vocab_mask(corpus: Corpus, mask: np.ndarray) -> Corpus:
    """Restrict the corpus to the retained vocabulary, reindexing words.

    Documents that lose all their words are kept as empty documents.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (corpus.vocab.size,):
        raise CorpusError("mask length must equal vocabulary size")
    if not mask.any():
        raise CorpusError("mask drops the entire vocabulary")
    new_index = np.full(corpus.vocab.size, -1, dtype=np.int64)
    new_index[mask] = np.arange(mask.sum())
    vocab = Vocab(tuple(t for t, keep in zip(corpus.vocab.tokens, mask) if keep))
    documents = []
    for doc in corpus.documents:
        counts = {int(new_index[i]): int(c)
                  for i, c in doc.counts.items() if mask[i]}
        documents.append(Document(counts))
    return Corpus(vocab, tuple(documents), corpus.targets.copy(), corpus.target_type)


def split_corpus(corpus: Corpus, fractions: tuple[float, float, float],
                 seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded random train/val/test partition over documents.

    Sizes are floor(frac * M) for val and test, remainder to train.
    """
    if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise CorpusError("fractions must be nonnegative and sum to 1")
    M = corpus.num_documents
    if M < 3 and all(f > 0 for f in fractions):
        raise CorpusError("need at least 3 documents for a three-way split")
    n_val = math.floor(fractions[1] * M)
    n_test = math.floor(fractions[2] * M)
    order = np.random.default_rng(seed).permutation(M)
    n_train = M - n_val - n_test
    parts = (order[:n_train], order[n_train:n_train + n_val],
             order[n_train + n_val:])

    def take(ids):
        return Corpus(corpus.vocab,
                      tuple(corpus.documents[i] for i in ids),
                      corpus.targets[ids],
                      corpus.target_type)

    return take(parts[0]), take(parts[1]), take(parts[2])


def load_stopwords(path: str) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}
