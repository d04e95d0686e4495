"""Shared helpers for the test suite."""

import numpy as np
import pytest

from pfslda.corpus import Corpus, Document, Vocab


def make_corpus(doc_counts, targets, V=None, target_type="real"):
    """Build a Corpus from a list of {index: count} dicts and a target list."""
    if V is None:
        V = 1 + max((i for d in doc_counts for i in d), default=0)
    vocab = Vocab(tuple(f"w{i}" for i in range(V)))
    docs = tuple(Document(dict(d)) for d in doc_counts)
    return Corpus(vocab, docs, np.asarray(targets, dtype=float), target_type)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
