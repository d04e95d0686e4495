"""pf-sLDA: dual-channel supervised topic modeling with variational feature selection."""

from pfslda.corpus import Corpus, Document, Vocab, load_corpus, save_corpus
from pfslda.model import ModelConfig, ModelParams, VariationalState, init_params

__all__ = [
    "Corpus",
    "Document",
    "Vocab",
    "ModelConfig",
    "ModelParams",
    "VariationalState",
    "init_params",
    "load_corpus",
    "save_corpus",
]
