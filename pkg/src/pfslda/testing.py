"""Helpers for the oracle checks: seeded tiny instances and flattening of all
unconstrained coordinates into one vector (for finite differences)."""

from __future__ import annotations

import numpy as np

from pfslda.corpus import Corpus, Document, Vocab
from pfslda.elbo import GradientBundle
from pfslda.model import (
    BINARY,
    PHI_SGD,
    REAL,
    ModelConfig,
    ModelParams,
    VariationalState,
    init_params,
)


def random_tiny_instance(rng: np.random.Generator, M: int = 3, V: int = 8,
                         K: int = 2, max_tokens: int = 8,
                         target_type: str = REAL, channel: bool = True,
                         p: float | None = None,
                         phi_mode: str = "closed"):
    """A small random corpus with randomized parameters and state."""
    docs = []
    for _ in range(M):
        n = int(rng.integers(1, max_tokens + 1))
        words = rng.integers(0, V, size=n)
        counts: dict[int, int] = {}
        for w in words:
            counts[int(w)] = counts.get(int(w), 0) + 1
        docs.append(Document(counts))
    if target_type == REAL:
        targets = rng.normal(size=M)
    else:
        targets = rng.integers(0, 2, size=M).astype(np.float64)
    vocab = Vocab(tuple(f"w{v}" for v in range(V)))
    corpus = Corpus(vocab, tuple(docs), targets, target_type)

    if p is None:
        p = float(rng.uniform(0.2, 0.8))
    config = ModelConfig(K=K, p=p, target_type=target_type,
                         seed=int(rng.integers(0, 2 ** 31)),
                         channel_enabled=channel, phi_mode=phi_mode)
    params, state = init_params(config, corpus)
    # perturb away from the symmetric start
    params.beta_logits += 0.5 * rng.normal(size=params.beta_logits.shape)
    params.pi_logits += 0.5 * rng.normal(size=params.pi_logits.shape)
    params.eta = rng.normal(size=K)
    params.log_delta = float(rng.normal(scale=0.3))
    state.varphi_logits = 0.5 * rng.normal(size=V)
    state.gamma *= np.exp(0.3 * rng.normal(size=state.gamma.shape))
    if phi_mode == PHI_SGD:
        state.phi_logits = [0.3 * rng.normal(size=pl.shape)
                            for pl in state.phi_logits]
        for d, pl in enumerate(state.phi_logits):
            z = pl - pl.max(axis=1, keepdims=True)
            e = np.exp(z)
            state.phi[d] = e / e.sum(axis=1, keepdims=True)
    return corpus, config, params, state


def pack_coordinates(params: ModelParams, state: VariationalState,
                     corpus: Corpus, config: ModelConfig,
                     gradient: GradientBundle | None = None):
    """Flatten every unconstrained coordinate (or the matching gradient)."""
    M = corpus.num_documents
    parts = []
    if gradient is None:
        parts = [params.beta_logits.ravel(), params.pi_logits, params.eta,
                 np.array([params.log_delta]), state.varphi_logits,
                 np.log(state.gamma).ravel()]
        if config.phi_mode == PHI_SGD:
            parts += [pl.ravel() for pl in state.phi_logits]
    else:
        parts = [gradient.d_beta_logits.ravel(), gradient.d_pi_logits,
                 gradient.d_eta, np.array([gradient.d_log_delta]),
                 gradient.d_varphi_logits, gradient.d_gamma.ravel()]
        if config.phi_mode == PHI_SGD:
            parts += [pl.ravel() for pl in gradient.d_phi_logits]
    layout = {
        "K": params.K, "V": params.V, "M": M,
        "phi_shapes": [state.phi[d].shape for d in range(M)]
        if config.phi_mode == PHI_SGD else None,
    }
    return np.concatenate(parts), layout


def unpack_into(x: np.ndarray, layout: dict, params: ModelParams,
                state: VariationalState, corpus: Corpus,
                config: ModelConfig):
    """Build fresh (params, state) copies with coordinates taken from x."""
    K, V, M = layout["K"], layout["V"], layout["M"]
    pos = 0

    def take(n):
        nonlocal pos
        out = x[pos:pos + n]
        pos += n
        return out

    p2 = params.copy()
    s2 = state.copy()
    p2.beta_logits = take(K * V).reshape(K, V).copy()
    p2.pi_logits = take(V).copy()
    p2.eta = take(K).copy()
    p2.log_delta = float(take(1)[0])
    s2.varphi_logits = take(V).copy()
    s2.gamma = np.exp(take(M * K).reshape(M, K))
    if config.phi_mode == PHI_SGD:
        s2.phi_logits = []
        s2.phi = []
        for shape in layout["phi_shapes"]:
            pl = take(shape[0] * shape[1]).reshape(shape).copy()
            s2.phi_logits.append(pl)
            z = pl - pl.max(axis=1, keepdims=True)
            e = np.exp(z)
            s2.phi.append(e / e.sum(axis=1, keepdims=True))
    assert pos == len(x)
    return p2, s2
