"""Evidence lower bound and its exact gradients in unconstrained coordinates.

Terms are summed over a batch of documents. Per-document z responsibilities
(phi) are, by default, refreshed to their closed-form coordinate optimum
before each gradient evaluation; because that refresh is an inner argmax of
the bound, gradients taken with phi held fixed equal the full gradients
(envelope argument). The ablation mode phi_mode="sgd" instead treats phi as
softmax-parameterized free variables and returns their gradients too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, log_expit, polygamma

from pfslda.corpus import Corpus
from pfslda.model import (
    BINARY,
    PHI_CLOSED,
    PHI_SGD,
    REAL,
    ModelConfig,
    ModelParams,
    VariationalState,
    expected_log_theta,
)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ElboBreakdown:
    """Bound terms for one batch. Entropy fields hold -E_q[log q] (entropies),
    so total = model terms + entropy terms."""

    log_p_theta: float
    log_p_z: float
    log_p_w: float
    log_p_xi: float
    log_p_y: float
    entropy_theta: float
    entropy_z: float
    entropy_xi: float

    @property
    def total(self) -> float:
        return (self.log_p_theta + self.log_p_z + self.log_p_w + self.log_p_xi
                + self.log_p_y + self.entropy_theta + self.entropy_z
                + self.entropy_xi)


@dataclass
class GradientBundle:
    d_beta_logits: np.ndarray          # (K, V)
    d_pi_logits: np.ndarray            # (V,)
    d_eta: np.ndarray                  # (K,)
    d_log_delta: float
    d_gamma: np.ndarray                # (B, K), in log-gamma coordinates
    d_varphi_logits: np.ndarray        # (V,)
    d_phi_logits: list[np.ndarray] | None = None  # phi_mode=sgd only


def _check_coverage(doc_ids, state: VariationalState) -> None:
    M = state.gamma.shape[0]
    for d in doc_ids:
        if not 0 <= d < M or d >= len(state.phi) or state.phi[d] is None:
            raise ValueError(f"document {d} is not covered by the variational state")


def _check_p(config: ModelConfig, params: ModelParams) -> None:
    if config.channel_enabled and not 0.0 < params.p < 1.0:
        raise ValueError("channel-enabled bound requires p strictly inside (0, 1)")


class _Batch:
    """Padded (B, L) views of a document batch; pads carry zero counts."""

    def __init__(self, corpus: Corpus, doc_ids, state: VariationalState):
        docs = [corpus.documents[d] for d in doc_ids]
        K = state.gamma.shape[1]
        B = len(docs)
        L = max((len(d.word_idx) for d in docs), default=0) or 1
        self.doc_ids = list(doc_ids)
        self.idx = np.zeros((B, L), dtype=np.int64)
        self.cnt = np.zeros((B, L))
        self.phi = np.full((B, L, K), 1.0 / K)
        for b, (d, doc) in enumerate(zip(doc_ids, docs)):
            n = len(doc.word_idx)
            self.idx[b, :n] = doc.word_idx
            self.cnt[b, :n] = doc.word_cnt
            self.phi[b, :n] = state.phi[d]
        self.gamma = state.gamma[self.doc_ids]
        self.y = corpus.targets[self.doc_ids]


def _xlogx(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x * np.log(np.maximum(x, 1e-300)), 0.0)


def _glm_moments(gamma: np.ndarray, eta: np.ndarray):
    """Per-document (m, g0, u, q, var_u) for the GLM head."""
    g0 = gamma.sum(axis=1)
    m = gamma / g0[:, None]
    u = m @ eta
    q = m @ (eta ** 2)
    var_u = (q - u ** 2) / (g0 + 1.0)
    return m, g0, u, q, var_u


def update_phi_closed(corpus: Corpus, doc_ids, params: ModelParams,
                      state: VariationalState, config: ModelConfig) -> None:
    """Set phi for the given documents to its closed-form coordinate optimum:
    phi_nk proportional to beta_{k,v}^{varphi_v} * exp(E[log theta_k])."""
    log_beta_t = np.log(params.beta).T      # (V, K)
    varphi = state.varphi
    for d in doc_ids:
        doc = corpus.documents[d]
        elt = expected_log_theta(state.gamma[d])
        lb = log_beta_t[doc.word_idx]       # (n, K)
        if config.channel_enabled:
            logits = varphi[doc.word_idx][:, None] * lb + elt[None, :]
        else:
            logits = lb + elt[None, :]
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        state.phi[d] = e / e.sum(axis=1, keepdims=True)


def compute_elbo(corpus: Corpus, doc_ids, params: ModelParams,
                 state: VariationalState, config: ModelConfig) -> ElboBreakdown:
    """Evaluate all bound terms over the given documents."""
    _check_coverage(doc_ids, state)
    _check_p(config, params)
    bt = _Batch(corpus, doc_ids, state)
    alpha = config.alpha
    B = len(bt.doc_ids)

    elt = expected_log_theta(bt.gamma)                      # (B, K)
    log_beta = np.log(params.beta)
    lb = log_beta.T[bt.idx]                                 # (B, L, K)
    bv = np.einsum("blk,blk->bl", bt.phi, lb)

    log_p_theta = B * (gammaln(alpha.sum()) - gammaln(alpha).sum()) \
        + float(((alpha - 1.0) * elt).sum())
    log_p_z = float((bt.cnt * np.einsum("blk,bk->bl", bt.phi, elt)).sum())

    if config.channel_enabled:
        log_pi = np.log(params.pi)
        vph = state.varphi[bt.idx]
        log_p_w = float((bt.cnt * (vph * bv + (1.0 - vph) * log_pi[bt.idx])).sum())
        log_p_xi = float((bt.cnt * (vph * math.log(params.p)
                                    + (1.0 - vph) * math.log1p(-params.p))).sum())
        entropy_xi = -float((bt.cnt * (_xlogx(vph) + _xlogx(1.0 - vph))).sum())
    else:
        log_p_w = float((bt.cnt * bv).sum())
        log_p_xi = 0.0
        entropy_xi = 0.0

    g0 = bt.gamma.sum(axis=1)
    entropy_theta = -float((gammaln(g0).sum() - gammaln(bt.gamma).sum()
                            + ((bt.gamma - 1.0) * elt).sum()))
    entropy_z = -float((bt.cnt * _xlogx(bt.phi).sum(axis=2)).sum())

    m, _, u, q, var_u = _glm_moments(bt.gamma, params.eta)
    if config.target_type == REAL:
        delta = params.delta
        quad = bt.y ** 2 - 2.0 * bt.y * u + var_u + u ** 2
        log_p_y = float((-0.5 * (LOG_2PI + params.log_delta)
                         - quad / (2.0 * delta)).sum())
    else:
        s = 2.0 * bt.y - 1.0
        a = expit(s * u)
        log_p_y = float((log_expit(s * u)
                         - 0.5 * a * (1.0 - a) * var_u).sum())

    return ElboBreakdown(log_p_theta, log_p_z, log_p_w, log_p_xi, log_p_y,
                         entropy_theta, entropy_z, entropy_xi)


def compute_gradients(corpus: Corpus, doc_ids, params: ModelParams,
                      state: VariationalState,
                      config: ModelConfig) -> GradientBundle:
    """Exact gradient of the batch bound with respect to every unconstrained
    coordinate. In phi_mode="closed" the per-document phi are first refreshed
    to their coordinate optimum (mutating state)."""
    _check_coverage(doc_ids, state)
    _check_p(config, params)
    if config.phi_mode == PHI_CLOSED:
        update_phi_closed(corpus, doc_ids, params, state, config)
    bt = _Batch(corpus, doc_ids, state)
    K, V = params.K, params.V
    alpha = config.alpha
    channel = config.channel_enabled

    beta = params.beta
    log_beta = np.log(beta)
    lb = log_beta.T[bt.idx]                                 # (B, L, K)
    bv = np.einsum("blk,blk->bl", bt.phi, lb)
    elt = expected_log_theta(bt.gamma)
    varphi = state.varphi
    vph = varphi[bt.idx] if channel else np.ones_like(bt.cnt)

    # gamma (log coordinates): standard LDA component plus the GLM component.
    S = np.einsum("bl,blk->bk", bt.cnt, bt.phi)
    resid = alpha[None, :] + S - bt.gamma
    trig = polygamma(1, bt.gamma)
    trig0 = polygamma(1, bt.gamma.sum(axis=1))
    d_gamma = trig * resid - trig0[:, None] * resid.sum(axis=1, keepdims=True)

    m, g0, u, q, var_u = _glm_moments(bt.gamma, params.eta)
    eta = params.eta
    du = (eta[None, :] - u[:, None]) / g0[:, None]          # (B, K)
    dq = (eta[None, :] ** 2 - q[:, None]) / g0[:, None]
    dvar = (dq - 2.0 * u[:, None] * du) / (g0[:, None] + 1.0) \
        - ((q - u ** 2) / (g0 + 1.0) ** 2)[:, None]
    if config.target_type == REAL:
        delta = params.delta
        d_quad = -2.0 * bt.y[:, None] * du + dvar + 2.0 * u[:, None] * du
        d_gamma += -d_quad / (2.0 * delta)
        quad = bt.y ** 2 - 2.0 * bt.y * u + var_u + u ** 2
        d_eta = ((bt.y[:, None] * m
                  - ((m * eta[None, :] - m * u[:, None]) / (g0[:, None] + 1.0)
                     + m * u[:, None])).sum(axis=0)) / delta
        d_log_delta = float((-0.5 + quad / (2.0 * delta)).sum())
    else:
        s = 2.0 * bt.y - 1.0
        a = expit(s * u)
        g = a * (1.0 - a)
        gprime = s * g * (1.0 - 2.0 * a)
        d_gamma += (s * (1.0 - a))[:, None] * du \
            - 0.5 * (gprime * var_u)[:, None] * du - 0.5 * g[:, None] * dvar
        dvar_eta = (2.0 * m * eta[None, :] - 2.0 * u[:, None] * m) \
            / (g0[:, None] + 1.0)
        d_eta = ((s * (1.0 - a))[:, None] * m
                 - 0.5 * (gprime * var_u)[:, None] * m
                 - 0.5 * g[:, None] * dvar_eta).sum(axis=0)
        d_log_delta = 0.0
    d_gamma *= bt.gamma  # chain rule into log-gamma coordinates

    # topic logits
    w_blk = bt.cnt * vph
    W = np.zeros((K, V))
    flat_idx = bt.idx.ravel()
    for k in range(K):
        np.add.at(W[k], flat_idx, (w_blk * bt.phi[:, :, k]).ravel())
    d_beta_logits = W - beta * W.sum(axis=1, keepdims=True)

    if channel:
        pi = params.pi
        U = np.zeros(V)
        np.add.at(U, flat_idx, (bt.cnt * (1.0 - vph)).ravel())
        d_pi_logits = U - pi * U.sum()

        log_pi = np.log(pi)
        prior_gap = math.log(params.p) - math.log1p(-params.p)
        # log(vph) - log(1 - vph) is exactly the stored logit; using it keeps
        # the gradient finite when vph saturates in floating point.
        contrib = bt.cnt * (bv - log_pi[bt.idx] + prior_gap
                            - state.varphi_logits[bt.idx])
        acc = np.zeros(V)
        np.add.at(acc, flat_idx, contrib.ravel())
        d_varphi_logits = acc * expit(state.varphi_logits) \
            * expit(-state.varphi_logits)
    else:
        d_pi_logits = np.zeros(V)
        d_varphi_logits = np.zeros(V)

    d_phi_logits = None
    if config.phi_mode == PHI_SGD:
        gphi = bt.cnt[:, :, None] * (elt[:, None, :]
                                     + vph[:, :, None] * lb
                                     - np.log(bt.phi) - 1.0)
        inner = np.einsum("blk,blk->bl", bt.phi, gphi)
        ds = bt.phi * (gphi - inner[:, :, None])
        d_phi_logits = []
        for b, d in enumerate(bt.doc_ids):
            n = len(corpus.documents[d].word_idx)
            d_phi_logits.append(ds[b, :n].copy())

    return GradientBundle(d_beta_logits, d_pi_logits, d_eta, d_log_delta,
                          d_gamma, d_varphi_logits, d_phi_logits)


@dataclass
class BoundTerm:
    value: float
    stderr: float
    neg_inf: bool = False


@dataclass
class Eq1Diagnostic:
    prediction_term: BoundTerm
    word_term: BoundTerm
    pi_term: BoundTerm

    @property
    def total(self) -> float:
        return (self.prediction_term.value + self.word_term.value
                + self.pi_term.value)

    @property
    def stderr(self) -> float:
        return math.hypot(self.prediction_term.stderr, self.word_term.stderr)


def eq1_bound_diagnostic(corpus: Corpus, params: ModelParams,
                         config: ModelConfig, mc_samples: int,
                         seed: int) -> Eq1Diagnostic:
    """Monte-Carlo estimate of the three-term likelihood lower bound:
    a prediction term (expectation over channel switches), a word term
    weighted by p, and an additional-topic term weighted by 1 - p.

    Switch samples are capped at 200 per document; the inner and outer
    theta integrals use mc_samples draws.
    """
    if not config.channel_enabled:
        raise ValueError("diagnostic requires the channel to be enabled")
    if not 0.0 < params.p < 1.0:
        raise ValueError("diagnostic requires p strictly inside (0, 1)")
    rng = np.random.default_rng(seed)
    p = params.p
    beta = params.beta
    pi = params.pi
    alpha = config.alpha
    delta = params.delta
    n_xi = min(int(mc_samples), 200)

    pred_vals = []
    word_vals = []
    pi_total = 0.0
    neg_inf = False
    theta = rng.dirichlet(alpha, size=mc_samples)            # (S, K)
    mix_all = theta @ beta                                   # (S, V)

    for d, doc in enumerate(corpus.documents):
        y = corpus.targets[d]
        tokens = np.repeat(doc.word_idx, doc.word_cnt.astype(int))
        n = len(tokens)

        # word term: p * E_theta[log p_beta(w | theta)]
        logs = np.log(mix_all[:, tokens]).sum(axis=1) if n else np.zeros(mc_samples)
        word_vals.append(logs)

        # additional-topic term: (1 - p) * log p_pi(w), exact
        if n:
            pv = pi[tokens]
            if (pv == 0).any():
                neg_inf = True
            else:
                pi_total += float(np.log(pv).sum())

        # prediction term: E_xi[log p_beta(y | relevant words)]
        if config.target_type == REAL:
            log_like = -0.5 * (LOG_2PI + params.log_delta) \
                - (y - theta @ params.eta) ** 2 / (2.0 * delta)
        else:
            log_like = log_expit((2.0 * y - 1.0) * (theta @ params.eta))
        doc_pred = np.empty(n_xi)
        for s in range(n_xi):
            keep = tokens[rng.random(n) < p]
            if len(keep):
                logw = np.log(mix_all[:, keep]).sum(axis=1)
                logw -= logw.max()
            else:
                logw = np.zeros(mc_samples)
            weights = np.exp(logw)
            num = float((weights * np.exp(log_like - log_like.max())).sum())
            doc_pred[s] = (math.log(num) + log_like.max()
                           - math.log(weights.sum()))
        pred_vals.append(doc_pred)

    pred = np.sum([v.mean() for v in pred_vals])
    pred_se = math.sqrt(sum(v.var(ddof=1) / len(v) for v in pred_vals))
    word_samples = np.sum(word_vals, axis=0)                 # (S,)
    word = p * float(word_samples.mean())
    word_se = p * float(word_samples.std(ddof=1)) / math.sqrt(mc_samples)
    pi_val = -math.inf if neg_inf else (1.0 - p) * pi_total

    return Eq1Diagnostic(
        BoundTerm(float(pred), pred_se),
        BoundTerm(word, word_se),
        BoundTerm(pi_val, 0.0, neg_inf),
    )
