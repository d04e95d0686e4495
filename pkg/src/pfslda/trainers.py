"""Model fitting: mini-batch ADAM ascent on the bound, and closed-form
coordinate ascent sweeps.

Both trainers produce a (ModelParams, VariationalState, TrainTrace) triple.
The SGD path supports real and binary targets and is bit-deterministic for a
fixed seed; the coordinate-ascent path supports Gaussian targets only (its
eta/delta updates are least-squares forms) and guarantees a monotone bound
trace via backtracking on the gamma steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, polygamma

from pfslda.corpus import Corpus
from pfslda.elbo import compute_elbo, compute_gradients, update_phi_closed
from pfslda.model import (
    BINARY,
    PHI_CLOSED,
    REAL,
    ModelConfig,
    ModelParams,
    VariationalState,
    expected_log_theta,
    expected_theta,
    expected_theta_outer,
    init_params,
)

SGD = "sgd"
CA = "ca"


@dataclass
class TrainConfig:
    trainer: str = SGD
    epochs: int = 50
    batch_size: int = 100
    learning_rate: float = 0.025
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    ca_sweeps: int = 30
    gamma_steps: int = 25
    gamma_step_size: float = 0.1
    convergence_tol: float = 1e-5
    varphi_warmup_epochs: int = 10
    varphi_update: str = "adam"
    log_every: int = 50
    early_stopping: bool = False
    patience: int = 10

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")
        if self.varphi_update not in ("closed", "adam"):
            raise ValueError("varphi_update must be 'closed' or 'adam'")


@dataclass
class TraceRecord:
    step: int
    elbo: float
    val_metric: float | None = None


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, step: int, elbo: float, val_metric: float | None = None):
        if self.records and step <= self.records[-1].step:
            raise ValueError("trace steps must be strictly increasing")
        self.records.append(TraceRecord(step, elbo, val_metric))

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step,elbo,val_metric\n")
            for r in self.records:
                vm = "" if r.val_metric is None else repr(r.val_metric)
                fh.write(f"{r.step},{r.elbo!r},{vm}\n")


class _Adam:
    """ADAM ascent state for one parameter array; for row-subset updates
    (per-document gamma) bias correction uses per-row step counts."""

    def __init__(self, shape, lr, b1, b2, eps, per_row=False):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = np.zeros(shape[0], dtype=np.int64) if per_row else 0

    def update(self, grad, rows=None):
        """Return the ascent increment for the given gradient."""
        if rows is None:
            self.t += 1
            t = self.t
            self.m = self.b1 * self.m + (1 - self.b1) * grad
            self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
            mhat = self.m / (1 - self.b1 ** t)
            vhat = self.v / (1 - self.b2 ** t)
            return self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.t[rows] += 1
        t = self.t[rows][:, None]
        self.m[rows] = self.b1 * self.m[rows] + (1 - self.b1) * grad
        self.v[rows] = self.b2 * self.v[rows] + (1 - self.b2) * grad ** 2
        mhat = self.m[rows] / (1 - self.b1 ** t)
        vhat = self.v[rows] / (1 - self.b2 ** t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _validate(model_config: ModelConfig):
    if model_config.channel_enabled and not 0.0 < model_config.p < 1.0:
        raise ValueError("channel-enabled training requires p in (0, 1); "
                         "disable the channel for the plain sLDA baseline")


def _val_metric(val: Corpus, params: ModelParams, config: ModelConfig) -> float:
    from pfslda.evaluation import auc, rmse
    from pfslda.prediction import PredictConfig, predict_target

    pcfg = PredictConfig()
    scores = np.array([predict_target(doc, params, config, pcfg)
                       for doc in val.documents])
    if config.target_type == REAL:
        return rmse(scores, val.targets)
    return auc(scores, val.targets)


def train_sgd(train: Corpus, val: Corpus | None, model_config: ModelConfig,
              train_config: TrainConfig
              ) -> tuple[ModelParams, VariationalState, TrainTrace]:
    """Mini-batch ADAM ascent on the bound over all unconstrained coordinates.

    Each step refreshes the batch's z responsibilities to their closed-form
    optimum (unless phi_mode="sgd"), then applies ADAM to the topic logits,
    GLM parameters, global word-channel logits, and the batch documents'
    log-gamma coordinates.
    """
    _validate(model_config)
    if train.num_documents == 0:
        raise ValueError("training corpus is empty")
    params, state = init_params(model_config, train, seed=train_config.seed)
    M = train.num_documents
    K = model_config.K
    tc = train_config
    rng = np.random.default_rng(tc.seed + 1)

    opts = {
        "beta": _Adam(params.beta_logits.shape, tc.learning_rate,
                      tc.adam_beta1, tc.adam_beta2, tc.adam_eps),
        "pi": _Adam(params.pi_logits.shape, tc.learning_rate,
                    tc.adam_beta1, tc.adam_beta2, tc.adam_eps),
        "eta": _Adam(params.eta.shape, tc.learning_rate,
                     tc.adam_beta1, tc.adam_beta2, tc.adam_eps),
        "log_delta": _Adam((1,), tc.learning_rate,
                           tc.adam_beta1, tc.adam_beta2, tc.adam_eps),
        "varphi": _Adam(state.varphi_logits.shape, tc.learning_rate,
                        tc.adam_beta1, tc.adam_beta2, tc.adam_eps),
        "gamma": _Adam((M, K), tc.learning_rate,
                       tc.adam_beta1, tc.adam_beta2, tc.adam_eps,
                       per_row=True),
    }
    if model_config.phi_mode != PHI_CLOSED:
        opts["phi"] = [
            _Adam(state.phi_logits[d].shape, tc.learning_rate,
                  tc.adam_beta1, tc.adam_beta2, tc.adam_eps)
            for d in range(M)
        ]

    trace = TrainTrace()
    all_ids = np.arange(M)
    step = 0
    prev_epoch_elbo = None
    best_metric = None
    stale = 0
    stop = False

    for _epoch in range(tc.epochs):
        order = rng.permutation(M)
        for start in range(0, M, tc.batch_size):
            ids = order[start:start + tc.batch_size]
            grads = compute_gradients(train, ids, params, state, model_config)

            params.beta_logits += opts["beta"].update(grads.d_beta_logits)
            params.eta += opts["eta"].update(grads.d_eta)
            if model_config.target_type == REAL:
                params.log_delta += float(
                    opts["log_delta"].update(np.array([grads.d_log_delta]))[0])
            if model_config.channel_enabled:
                params.pi_logits += opts["pi"].update(grads.d_pi_logits)
                # The selector is held at its initial value during warmup
                # because saturation is a one-way door: once a word
                # saturates on the wrong channel, the losing channel stops
                # receiving gradient for it and rarely recovers. After
                # warmup it takes joint per-batch steps by default;
                # varphi_update="closed" instead refreshes it once per
                # epoch from its full-corpus closed form (epoch loop).
                if (tc.varphi_update == "adam"
                        and _epoch >= tc.varphi_warmup_epochs):
                    state.varphi_logits += opts["varphi"].update(
                        grads.d_varphi_logits)
            log_gamma = np.log(state.gamma[ids])
            log_gamma += opts["gamma"].update(grads.d_gamma, rows=ids)
            state.gamma[ids] = np.exp(log_gamma)
            if grads.d_phi_logits is not None:
                for b, d in enumerate(ids):
                    state.phi_logits[d] += opts["phi"][d].update(
                        grads.d_phi_logits[b])
                    z = state.phi_logits[d]
                    z = z - z.max(axis=1, keepdims=True)
                    e = np.exp(z)
                    state.phi[d] = e / e.sum(axis=1, keepdims=True)
            step += 1

            if step % tc.log_every == 0:
                elbo = compute_elbo(train, ids, params, state,
                                    model_config).total
                metric = None
                if val is not None:
                    metric = _val_metric(val, params, model_config)
                    if tc.early_stopping:
                        better = (best_metric is None
                                  or (metric < best_metric
                                      if model_config.target_type == REAL
                                      else metric > best_metric))
                        if better:
                            best_metric, stale = metric, 0
                        else:
                            stale += 1
                            if stale >= tc.patience:
                                stop = True
                trace.append(step, elbo, metric)
            if stop:
                break

        if model_config.phi_mode == PHI_CLOSED:
            update_phi_closed(train, all_ids, params, state, model_config)
        if (model_config.channel_enabled
                and tc.varphi_update == "closed"
                and _epoch >= tc.varphi_warmup_epochs):
            ca_update_varphi(train, params, state, model_config)
        epoch_elbo = compute_elbo(train, all_ids, params, state,
                                  model_config).total
        if prev_epoch_elbo is not None:
            rel = abs(epoch_elbo - prev_epoch_elbo) / max(abs(prev_epoch_elbo),
                                                          1.0)
            if rel < tc.convergence_tol:
                break
        prev_epoch_elbo = epoch_elbo
        if stop:
            break

    return params, state, trace


# ---------------------------------------------------------------------------
# coordinate-ascent updates
# ---------------------------------------------------------------------------

def ca_update_phi(corpus: Corpus, d: int, params: ModelParams,
                  state: VariationalState, config: ModelConfig) -> np.ndarray:
    """Closed-form z responsibilities for one document."""
    update_phi_closed(corpus, [d], params, state, config)
    return state.phi[d]


def _gamma_objective(gamma: np.ndarray, S: np.ndarray, alpha: np.ndarray,
                     y: float, params: ModelParams,
                     config: ModelConfig) -> float:
    """Document-local bound terms that depend on gamma."""
    elt = expected_log_theta(gamma)
    g0 = gamma.sum()
    val = float(((alpha - 1.0) * elt).sum() + (S * elt).sum())
    val -= float(gammaln(g0) - gammaln(gamma).sum()
                 + ((gamma - 1.0) * elt).sum())
    m = gamma / g0
    u = float(m @ params.eta)
    q = float(m @ (params.eta ** 2))
    var_u = (q - u ** 2) / (g0 + 1.0)
    if config.target_type == REAL:
        val += -(y ** 2 - 2.0 * y * u + var_u + u ** 2) / (2.0 * params.delta)
    else:
        s = 2.0 * y - 1.0
        a = expit(s * u)
        val += float(np.log(a)) - 0.5 * a * (1.0 - a) * var_u
    return val


def _gamma_gradient(gamma: np.ndarray, S: np.ndarray, alpha: np.ndarray,
                    y: float, params: ModelParams,
                    config: ModelConfig) -> np.ndarray:
    """Gradient of the document-local bound in log-gamma coordinates."""
    g0 = gamma.sum()
    resid = alpha + S - gamma
    grad = polygamma(1, gamma) * resid - polygamma(1, g0) * resid.sum()
    eta = params.eta
    m = gamma / g0
    u = float(m @ eta)
    q = float(m @ (eta ** 2))
    du = (eta - u) / g0
    dq = (eta ** 2 - q) / g0
    dvar = (dq - 2.0 * u * du) / (g0 + 1.0) - (q - u ** 2) / (g0 + 1.0) ** 2
    if config.target_type == REAL:
        d_quad = -2.0 * y * du + dvar + 2.0 * u * du
        grad += -d_quad / (2.0 * params.delta)
    else:
        s = 2.0 * y - 1.0
        a = expit(s * u)
        g = a * (1.0 - a)
        var_u = (q - u ** 2) / (g0 + 1.0)
        grad += s * (1.0 - a) * du \
            - 0.5 * (s * g * (1.0 - 2.0 * a) * var_u) * du - 0.5 * g * dvar
    return grad * gamma


def ca_update_gamma(corpus: Corpus, d: int, params: ModelParams,
                    state: VariationalState, config: ModelConfig,
                    steps: int = 25, step_size: float = 0.1) -> np.ndarray:
    """Backtracking gradient ascent on one document's gamma (log coordinates).

    Each step is accepted only if the document-local bound does not decrease;
    on a decrease or a nonfinite value the step is halved, up to 10 times.
    """
    doc = corpus.documents[d]
    S = state.phi[d].T @ doc.word_cnt if len(doc.word_idx) else \
        np.zeros(config.K)
    alpha = config.alpha
    y = corpus.targets[d]
    gamma = state.gamma[d].copy()
    obj = _gamma_objective(gamma, S, alpha, y, params, config)
    for _ in range(steps):
        grad = _gamma_gradient(gamma, S, alpha, y, params, config)
        s = step_size
        accepted = False
        for _try in range(10):
            cand = gamma * np.exp(s * grad)
            if np.isfinite(cand).all() and (cand > 0).all():
                cand_obj = _gamma_objective(cand, S, alpha, y, params, config)
                if math.isfinite(cand_obj) and cand_obj >= obj - 1e-12:
                    gamma, obj = cand, cand_obj
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            break
    state.gamma[d] = gamma
    return gamma


def ca_update_varphi(corpus: Corpus, params: ModelParams,
                     state: VariationalState,
                     config: ModelConfig) -> np.ndarray:
    """Per-word closed-form channel probability given everything else fixed.

    varphi_j = sigmoid(Omega_j / total count of word j); words with zero
    corpus count are left unchanged (no evidence).
    """
    if not config.channel_enabled or not 0.0 < params.p < 1.0:
        raise ValueError("varphi update requires the channel and p in (0, 1)")
    V = params.V
    log_beta_t = np.log(params.beta).T
    log_pi = np.log(params.pi)
    gap = math.log(params.p) - math.log1p(-params.p)
    omega = np.zeros(V)
    total = np.zeros(V)
    for d, doc in enumerate(corpus.documents):
        if not len(doc.word_idx):
            continue
        bv = np.einsum("nk,nk->n", state.phi[d], log_beta_t[doc.word_idx])
        np.add.at(omega, doc.word_idx,
                  doc.word_cnt * (bv - log_pi[doc.word_idx] + gap))
        np.add.at(total, doc.word_idx, doc.word_cnt)
    seen = total > 0
    state.varphi_logits[seen] = omega[seen] / total[seen]
    return state.varphi


def ca_update_pi(corpus: Corpus, params: ModelParams,
                 state: VariationalState) -> np.ndarray:
    """pi_j proportional to (1 - varphi_j) * corpus count of word j."""
    total = np.zeros(params.V)
    for doc in corpus.documents:
        np.add.at(total, doc.word_idx, doc.word_cnt)
    weight = (1.0 - state.varphi) * total
    norm = weight.sum()
    if norm <= 0:
        raise ValueError("pi update undefined: every word is fully relevant")
    pi = weight / norm
    # floor keeps log pi finite in the next E step; zero-weight entries carry
    # zero bound weight so the elbo effect is below tolerance
    params.pi_logits = np.log(np.maximum(pi, 1e-12))
    return pi


def ca_update_beta(corpus: Corpus, params: ModelParams,
                   state: VariationalState,
                   config: ModelConfig) -> np.ndarray:
    """beta_kj proportional to sum_d varphi_j * phi_djk * count_dj; rows with
    zero total weight are left unchanged."""
    K, V = params.K, params.V
    W = np.zeros((K, V))
    for d, doc in enumerate(corpus.documents):
        if not len(doc.word_idx):
            continue
        contrib = doc.word_cnt[:, None] * state.phi[d]      # (n, K)
        np.add.at(W.T, doc.word_idx, contrib)
    if config.channel_enabled:
        W *= state.varphi[None, :]
    beta = params.beta
    for k in range(K):
        row_sum = W[k].sum()
        if row_sum > 0:
            beta[k] = np.maximum(W[k] / row_sum, 1e-12)
            beta[k] /= beta[k].sum()
    params.beta_logits = np.log(beta)
    return beta


def ca_update_eta_delta(corpus: Corpus, params: ModelParams,
                        state: VariationalState,
                        target_type: str) -> tuple[np.ndarray, float]:
    """Least-squares GLM refit from the Dirichlet moments of every document;
    Gaussian targets only."""
    if target_type != REAL:
        raise ValueError("coordinate-ascent GLM update is Gaussian-only; "
                         "use the SGD trainer for binary targets")
    K = params.K
    A = np.zeros((K, K))
    b = np.zeros(K)
    moments = []
    for d in range(corpus.num_documents):
        m = expected_theta(state.gamma[d])
        outer = expected_theta_outer(state.gamma[d])
        moments.append((m, outer))
        A += outer
        b += corpus.targets[d] * m
    eta = np.linalg.solve(A + 1e-6 * np.eye(K), b)
    quad = 0.0
    for d, (m, outer) in enumerate(moments):
        y = corpus.targets[d]
        quad += y ** 2 - 2.0 * y * float(eta @ m) + float(eta @ outer @ eta)
    delta = max(quad / corpus.num_documents, 1e-6)
    params.eta = eta
    params.log_delta = math.log(delta)
    return eta, delta


def train_coordinate_ascent(train: Corpus, model_config: ModelConfig,
                            train_config: TrainConfig
                            ) -> tuple[ModelParams, VariationalState, TrainTrace]:
    """Alternating E (phi, gamma, varphi) and M (pi, beta, eta/delta) sweeps.

    Gaussian targets only; the per-sweep bound is non-decreasing because each
    update is either a closed-form coordinate optimum or a backtracked ascent.
    """
    _validate(model_config)
    if model_config.target_type != REAL:
        raise ValueError("coordinate ascent supports real targets only")
    if train.num_documents == 0:
        raise ValueError("training corpus is empty")
    params, state = init_params(model_config, train, seed=train_config.seed)
    tc = train_config
    all_ids = np.arange(train.num_documents)
    trace = TrainTrace()
    prev = None

    for sweep in range(1, tc.ca_sweeps + 1):
        for d in range(train.num_documents):
            ca_update_phi(train, d, params, state, model_config)
            ca_update_gamma(train, d, params, state, model_config,
                            steps=tc.gamma_steps,
                            step_size=tc.gamma_step_size)
        if model_config.channel_enabled:
            ca_update_varphi(train, params, state, model_config)
            ca_update_pi(train, params, state)
        ca_update_beta(train, params, state, model_config)
        ca_update_eta_delta(train, params, state, model_config.target_type)
        elbo = compute_elbo(train, all_ids, params, state, model_config).total
        trace.append(sweep, elbo)
        if prev is not None and abs(elbo - prev) / max(abs(prev), 1.0) \
                < tc.convergence_tol:
            break
        prev = elbo

    return params, state, trace
