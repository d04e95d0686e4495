"""Model parameters, variational state, initialization, and checkpoints.

Constrained quantities live in unconstrained coordinates: topic rows and the
additional topic are softmax-parameterized logits, the Gaussian noise scale is
stored as a log, and the per-word channel probabilities are sigmoid logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, psi

REAL = "real"
BINARY = "binary"

PHI_CLOSED = "closed"
PHI_SGD = "sgd"


def softmax_simplex(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def expected_log_theta(gamma: np.ndarray) -> np.ndarray:
    """E[log theta_k] under Dirichlet(gamma): psi(gamma_k) - psi(sum gamma)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if (gamma <= 0).any():
        raise ValueError("gamma entries must be positive")
    return psi(gamma) - psi(gamma.sum(axis=-1, keepdims=True))


def expected_theta(gamma: np.ndarray) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=np.float64)
    return gamma / gamma.sum(axis=-1, keepdims=True)


def expected_theta_outer(gamma: np.ndarray) -> np.ndarray:
    """Second moment E[theta theta^T] under Dirichlet(gamma)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 1:
        raise ValueError("expected a single gamma vector")
    if (gamma <= 0).any():
        raise ValueError("gamma entries must be positive")
    g0 = gamma.sum()
    m = gamma / g0
    return (np.diag(m) - np.outer(m, m)) / (g0 + 1.0) + np.outer(m, m)


@dataclass
class ModelConfig:
    K: int
    p: float = 0.25
    target_type: str = REAL
    alpha: np.ndarray | None = None
    seed: int = 0
    channel_enabled: bool = True
    phi_mode: str = PHI_CLOSED

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.p <= 1:
            raise ValueError("p must be in (0, 1]")
        if self.alpha is None:
            self.alpha = np.ones(self.K)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (self.K,) or (self.alpha <= 0).any():
            raise ValueError("alpha must be a positive K-vector")
        if self.target_type not in (REAL, BINARY):
            raise ValueError(f"unknown target_type {self.target_type!r}")
        if self.phi_mode not in (PHI_CLOSED, PHI_SGD):
            raise ValueError(f"unknown phi_mode {self.phi_mode!r}")


@dataclass
class ModelParams:
    beta_logits: np.ndarray   # (K, V)
    pi_logits: np.ndarray     # (V,)
    eta: np.ndarray           # (K,)
    log_delta: float
    p: float

    @property
    def K(self) -> int:
        return self.beta_logits.shape[0]

    @property
    def V(self) -> int:
        return self.beta_logits.shape[1]

    @property
    def beta(self) -> np.ndarray:
        return softmax_simplex(self.beta_logits, axis=1)

    @property
    def pi(self) -> np.ndarray:
        return softmax_simplex(self.pi_logits)

    @property
    def delta(self) -> float:
        return float(np.exp(self.log_delta))

    def copy(self) -> "ModelParams":
        return ModelParams(self.beta_logits.copy(), self.pi_logits.copy(),
                           self.eta.copy(), self.log_delta, self.p)


@dataclass
class VariationalState:
    gamma: np.ndarray                 # (M, K), positive
    phi: list[np.ndarray]             # per document: (n_distinct, K) simplices
    varphi_logits: np.ndarray         # (V,)
    phi_logits: list[np.ndarray] | None = None  # only for phi_mode=sgd

    @property
    def varphi(self) -> np.ndarray:
        return expit(self.varphi_logits)

    def copy(self) -> "VariationalState":
        return VariationalState(
            self.gamma.copy(),
            [p.copy() for p in self.phi],
            self.varphi_logits.copy(),
            None if self.phi_logits is None else [p.copy() for p in self.phi_logits],
        )


def init_params(config: ModelConfig, corpus,
                seed: int | None = None) -> tuple[ModelParams, VariationalState]:
    """Symmetry-breaking initialization.

    Topic logits get log(1 + Exp(1)) noise, GLM weights small Gaussian noise,
    gamma_dk = alpha_k + N_d / K, phi uniform, varphi logits zero (phi_v = 0.5).
    """
    V = corpus.vocab.size
    if V < 1:
        raise ValueError("V must be >= 1")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    K = config.K
    # Both channels start at the smoothed empirical word frequencies, with
    # exponential noise on top to break symmetry. Starting from a flat 1/V
    # instead hands every rare word a spurious likelihood advantage in the
    # topic channel (1/V can be an order of magnitude above a rare word's
    # actual rate), and the selector saturates on that head start before
    # the topic logits can decay, locking the word into the wrong channel.
    counts = np.ones(V)
    for doc in corpus.documents:
        counts[doc.word_idx] += doc.word_cnt
    log_freq = np.log(counts / counts.sum())
    beta_logits = log_freq[None, :] + 0.01 * np.log1p(
        rng.exponential(1.0, size=(K, V)))
    pi_logits = log_freq + 0.01 * np.log1p(rng.exponential(1.0, size=V))
    eta = 0.1 * rng.normal(size=K)
    params = ModelParams(beta_logits, pi_logits, eta, 0.0, config.p)

    lengths = np.array([doc.total_tokens for doc in corpus.documents],
                       dtype=np.float64)
    gamma = config.alpha[None, :] + lengths[:, None] / K
    phi = [np.full((len(doc.word_idx), K), 1.0 / K) for doc in corpus.documents]
    phi_logits = None
    if config.phi_mode == PHI_SGD:
        phi_logits = [np.zeros((len(doc.word_idx), K)) for doc in corpus.documents]
    state = VariationalState(gamma, phi, np.zeros(V), phi_logits)
    return params, state


CHECKPOINT_HEADER = "pfslda-model v1"


def save_checkpoint(path: str, params: ModelParams, state: VariationalState,
                    config: ModelConfig) -> None:
    def row(a):
        return " ".join(f"{x:.17g}" for x in np.atleast_1d(a))

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CHECKPOINT_HEADER + "\n")
        fh.write(f"K={params.K} V={params.V} p={params.p:.17g} "
                 f"target_type={config.target_type} "
                 f"channel={1 if config.channel_enabled else 0}\n")
        fh.write("BETA_LOGITS\n")
        for k in range(params.K):
            fh.write(row(params.beta_logits[k]) + "\n")
        fh.write("PI_LOGITS\n" + row(params.pi_logits) + "\n")
        fh.write("ETA\n" + row(params.eta) + "\n")
        fh.write("LOG_DELTA\n" + row(params.log_delta) + "\n")
        fh.write("VARPHI_LOGITS\n" + row(state.varphi_logits) + "\n")


def load_checkpoint(path: str) -> tuple[ModelParams, VariationalState, ModelConfig]:
    """Load a checkpoint; the returned state has empty per-document parts."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a pfslda checkpoint")
    fields = dict(item.split("=", 1) for item in lines[1].split())
    K, V = int(fields["K"]), int(fields["V"])
    p = float(fields["p"])
    target_type = fields["target_type"]
    channel = fields["channel"] == "1"

    blocks: dict[str, list[np.ndarray]] = {}
    name = None
    for line in lines[2:]:
        if line and line.replace("_", "").isalpha() and line.isupper():
            name = line
            blocks[name] = []
        elif line:
            blocks[name].append(np.array(line.split(), dtype=np.float64))
    beta_logits = np.vstack(blocks["BETA_LOGITS"])
    if beta_logits.shape != (K, V):
        raise ValueError(f"{path}: BETA_LOGITS shape mismatch")
    params = ModelParams(beta_logits,
                         blocks["PI_LOGITS"][0],
                         blocks["ETA"][0],
                         float(blocks["LOG_DELTA"][0][0]),
                         p)
    state = VariationalState(np.zeros((0, K)), [], blocks["VARPHI_LOGITS"][0])
    config = ModelConfig(K=K, p=p, target_type=target_type,
                         channel_enabled=channel)
    return params, state, config
