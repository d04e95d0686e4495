"""MAP topic-proportion inference for unseen documents and target scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from pfslda.corpus import Document
from pfslda.model import REAL, ModelConfig, ModelParams, softmax_simplex


@dataclass
class PredictConfig:
    steps: int = 200
    step_size: float = 0.1
    tol: float = 1e-6

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def _map_objective(theta: np.ndarray, cnt: np.ndarray, mix_cols: np.ndarray,
                   pi_words: np.ndarray | None, alpha: np.ndarray,
                   p: float) -> float:
    """Log posterior of theta up to a constant. mix_cols is beta restricted to
    the document's words, shape (K, n)."""
    word_like = theta @ mix_cols
    if pi_words is not None:
        word_like = p * word_like + (1.0 - p) * pi_words
    val = float((cnt * np.log(word_like)).sum())
    val += float(((alpha - 1.0) * np.log(theta)).sum())
    return val


def map_theta(doc: Document, params: ModelParams, config: ModelConfig,
              pconfig: PredictConfig | None = None) -> np.ndarray:
    """MAP estimate of the document's topic proportions.

    Gradient ascent on softmax coordinates from uniform initialization; with
    the channel enabled, switches are marginalized per word inside the
    objective (the p * beta + (1 - p) * pi mixture). Returns the best iterate,
    so the objective never ends below its value at uniform theta.
    """
    pconfig = pconfig or PredictConfig()
    K = params.K
    alpha = config.alpha
    beta = params.beta
    mix_cols = beta[:, doc.word_idx]                        # (K, n)
    pi_words = params.pi[doc.word_idx] if config.channel_enabled else None
    cnt = doc.word_cnt
    p = params.p

    u = np.zeros(K)
    theta = softmax_simplex(u)
    best_theta = theta
    best_val = _map_objective(theta, cnt, mix_cols, pi_words, alpha, p)
    for _ in range(pconfig.steps):
        word_like = theta @ mix_cols
        if pi_words is not None:
            denom = p * word_like + (1.0 - p) * pi_words
            g_theta = (mix_cols * (p * cnt / denom)).sum(axis=1)
        else:
            g_theta = (mix_cols * (cnt / word_like)).sum(axis=1)
        g_theta += (alpha - 1.0) / theta
        g_u = theta * (g_theta - float(theta @ g_theta))
        norm = float(np.linalg.norm(g_u))
        if norm < pconfig.tol:
            break
        u = u + pconfig.step_size * g_u
        theta = softmax_simplex(u)
        val = _map_objective(theta, cnt, mix_cols, pi_words, alpha, p)
        if val > best_val:
            best_val, best_theta = val, theta
    return best_theta


def predict_target(doc: Document, params: ModelParams, config: ModelConfig,
                   pconfig: PredictConfig | None = None) -> float:
    """GLM score at the MAP topic proportions: eta . theta for real targets,
    sigmoid(eta . theta) for binary targets."""
    theta = map_theta(doc, params, config, pconfig)
    score = float(params.eta @ theta)
    if config.target_type == REAL:
        return score
    return float(expit(score))
