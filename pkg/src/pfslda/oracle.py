"""Independent reference computations: Monte-Carlo marginal likelihood,
finite-difference gradients, and grid search over a single coordinate.

These deliberately avoid the analytic code paths they are used to check, and
are exposed through the CLI `verify` subcommand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_expit

from pfslda.corpus import Document
from pfslda.model import REAL, ModelConfig, ModelParams

LOG_2PI = math.log(2.0 * math.pi)

EXACT = "exact"
MONTE_CARLO = "monte_carlo"
GRID = "grid"


@dataclass
class OracleEstimate:
    value: float
    stderr: float
    method: str


def _log_target_likelihood(y: float, mean: np.ndarray, params: ModelParams,
                           config: ModelConfig) -> np.ndarray:
    if config.target_type == REAL:
        return -0.5 * (LOG_2PI + params.log_delta) \
            - (y - mean) ** 2 / (2.0 * params.delta)
    return log_expit((2.0 * y - 1.0) * mean)


def mc_marginal_loglik(doc: Document, target: float, params: ModelParams,
                       config: ModelConfig, samples: int,
                       seed: int) -> OracleEstimate:
    """log p(w, y) estimated by Monte Carlo over theta ~ Dir(alpha).

    Channel switches and topic assignments are marginalized analytically per
    token via the per-word mixture p * (beta theta)_w + (1 - p) * pi_w
    (or just (beta theta)_w with the channel disabled). Restricted to tiny
    documents so the estimate is meaningful.
    """
    if doc.total_tokens > 12:
        raise ValueError("marginal-likelihood oracle is limited to N_d <= 12")
    if samples < 10_000:
        raise ValueError("need at least 10^4 samples")
    p = params.p
    beta = params.beta
    pi = params.pi
    tokens = np.repeat(doc.word_idx, doc.word_cnt.astype(int))

    if config.K == 1:
        # theta is degenerate at 1: the integral collapses to a closed form.
        mean = params.eta[0]
        value = float(_log_target_likelihood(target, np.array([mean]),
                                             params, config)[0])
        if config.channel_enabled:
            value += float(np.log(p * beta[0, tokens]
                                  + (1.0 - p) * pi[tokens]).sum())
        else:
            value += float(np.log(beta[0, tokens]).sum())
        return OracleEstimate(value, 0.0, EXACT)

    rng = np.random.default_rng(seed)
    theta = rng.dirichlet(config.alpha, size=samples)        # (S, K)
    mix = theta @ beta[:, tokens] if len(tokens) else np.zeros((samples, 0))
    if config.channel_enabled:
        per_token = np.log(p * mix + (1.0 - p) * pi[tokens][None, :])
    else:
        per_token = np.log(mix)
    logs = per_token.sum(axis=1) + _log_target_likelihood(
        target, theta @ params.eta, params, config)

    peak = logs.max()
    w = np.exp(logs - peak)
    mean_w = w.mean()
    value = peak + math.log(mean_w)
    # delta method: se(log mean) ~= sd(w) / (mean(w) * sqrt(S))
    stderr = float(w.std(ddof=1) / (mean_w * math.sqrt(samples)))
    return OracleEstimate(float(value), stderr, MONTE_CARLO)


def finite_difference_gradient(objective: Callable[[np.ndarray], float],
                               point: np.ndarray,
                               step: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / (2h)."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty_like(point)
    for i in range(point.size):
        probe = point.copy()
        probe[i] = point[i] + step
        hi = objective(probe)
        probe[i] = point[i] - step
        lo = objective(probe)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError(f"objective not finite near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * step)
    return grad


def grid_optimal_coordinate(objective: Callable[[float], float],
                            grid: Sequence[float]) -> tuple[float, float]:
    """Argmax of a one-coordinate objective over a grid; first-occurrence
    tie-break."""
    if not len(grid):
        raise ValueError("grid must be nonempty")
    best_x, best_f = grid[0], objective(grid[0])
    for x in grid[1:]:
        f = objective(x)
        if f > best_f:
            best_x, best_f = x, f
    return best_x, best_f
