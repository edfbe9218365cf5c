"""Exact t-SNE for small feature sets (N up to a couple of thousand).

High-dimensional affinities are perplexity-calibrated Gaussians, symmetrized
into a joint distribution; low-dimensional affinities are Student-t with one
degree of freedom. The KL objective is minimized by gradient descent with
momentum, adaptive per-coordinate gains, and early exaggeration. Fully
deterministic for a fixed seed.
"""

from __future__ import annotations

import numpy as np

_P_FLOOR = 1e-12


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x ** 2).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.clip(d, 0.0, None, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _calibrated_affinities(distances: np.ndarray, perplexity: float,
                           tol: float = 1e-5, max_steps: int = 50) -> np.ndarray:
    """Per-point binary search for the Gaussian precision matching log-perplexity entropy."""
    n = distances.shape[0]
    target = np.log(perplexity)
    p_cond = np.zeros((n, n))
    for i in range(n):
        d_i = np.delete(distances[i], i)
        beta, beta_lo, beta_hi = 1.0, -np.inf, np.inf
        affinities = np.exp(-d_i * beta)
        for _ in range(max_steps):
            total = affinities.sum()
            if total <= 0:
                entropy = 0.0
            else:
                entropy = np.log(total) + beta * (d_i * affinities).sum() / total
            diff = entropy - target
            if abs(diff) < tol:
                break
            if diff > 0:
                beta_lo = beta
                beta = beta * 2.0 if np.isinf(beta_hi) else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if np.isinf(beta_lo) else (beta + beta_lo) / 2.0
            affinities = np.exp(-d_i * beta)
        row = affinities / max(affinities.sum(), _P_FLOOR)
        p_cond[i, np.arange(n) != i] = row
    return p_cond


def joint_probabilities(features: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint affinities P with rows calibrated to the perplexity."""
    distances = _squared_distances(features)
    p_cond = _calibrated_affinities(distances, perplexity)
    p = (p_cond + p_cond.T) / (2.0 * features.shape[0])
    return np.maximum(p, _P_FLOOR)


def tsne(
    features: np.ndarray,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float | None = None,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
) -> np.ndarray:
    """Embed [N, d] features into 2-D. Learning rate defaults to N / 12."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] < 2:
        raise ValueError(f"expected [N, d>=2] features, got {features.shape}")
    n = features.shape[0]
    if n <= 3 * perplexity:
        raise ValueError(
            f"perplexity {perplexity} too large for {n} samples (need N > 3 * perplexity)"
        )
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if learning_rate is None:
        learning_rate = n / 12.0

    p = joint_probabilities(features, perplexity)
    p_run = p * early_exaggeration

    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)

    for step in range(iterations):
        if step == exaggeration_iters:
            p_run = p
        num = 1.0 / (1.0 + _squared_distances(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), _P_FLOOR)
        w = (p_run - q) * num
        grad = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)

        momentum = 0.5 if step < exaggeration_iters else 0.8
        same_sign = (grad > 0) == (velocity > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.clip(gains, 0.01, None, out=gains)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    return y
