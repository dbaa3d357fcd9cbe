"""Small synthetic datasets with known structure."""

from __future__ import annotations

import numpy as np


def random_row_stochastic(num_nodes: int, degree: int = 3, rng=None) -> np.ndarray:
    """Sparse non-negative matrix, ``degree`` off-diagonal entries per row, rows summing to 1."""
    rng = rng if rng is not None else np.random.default_rng(0)
    k = min(degree, num_nodes - 1)
    w = np.zeros((num_nodes, num_nodes))
    for i in range(num_nodes):
        others = np.delete(np.arange(num_nodes), i)
        nbrs = rng.choice(others, size=k, replace=False)
        w[i, nbrs] = rng.uniform(0.1, 1.0, size=k)
    return w / w.sum(axis=1, keepdims=True)


def diffusion_series(num_nodes: int, num_steps: int, seed: int = 0, noise: float = 0.01,
                     degree: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Iterate x[t+1] = 0.9 W x[t] + 0.1 x[t] + noise.  Returns (series (T, N, 1), W)."""
    rng = np.random.default_rng(seed)
    w = random_row_stochastic(num_nodes, degree, rng)
    x = np.empty((num_steps, num_nodes))
    x[0] = rng.standard_normal(num_nodes)
    for t in range(num_steps - 1):
        x[t + 1] = 0.9 * (w @ x[t]) + 0.1 * x[t] + noise * rng.standard_normal(num_nodes)
    return x[:, :, None], w


def periodic_series(num_nodes: int, num_steps: int, period: int = 288, seed: int = 0,
                    noise: float = 0.0) -> np.ndarray:
    """Per-node sinusoids of a common period with random amplitude, phase and offset."""
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.5, 2.0, num_nodes)
    phase = rng.uniform(0, 2 * np.pi, num_nodes)
    offset = rng.uniform(1.0, 5.0, num_nodes)
    # phase index taken mod period so the float values repeat exactly
    t = (np.arange(num_steps) % period)[:, None]
    x = offset + amp * np.sin(2 * np.pi * t / period + phase)
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    return x[:, :, None]
