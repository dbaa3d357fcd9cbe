"""Per-batch choice of one graph from the learned set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIE_TOL = 1e-12


@dataclass(frozen=True)
class SelectionResult:
    index: int
    scores: np.ndarray          # (R,)
    correlation: np.ndarray     # (N, N)
    degenerate: tuple[bool, ...]  # per graph: score forced to 0 by an all-zero operand


def collapse(x_in: np.ndarray) -> np.ndarray:
    """Sum a (B, T_in, N, D) batch over batch and feature axes -> (T_in, N)."""
    x_in = np.asarray(x_in, dtype=np.float64)
    if x_in.ndim != 4:
        raise ValueError(f"expected (B, T_in, N, D) input, got shape {x_in.shape}")
    return x_in.sum(axis=(0, 3))


def cosine_frobenius(m1: np.ndarray, m2: np.ndarray) -> float:
    """<M1, M2>_F / (|M1|_F |M2|_F); 0 when either matrix is all zero."""
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    if m1.shape != m2.shape:
        raise ValueError(f"cosine_frobenius: shapes {m1.shape} and {m2.shape} differ")
    n1 = np.sqrt(np.sum(m1 * m1))
    n2 = np.sqrt(np.sum(m2 * m2))
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    return float(np.sum(m1 * m2) / (n1 * n2))


def select_graph(x_in: np.ndarray, graphs) -> SelectionResult:
    """Index of the graph most similar to the batch's node correlation matrix.

    Ties go to the smallest index; scores within ``TIE_TOL`` of the best count as
    tied so that rounding noise (e.g. from rescaling the input) cannot flip the
    choice.  Selection is not differentiated.
    """
    graphs = np.asarray(graphs, dtype=np.float64)
    if graphs.ndim != 3 or graphs.shape[0] == 0:
        raise ValueError(f"expected a non-empty (R, N, N) graph stack, got shape {graphs.shape}")
    x = collapse(x_in)
    corr = x.T @ x
    corr_zero = not np.any(corr)
    scores = np.array([cosine_frobenius(corr, a) for a in graphs])
    degenerate = tuple(bool(corr_zero or not np.any(a)) for a in graphs)
    best = int(np.flatnonzero(scores >= scores.max() - TIE_TOL)[0])
    return SelectionResult(best, scores, corr, degenerate)
