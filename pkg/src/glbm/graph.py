"""Neighbourhood graph over video frames and the structured latent prior.

Frames from the same scene form a clique. The prior precision of every
latent dimension is ``q = 2 L + lam I``, where ``L`` is the graph Laplacian;
``lam > 0`` makes ``q`` invertible (a bare Laplacian annihilates the
all-ones vector). With no edges and ``lam = 1`` the prior is N(0, I).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdjacencyMatrix:
    a: np.ndarray
    clique_sizes: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class Laplacian:
    l: np.ndarray
    clique_sizes: tuple[int, ...]


@dataclass(frozen=True)
class PriorPrecision:
    """Per-latent-dimension prior precision ``q`` (n x n, block diagonal).

    ``blocks`` holds the per-clique diagonal blocks, which is all any
    downstream computation needs since cross-clique entries are zero.
    """

    q: np.ndarray
    lam: float
    logdet_q: float
    clique_sizes: tuple[int, ...]
    blocks: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def offsets(self) -> list[int]:
        return np.concatenate([[0], np.cumsum(self.clique_sizes)]).astype(int).tolist()


def clique_adjacency(clique_sizes) -> AdjacencyMatrix:
    sizes = tuple(int(s) for s in clique_sizes)
    if not sizes:
        raise ValueError("at least one clique is required")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"clique sizes must be >= 1, got {sizes}")
    n = sum(sizes)
    a = np.zeros((n, n))
    start = 0
    for s in sizes:
        a[start:start + s, start:start + s] = 1.0
        start += s
    np.fill_diagonal(a, 0.0)
    return AdjacencyMatrix(a=a, clique_sizes=sizes)


def laplacian(adj: AdjacencyMatrix) -> Laplacian:
    a = adj.a
    return Laplacian(l=np.diag(a.sum(axis=1)) - a, clique_sizes=adj.clique_sizes)


def prior_precision(lap: Laplacian, lam: float = 1.0) -> PriorPrecision:
    if not lam > 0:
        raise ValueError(f"lam must be > 0 (unregularized precision is singular), got {lam}")
    n = lap.l.shape[0]
    q = 2.0 * lap.l + lam * np.eye(n)
    blocks = []
    logdet = 0.0
    start = 0
    for s in lap.clique_sizes:
        block = q[start:start + s, start:start + s].copy()
        chol = np.linalg.cholesky(block)
        logdet += 2.0 * np.log(np.diag(chol)).sum()
        block.setflags(write=False)
        blocks.append(block)
        start += s
    q.setflags(write=False)
    return PriorPrecision(q=q, lam=float(lam), logdet_q=float(logdet),
                          clique_sizes=lap.clique_sizes, blocks=tuple(blocks))


def build_prior(clique_sizes, lam: float = 1.0) -> PriorPrecision:
    """Shortcut: clique sizes -> adjacency -> Laplacian -> prior precision."""
    return prior_precision(laplacian(clique_adjacency(clique_sizes)), lam)
