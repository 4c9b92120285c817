"""Gaussian kNN affinity graphs and their Laplacians."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import ConfigError, ConnectivityError, DegenerateScaleError, SizeError

LAPLACIAN_KINDS = ("unnormalized", "sym_normalized", "random_walk")


@dataclass(frozen=True)
class GraphConfig:
    """Graph construction settings.

    ``sigma=None`` selects the kernel width as the median distance from each
    node to its ``k_neighbors`` nearest neighbours.
    """

    k_neighbors: int = 10
    sigma: float | None = None
    laplacian_kind: str = "sym_normalized"
    self_loop_epsilon: float = 0.0

    def __post_init__(self):
        if int(self.k_neighbors) != self.k_neighbors or self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be a positive integer, got {self.k_neighbors}")
        if self.sigma is not None and not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be finite and positive, got {self.sigma}")
        if self.laplacian_kind not in LAPLACIAN_KINDS:
            raise ConfigError(f"unknown laplacian_kind {self.laplacian_kind!r}")
        if self.self_loop_epsilon < 0:
            raise ConfigError("self_loop_epsilon must be >= 0")


@dataclass(frozen=True, eq=False)
class Graph:
    W: sp.csr_matrix
    degrees: np.ndarray
    node_ids: np.ndarray
    sigma: float

    @property
    def m(self) -> int:
        return self.degrees.shape[0]


class RandomWalk(NamedTuple):
    P: np.ndarray  # W D^-1, columns sum to one
    S: np.ndarray  # D^-1/2 W D^-1/2


def knn_mask(sq_dist: np.ndarray, k: int) -> np.ndarray:
    """Boolean (m, m) mask with row i marking i's k nearest other nodes."""
    m = sq_dist.shape[0]
    d = sq_dist.copy()
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    mask = np.zeros((m, m), dtype=bool)
    mask[np.arange(m)[:, None], nn] = True
    return mask


def build_graph(features, cfg: GraphConfig = GraphConfig(), node_ids=None) -> Graph:
    """Gaussian affinities on the union-symmetrized kNN graph of ``features``."""
    X = np.asarray(features, dtype=float)
    m = X.shape[0]
    k = cfg.k_neighbors
    if m < k + 1:
        raise SizeError(f"need at least k_neighbors + 1 = {k + 1} nodes, got {m}")
    if not np.all(np.isfinite(X)):
        raise ConfigError("features contain non-finite entries")
    node_ids = np.arange(m) if node_ids is None else np.asarray(node_ids)

    sq = cdist(X, X, "sqeuclidean")
    directed = knn_mask(sq, k)
    if cfg.sigma is None:
        sigma = float(np.median(np.sqrt(sq[directed])))
        if sigma == 0.0:
            raise DegenerateScaleError(
                "median kNN distance is 0 (duplicate points); pass a fixed sigma")
    else:
        sigma = float(cfg.sigma)

    keep = directed | directed.T
    W = np.where(keep, np.exp(-sq / (2.0 * sigma * sigma)), 0.0)
    if cfg.self_loop_epsilon > 0:
        W[np.diag_indices(m)] = cfg.self_loop_epsilon
    deg = W.sum(axis=1)
    isolated = np.flatnonzero(deg <= 0.0)
    if isolated.size:
        node = int(node_ids[isolated[0]])
        raise ConnectivityError(f"node {node} has zero degree "
                                f"({isolated.size} isolated in total)", node=node)
    return Graph(sp.csr_matrix(W), deg, node_ids, sigma)


def laplacian(g: Graph, kind: str = "sym_normalized"):
    """Dense Laplacian of ``g``.

    ``unnormalized`` gives ``D - W``, ``sym_normalized`` gives
    ``I - D^-1/2 W D^-1/2`` and ``random_walk`` returns a :class:`RandomWalk`
    holding ``P = W D^-1`` and its symmetric conjugate.
    """
    W = g.W.toarray()
    d = g.degrees
    if kind == "unnormalized":
        L = -W
        L[np.diag_indices_from(L)] += d
        return L
    inv_sqrt = 1.0 / np.sqrt(d)
    S = inv_sqrt[:, None] * W * inv_sqrt[None, :]
    S = 0.5 * (S + S.T)
    if kind == "sym_normalized":
        return np.eye(g.m) - S
    if kind == "random_walk":
        return RandomWalk(W / d[None, :], S)
    raise ConfigError(f"unknown laplacian kind {kind!r}")


def dump_coo(g: Graph, path) -> None:
    """Write upper-triangle edges as ``i,j,w`` lines (local node indices)."""
    U = sp.triu(g.W, k=1).tocoo()
    order = np.lexsort((U.col, U.row))
    with open(path, "w") as fh:
        for i, j, w in zip(U.row[order], U.col[order], U.data[order]):
            fh.write(f"{i},{j},{float(w)!r}\n")
