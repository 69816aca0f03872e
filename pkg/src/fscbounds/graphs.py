"""Small directed-graph utilities shared by the channel, Q-graph and chain code."""

from __future__ import annotations

from collections import deque
from math import gcd

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


def strong_components(adj: np.ndarray) -> tuple[int, np.ndarray]:
    n, labels = connected_components(csr_matrix(np.asarray(adj, dtype=bool)),
                                     directed=True, connection="strong")
    return n, labels


def strongly_connected(adj: np.ndarray) -> bool:
    return strong_components(adj)[0] == 1


def closed_classes(adj: np.ndarray) -> list[np.ndarray]:
    """Communicating classes with no edge leaving them, as sorted index arrays."""
    adj = np.asarray(adj, dtype=bool)
    n, labels = strong_components(adj)
    out = []
    for c in range(n):
        members = np.flatnonzero(labels == c)
        leaving = adj[np.ix_(members, np.flatnonzero(labels != c))]
        if not leaving.any():
            out.append(members)
    out.sort(key=lambda m: m[0])
    return out


def period(adj: np.ndarray, nodes=None) -> int:
    """Period of the subgraph induced by ``nodes`` (assumed strongly connected).

    BFS levels from one node; the period is the gcd of ``lev[u] + 1 - lev[v]``
    over all internal edges ``u -> v``.
    """
    adj = np.asarray(adj, dtype=bool)
    nodes = np.arange(adj.shape[0]) if nodes is None else np.asarray(nodes)
    inside = np.zeros(adj.shape[0], dtype=bool)
    inside[nodes] = True
    level = np.full(adj.shape[0], -1)
    root = int(nodes[0])
    level[root] = 0
    queue = deque([root])
    g = 0
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u] & inside):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                g = gcd(g, int(level[u] + 1 - level[v]))
    return g
