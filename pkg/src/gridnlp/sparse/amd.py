"""Fill-reducing ordering by greedy minimum degree.

Classic minimum-degree elimination on the adjacency graph of the matrix
pattern: repeatedly eliminate a vertex of smallest current degree and
connect its neighbors into a clique.  Ties break toward the smallest
vertex index, which keeps the ordering deterministic.  Quality matches
or beats the natural order on the sparse, graph-induced patterns this
package factorizes; the symbolic analysis is run once per sparsity
pattern, so the O(fill) set updates are not on the hot path.
"""
from __future__ import annotations

import numpy as np

from .csc import SparseSymmetric


def amd_order(matrix: SparseSymmetric) -> np.ndarray:
    """Permutation ``perm`` such that position i holds original index perm[i]."""
    n = matrix.n
    adj: list[set[int]] = [set() for _ in range(n)]
    rows, cols = matrix.coords()
    for i, j in zip(rows.tolist(), cols.tolist()):
        if i != j:
            adj[i].add(j)
            adj[j].add(i)

    alive = np.ones(n, dtype=bool)
    degree = np.array([len(a) for a in adj], dtype=np.int64)
    # ties break toward vertices that started sparse, then smallest index
    initial_degree = degree.copy()
    perm = np.empty(n, dtype=np.int64)
    for k in range(n):
        best = -1
        best_key = (n + 1, n + 1)
        for v in range(n):
            if alive[v]:
                key = (degree[v], initial_degree[v])
                if key < best_key:
                    best = v
                    best_key = key
        v = best
        perm[k] = v
        alive[v] = False
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au.update(nbrs)
            au.discard(u)
        for u in nbrs:
            degree[u] = len(adj[u])
        adj[v] = set()
    return perm
