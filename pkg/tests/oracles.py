"""Independent reference implementations used as test oracles.

Everything here is written from the definitions, in a deliberately different
style from the package (python loops and sets instead of vectorized masks),
so that agreement between the two is meaningful.  Keep this module free of
imports from lifereid except for pure data types.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def rerank_reference(dist: np.ndarray, k1: int, k2: int, lambda_value: float) -> np.ndarray:
    """Transcription of the published k-reciprocal re-ranking procedure.

    Mirrors the reference code structure: per-row reciprocal neighbor sets
    including self (rank 0 is the zero self-distance), half-set expansion
    accepted when the overlap is strictly above two thirds of the candidate
    set, sparse V rows of L1-normalized exp(-d) weights, mean-over-top-k2
    query expansion, and the 1 - minsum/(2 - minsum) Jaccard blend.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n == 0:
        return dist.copy()
    if n == 1:
        return np.zeros((1, 1))
    k1 = min(k1, n - 1)
    k2 = min(k2, n - 1)

    initial_rank = np.argsort(dist, axis=1, kind="stable")

    def k_reciprocal(i: int, k: int) -> np.ndarray:
        forward = initial_rank[i, : k + 1]
        backward = initial_rank[forward, : k + 1]
        fi = np.where(backward == i)[0]
        return forward[fi]

    V = np.zeros((n, n), dtype=np.float64)
    half = int(np.around(k1 / 2))
    for i in range(n):
        expansion = k_reciprocal(i, k1)
        base = set(int(v) for v in expansion)
        for candidate in list(expansion):
            cand_set = k_reciprocal(int(candidate), half)
            overlap = len(set(int(v) for v in cand_set) & base)
            if overlap > (2.0 / 3.0) * len(cand_set):
                expansion = np.append(expansion, cand_set)
        expansion = np.unique(expansion)
        weight = np.exp(-dist[i, expansion])
        V[i, expansion] = weight / np.sum(weight)

    if k2 > 1:
        V_qe = np.zeros_like(V)
        for i in range(n):
            V_qe[i, :] = np.mean(V[initial_rank[i, :k2], :], axis=0)
        V = V_qe

    jaccard = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            min_sum = float(np.minimum(V[i], V[j]).sum())
            jaccard[i, j] = 1.0 - min_sum / (2.0 - min_sum)
    jaccard = np.maximum(jaccard, 0.0)
    return (1.0 - lambda_value) * jaccard + lambda_value * dist


def dbscan_reference(dist: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Textbook density clustering on a precomputed distance matrix.

    A point is core when at least min_pts points (itself included) lie within
    eps.  Clusters grow from unvisited cores in index order through a FIFO
    queue; a discovered point is claimed immediately, and only cores extend
    the frontier.  Non-core points never reached stay noise (-1).
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    neighbors = [set(np.flatnonzero(dist[i] <= eps).tolist()) for i in range(n)]
    is_core = [len(neighbors[i]) >= min_pts for i in range(n)]
    labels = [-1] * n
    claimed = [False] * n
    cluster = 0
    for start in range(n):
        if claimed[start] or not is_core[start]:
            continue
        queue = deque([start])
        claimed[start] = True
        while queue:
            p = queue.popleft()
            labels[p] = cluster
            if not is_core[p]:
                continue
            for q in sorted(neighbors[p]):
                if not claimed[q]:
                    claimed[q] = True
                    queue.append(q)
        cluster += 1
    return np.asarray(labels, dtype=np.int64)


def average_precision_reference(
    query_feat, query_identity, query_camera, gallery_feats, gallery_identity, gallery_camera
):
    """AP and rank-1 for one query, straight from the definition.

    Gallery entries sharing both identity and camera with the query are
    removed; the rest are sorted by descending similarity with ties going to
    the lower gallery index; AP averages precision at each relevant rank.
    Returns None when no relevant item survives the filter.
    """
    sims = [float(np.dot(g, query_feat)) for g in gallery_feats]
    order = sorted(range(len(sims)), key=lambda j: (-sims[j], j))
    kept = [
        j
        for j in order
        if not (gallery_identity[j] == query_identity and gallery_camera[j] == query_camera)
    ]
    if not kept:
        return None
    hits = 0
    precisions = []
    for rank, j in enumerate(kept, start=1):
        if gallery_identity[j] == query_identity:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return None
    rank1 = gallery_identity[kept[0]] == query_identity
    return sum(precisions) / len(precisions), bool(rank1)


def map_rank1_reference(
    query_feats, query_identity, query_camera, gallery_feats, gallery_identity, gallery_camera
):
    """(mAP, rank-1) in percent over the valid queries."""
    aps, hits = [], []
    for i in range(len(query_feats)):
        res = average_precision_reference(
            query_feats[i],
            query_identity[i],
            query_camera[i],
            gallery_feats,
            gallery_identity,
            gallery_camera,
        )
        if res is None:
            continue
        aps.append(res[0])
        hits.append(1.0 if res[1] else 0.0)
    return 100.0 * sum(aps) / len(aps), 100.0 * sum(hits) / len(hits)


def ema_closed_form(theta_m0: np.ndarray, theta: np.ndarray, alpha: float, t: int) -> np.ndarray:
    """Value of the moving average after t updates against a constant target."""
    a_t = alpha**t
    return a_t * theta_m0 + (1.0 - a_t) * theta


def kl_reference(p, r):
    """Definition-level KL divergence in nats with 0 log 0 = 0."""
    total = 0.0
    for pi, ri in zip(p, r):
        if pi > 0.0:
            total += pi * (np.log(pi) - np.log(ri))
    return total


def softmax_reference(logits):
    """Naive softmax; only safe for small logits, which is all tests need."""
    e = np.exp(np.asarray(logits, dtype=np.float64))
    return e / e.sum()


def quota_reference(n_new_clusters: int, n_old_entries: int, n_mem: int) -> tuple[int, int]:
    """Proportional split with overflow handed to the other side."""
    available = n_new_clusters + n_old_entries
    n_new = (n_new_clusters * n_mem) // available
    n_old = n_mem - n_new
    if n_new > n_new_clusters:
        spill = n_new - n_new_clusters
        n_new = n_new_clusters
        n_old = min(n_old_entries, n_old + spill)
    if n_old > n_old_entries:
        spill = n_old - n_old_entries
        n_old = n_old_entries
        n_new = min(n_new_clusters, n_new + spill)
    return n_new, n_old


def central_difference_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        up[i] += h
        down = x.copy()
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2.0 * h)
    return g
