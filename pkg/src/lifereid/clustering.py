"""Pseudo-label generation: cosine distances, k-reciprocal re-ranking, DBSCAN.

The re-ranking follows the k-reciprocal encoding procedure: reciprocal
neighbor sets R(i, k1) are expanded with half-size reciprocal sets of their
members when the overlap is strict-majority (> 2/3 of the candidate set),
rows are turned into L1-normalized exp(-d) weight vectors, smoothed by local
query expansion over the k2 nearest rows, and compared with the Jaccard
distance 1 - sum(min) / sum(max).  The final distance blends Jaccard with the
original distance by lambda_rr.  For tiny inputs k1 and k2 are clamped to
n - 1 so the procedure stays defined.

DBSCAN runs on a precomputed distance matrix.  A point is core iff at least
min_pts points (itself included) lie within eps.  Clusters are grown
breadth-first from unclaimed core points in index order, so labels come out
in first-discovery order; unclaimed points are noise (-1).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyCluster,
    InvalidConfig,
    LengthMismatch,
    NonSymmetricInput,
)
from .numerics import normalize

_SYM_TOL = 1e-9


@dataclass(frozen=True)
class RerankParams:
    k1: int = 30
    k2: int = 6
    lambda_rr: float = 0.3

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise InvalidConfig("k1 and k2 must be positive")
        if self.k2 > self.k1:
            raise InvalidConfig("k2 must not exceed k1")
        if not 0.0 <= self.lambda_rr <= 1.0:
            raise InvalidConfig("lambda_rr must lie in [0, 1]")


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.55
    min_pts: int = 4

    def __post_init__(self):
        if self.eps < 0 or self.min_pts < 1:
            raise InvalidConfig("eps must be nonnegative and min_pts positive")


def pairwise_cosine_distance(feats: np.ndarray) -> np.ndarray:
    """1 - F F^T for unit-row features, exactly symmetric with a zero diagonal."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise DimensionMismatch("features must be 2-d")
    d = 1.0 - feats @ feats.T
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def _check_distance_matrix(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise DimensionMismatch("distance matrix must be square")
    if np.abs(dist - dist.T).max(initial=0.0) > _SYM_TOL:
        raise NonSymmetricInput("distance matrix is not symmetric")
    if dist.shape[0] and np.abs(np.diagonal(dist)).max() > _SYM_TOL:
        raise NonSymmetricInput("distance matrix diagonal is not zero")
    return dist


def k_reciprocal_jaccard(dist: np.ndarray, params: RerankParams) -> np.ndarray:
    """Re-ranked distance matrix, same shape as the input."""
    dist = _check_distance_matrix(dist)
    n = dist.shape[0]
    if n == 0:
        return dist.copy()
    if n == 1:
        return np.zeros((1, 1))

    k1 = min(params.k1, n - 1)
    k2 = min(params.k2, n - 1)
    half = int(np.around(k1 / 2.0))

    initial_rank = np.argsort(dist, axis=1, kind="stable")
    inv_rank = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)
    inv_rank[rows[:, None], initial_rank] = rows[None, :]

    # j is k-reciprocal to i iff each lies in the other's top-(k+1) (self at 0)
    top_k1 = inv_rank <= k1
    recip_k1 = top_k1 & top_k1.T
    top_half = inv_rank <= half
    recip_half = top_half & top_half.T
    half_lists = [np.flatnonzero(recip_half[i]) for i in range(n)]

    v = np.zeros((n, n))
    exp_w = np.exp(-dist)
    for i in range(n):
        members = [np.flatnonzero(recip_k1[i])]
        for c in members[0]:
            cand = half_lists[c]
            overlap = np.count_nonzero(recip_k1[i, cand])
            if overlap > (2.0 / 3.0) * cand.size:
                members.append(cand)
        idx = np.unique(np.concatenate(members))
        w = exp_w[i, idx]
        v[i, idx] = w / w.sum()

    if k2 > 1:
        v = v[initial_rank[:, :k2]].mean(axis=1)

    jaccard = np.empty((n, n))
    for i in range(n):
        nz = np.flatnonzero(v[i])
        # sum_j min(v_i, v_j); rows are L1-normalized so sum(max) = 2 - sum(min)
        min_sum = np.minimum(v[:, nz], v[i, nz][None, :]).sum(axis=1)
        jaccard[i] = 1.0 - min_sum / (2.0 - min_sum)
    np.maximum(jaccard, 0.0, out=jaccard)

    return (1.0 - params.lambda_rr) * jaccard + params.lambda_rr * dist


def dbscan(dist: np.ndarray, params: DbscanParams) -> np.ndarray:
    """Cluster labels in first-discovery order; -1 marks noise."""
    dist = _check_distance_matrix(dist)
    n = dist.shape[0]
    within = dist <= params.eps
    core = within.sum(axis=1) >= params.min_pts
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        frontier = deque([i])
        while frontier:
            j = frontier.popleft()
            for q in np.flatnonzero(within[j]):
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        frontier.append(q)
        cluster += 1
    return labels


@dataclass
class ClusterAssignment:
    """Pseudo-labels with per-cluster prototypes and per (cluster, camera) proxies."""

    labels: np.ndarray
    prototypes: np.ndarray
    sizes: np.ndarray
    proxy_feats: np.ndarray
    proxy_cluster: np.ndarray
    proxy_camera: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.prototypes.shape[0]


def assign_and_summarize(
    feats: np.ndarray, labels: np.ndarray, camera_ids: np.ndarray
) -> ClusterAssignment:
    """Build prototypes (normalized cluster means) and camera proxies.

    Prototypes are indexed by cluster id; proxies are stacked in ascending
    (cluster, camera) order.
    """
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    camera_ids = np.asarray(camera_ids, dtype=np.int64)
    if not (len(feats) == len(labels) == len(camera_ids)):
        raise LengthMismatch("features, labels and camera ids must align")
    n_clusters = int(labels.max(initial=-1)) + 1
    protos = np.empty((n_clusters, feats.shape[1] if feats.ndim == 2 else 0))
    sizes = np.empty(n_clusters, dtype=np.int64)
    proxy_feats, proxy_cluster, proxy_camera = [], [], []
    for j in range(n_clusters):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            raise EmptyCluster("cluster %d has no members" % j)
        protos[j] = normalize(feats[members].mean(axis=0))
        sizes[j] = members.size
        for cam in np.unique(camera_ids[members]):
            sub = members[camera_ids[members] == cam]
            proxy_feats.append(normalize(feats[sub].mean(axis=0)))
            proxy_cluster.append(j)
            proxy_camera.append(int(cam))
    d = feats.shape[1]
    return ClusterAssignment(
        labels=labels,
        prototypes=protos,
        sizes=sizes,
        proxy_feats=np.asarray(proxy_feats, dtype=np.float64).reshape(len(proxy_feats), d),
        proxy_cluster=np.asarray(proxy_cluster, dtype=np.int64),
        proxy_camera=np.asarray(proxy_camera, dtype=np.int64),
    )


def generate_pseudo_labels(
    feats: np.ndarray, rerank: RerankParams, db: DbscanParams
) -> np.ndarray:
    """Distance, re-rank, cluster: the per-epoch pseudo-label pass."""
    return dbscan(k_reciprocal_jaccard(pairwise_cosine_distance(feats), rerank), db)
