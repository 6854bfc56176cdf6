"""Retrieval evaluation: mAP, rank-1, cross-test, triplet order preservation.

Protocol per query: rank the gallery by descending cosine similarity (ties
broken by gallery index), drop gallery items sharing both the query identity
and the query camera, then score.  AP is the mean of precision-at-rank over
the relevant positions; queries with no valid positive are skipped.  A
"cross test" scores fresh query features against gallery features extracted
by an earlier encoder, which measures backward compatibility of the feature
space; the self/cross gap is positive when compatibility degraded.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, forward_batch
from .errors import (
    CheckpointError,
    DimensionMismatch,
    EmptyGallery,
    LengthMismatch,
    NoValidQueries,
    NoValidTriplets,
)
from .rng import SplitMix64
from .synth import DomainData

SNAPSHOT_MAGIC = b"LRGAL001"


def average_precision(
    query_feat: np.ndarray,
    query_identity: int,
    query_camera: int,
    gallery_feats: np.ndarray,
    gallery_identity: np.ndarray,
    gallery_camera: np.ndarray,
) -> tuple[float, bool] | None:
    """(AP, rank-1 hit) for one query, or None when no valid positive exists."""
    gallery_feats = np.asarray(gallery_feats, dtype=np.float64)
    if gallery_feats.ndim != 2 or gallery_feats.shape[0] == 0:
        raise EmptyGallery("gallery is empty")
    sims = gallery_feats @ np.asarray(query_feat, dtype=np.float64)
    order = np.argsort(-sims, kind="stable")
    keep = ~(
        (gallery_identity[order] == query_identity)
        & (gallery_camera[order] == query_camera)
    )
    order = order[keep]
    if order.size == 0:
        return None
    rel = gallery_identity[order] == query_identity
    if not rel.any():
        return None
    cum = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    ap = float((cum[rel] / ranks[rel]).mean())
    return ap, bool(rel[0])


def evaluate_features(
    query_feats: np.ndarray,
    query_identity: np.ndarray,
    query_camera: np.ndarray,
    gallery_feats: np.ndarray,
    gallery_identity: np.ndarray,
    gallery_camera: np.ndarray,
    threads: int = 1,
) -> tuple[float, float]:
    """(mAP, rank-1) in percent over all valid queries."""
    if not (len(query_feats) == len(query_identity) == len(query_camera)):
        raise LengthMismatch("query arrays must align")
    if not (len(gallery_feats) == len(gallery_identity) == len(gallery_camera)):
        raise LengthMismatch("gallery arrays must align")
    if query_feats.shape[0] and gallery_feats.shape[0] and query_feats.shape[1] != gallery_feats.shape[1]:
        raise DimensionMismatch("query and gallery feature widths differ")

    def one(i):
        return average_precision(
            query_feats[i],
            query_identity[i],
            query_camera[i],
            gallery_feats,
            gallery_identity,
            gallery_camera,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(query_feats))))
    else:
        results = [one(i) for i in range(len(query_feats))]
    scored = [r for r in results if r is not None]
    if not scored:
        raise NoValidQueries("every query was filtered out")
    aps = np.array([ap for ap, _ in scored])
    hits = np.array([hit for _, hit in scored])
    return float(aps.mean() * 100.0), float(hits.mean() * 100.0)


def evaluate_domain(
    params_m: EncoderParams, data: DomainData, threads: int = 1
) -> tuple[float, float]:
    """Self test: encode queries and gallery with the same encoder."""
    qf, _ = forward_batch(params_m, data.query_x)
    gf, _ = forward_batch(params_m, data.gallery_x)
    return evaluate_features(
        qf,
        data.query_identity,
        data.query_camera,
        gf,
        data.gallery_identity,
        data.gallery_camera,
        threads,
    )


@dataclass
class GallerySnapshot:
    """Gallery features frozen at a particular step, for cross-testing later."""

    domain_id: int
    step: int
    feats: np.ndarray
    identity: np.ndarray
    camera: np.ndarray

    def save(self, path) -> None:
        header = {
            "domain_id": int(self.domain_id),
            "step": int(self.step),
            "n": int(self.feats.shape[0]),
            "d": int(self.feats.shape[1]),
            "identity": [int(i) for i in self.identity],
            "camera": [int(c) for c in self.camera],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.feats, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GallerySnapshot":
        with open(path, "rb") as fh:
            magic = fh.read(len(SNAPSHOT_MAGIC))
            if magic != SNAPSHOT_MAGIC:
                raise CheckpointError("bad snapshot magic %r" % magic)
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            raw = fh.read()
        n, d = header["n"], header["d"]
        if len(raw) != n * d * 8:
            raise CheckpointError("snapshot payload truncated")
        return cls(
            domain_id=int(header["domain_id"]),
            step=int(header["step"]),
            feats=np.frombuffer(raw, dtype="<f8").reshape(n, d).astype(np.float64),
            identity=np.array(header["identity"], dtype=np.int64),
            camera=np.array(header["camera"], dtype=np.int64),
        )


def take_snapshot(params_m: EncoderParams, data: DomainData, step: int) -> GallerySnapshot:
    gf, _ = forward_batch(params_m, data.gallery_x)
    return GallerySnapshot(
        domain_id=data.domain_id,
        step=step,
        feats=gf,
        identity=data.gallery_identity.copy(),
        camera=data.gallery_camera.copy(),
    )


def cross_test(
    params_m: EncoderParams, data: DomainData, snapshot: GallerySnapshot, threads: int = 1
) -> tuple[float, float]:
    """Fresh queries against stored gallery features."""
    from .errors import DomainMismatch

    if snapshot.domain_id != data.domain_id:
        raise DomainMismatch(
            "snapshot is for domain %d, data for %d" % (snapshot.domain_id, data.domain_id)
        )
    qf, _ = forward_batch(params_m, data.query_x)
    return evaluate_features(
        qf,
        data.query_identity,
        data.query_camera,
        snapshot.feats,
        snapshot.identity,
        snapshot.camera,
        threads,
    )


def triplet_order_preservation(
    feats_a: np.ndarray,
    identity: np.ndarray,
    rng: SplitMix64,
    n_triplets: int,
    feats_b: np.ndarray | None = None,
) -> float:
    """Fraction of random (anchor, positive, negative) triplets kept in order.

    Anchors are embedded by feats_a; positives and negatives by feats_b
    (defaults to feats_a).  A triplet is preserved when the anchor-positive
    cosine distance is strictly below the anchor-negative one.
    """
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = feats_a if feats_b is None else np.asarray(feats_b, dtype=np.float64)
    identity = np.asarray(identity, dtype=np.int64)
    if len(feats_a) != len(identity) or len(feats_b) != len(identity):
        raise LengthMismatch("features and identities must align")
    counts = {}
    for i in identity:
        counts[int(i)] = counts.get(int(i), 0) + 1
    anchors = np.flatnonzero(np.array([counts[int(i)] >= 2 for i in identity]))
    if anchors.size == 0 or len(counts) < 2:
        raise NoValidTriplets("need an identity with two instances and a second identity")
    kept = 0
    for _ in range(n_triplets):
        a = int(anchors[rng.randint(anchors.size)])
        pos_pool = np.flatnonzero((identity == identity[a]))
        pos_pool = pos_pool[pos_pool != a]
        p = int(pos_pool[rng.randint(pos_pool.size)])
        neg_pool = np.flatnonzero(identity != identity[a])
        ng = int(neg_pool[rng.randint(neg_pool.size)])
        sim_p = feats_a[a] @ feats_b[p]
        sim_n = feats_a[a] @ feats_b[ng]
        if sim_p > sim_n:
            kept += 1
    return kept / n_triplets


METRICS_HEADER = ["step", "domain_id", "kind", "mode", "mAP", "rank1"]


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Delimited metrics output; one row per (step, domain, mode)."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for r in rows:
            fh.write(
                "%d,%d,%s,%s,%.10g,%.10g\n"
                % (r["step"], r["domain_id"], r["kind"], r["mode"], r["mAP"], r["rank1"])
            )


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != METRICS_HEADER:
            raise CheckpointError("unexpected metrics header %r" % header)
        for line in fh:
            step, domain_id, kind, mode, m, r1 = line.strip().split(",")
            rows.append(
                {
                    "step": int(step),
                    "domain_id": int(domain_id),
                    "kind": kind,
                    "mode": mode,
                    "mAP": float(m),
                    "rank1": float(r1),
                }
            )
    return rows
