"""Hybrid rehearsal buffer: one representative sample plus the frozen
prototype per kept cluster.

At each step boundary the fixed capacity is split between newly discovered
clusters and previously stored entries in proportion to their counts:

    n_new = floor(|P| * n_mem / (|P| + |P_old|)),   n_old = n_mem - n_new

with any shortfall on one side handed to the other, so the totals always add
to min(n_mem, |P| + |P_old|).  New entries come from the largest clusters;
each stores the member whose momentum feature is most similar to the cluster
prototype.  Old entries are retained largest-cluster-first.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterAssignment
from .errors import BothEmpty, CheckpointError, EmptyBuffer, LengthMismatch
from .rng import SplitMix64

BUFFER_MAGIC = b"LRBUF001"


@dataclass
class BufferEntry:
    sample: np.ndarray
    prototype: np.ndarray
    pseudo_identity: int
    source_domain: int
    camera_id: int
    source_cluster_size: int
    step_stored: int


def quotas(n_new_clusters: int, n_old_entries: int, n_mem: int) -> tuple[int, int]:
    """Split capacity between new clusters and old entries.

    Returns (n_new, n_old) with n_new <= n_new_clusters, n_old <=
    n_old_entries, and n_new + n_old = min(n_mem, available).
    """
    if n_new_clusters < 0 or n_old_entries < 0 or n_mem < 0:
        raise ValueError("counts must be nonnegative")
    if n_new_clusters == 0 and n_old_entries == 0:
        raise BothEmpty("no clusters and no stored entries to draw from")
    n_new = (n_new_clusters * n_mem) // (n_new_clusters + n_old_entries)
    n_old = n_mem - n_new
    if n_new > n_new_clusters:
        n_old = min(n_old_entries, n_old + (n_new - n_new_clusters))
        n_new = n_new_clusters
    if n_old > n_old_entries:
        n_new = min(n_new_clusters, n_new + (n_old - n_old_entries))
        n_old = n_old_entries
    return n_new, n_old


def select_new(
    assignment: ClusterAssignment,
    samples: np.ndarray,
    camera_ids: np.ndarray,
    momentum_feats: np.ndarray,
    n_new: int,
    source_domain: int,
    step_stored: int,
    next_identity: int,
) -> tuple[list[BufferEntry], int]:
    """Entries for the n_new largest clusters (ties to the lower cluster id).

    Within a cluster the stored sample is the member with maximal cosine
    similarity between its momentum feature and the prototype, ties to the
    lowest sample index.
    """
    if not (len(samples) == len(camera_ids) == len(momentum_feats) == len(assignment.labels)):
        raise LengthMismatch("samples, cameras and features must align")
    order = sorted(range(assignment.n_clusters), key=lambda j: (-int(assignment.sizes[j]), j))
    entries = []
    for j in order[:n_new]:
        members = np.flatnonzero(assignment.labels == j)
        sims = momentum_feats[members] @ assignment.prototypes[j]
        best = members[int(np.argmax(sims))]
        entries.append(
            BufferEntry(
                sample=np.array(samples[best], dtype=np.float64),
                prototype=np.array(assignment.prototypes[j], dtype=np.float64),
                pseudo_identity=next_identity,
                source_domain=int(source_domain),
                camera_id=int(camera_ids[best]),
                source_cluster_size=int(assignment.sizes[j]),
                step_stored=int(step_stored),
            )
        )
        next_identity += 1
    return entries, next_identity


def retain_old(entries: list[BufferEntry], n_old: int) -> list[BufferEntry]:
    """Keep the n_old entries from the largest source clusters.

    Ties prefer the most recently stored, then the lower pseudo-identity.
    """
    ranked = sorted(
        entries,
        key=lambda e: (-e.source_cluster_size, -e.step_stored, e.pseudo_identity),
    )
    return ranked[:n_old]


@dataclass
class MemoryBuffer:
    capacity: int
    entries: list[BufferEntry] = field(default_factory=list)
    next_identity: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def update(
        self,
        assignment: ClusterAssignment,
        samples: np.ndarray,
        camera_ids: np.ndarray,
        momentum_feats: np.ndarray,
        source_domain: int,
        step_stored: int,
    ) -> tuple[int, int]:
        """Apply the quota split once at a step boundary; returns (n_new, n_old)."""
        n_new, n_old = quotas(assignment.n_clusters, len(self.entries), self.capacity)
        kept = retain_old(self.entries, n_old)
        new_entries, self.next_identity = select_new(
            assignment,
            samples,
            camera_ids,
            momentum_feats,
            n_new,
            source_domain,
            step_stored,
            self.next_identity,
        )
        self.entries = kept + new_entries
        return n_new, n_old

    def prototype_matrix(self) -> np.ndarray:
        if not self.entries:
            raise EmptyBuffer("no stored prototypes")
        return np.stack([e.prototype for e in self.entries])

    def sample_batch(self, rng: SplitMix64, batch_size: int) -> list[BufferEntry]:
        """Uniform draw of distinct stored identities, without replacement."""
        if not self.entries:
            raise EmptyBuffer("cannot sample from an empty buffer")
        k = min(batch_size, len(self.entries))
        idx = rng.choice_without_replacement(len(self.entries), k)
        return [self.entries[i] for i in idx]

    def save(self, path) -> None:
        """Versioned binary dump; round-trips bit for bit."""
        n = len(self.entries)
        d_in = self.entries[0].sample.size if n else 0
        d_out = self.entries[0].prototype.size if n else 0
        header = {
            "capacity": self.capacity,
            "next_identity": self.next_identity,
            "n": n,
            "d_in": d_in,
            "d_out": d_out,
            "pseudo_identity": [e.pseudo_identity for e in self.entries],
            "source_domain": [e.source_domain for e in self.entries],
            "camera_id": [e.camera_id for e in self.entries],
            "source_cluster_size": [e.source_cluster_size for e in self.entries],
            "step_stored": [e.step_stored for e in self.entries],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(BUFFER_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            if n:
                samples = np.stack([e.sample for e in self.entries])
                protos = np.stack([e.prototype for e in self.entries])
                fh.write(np.ascontiguousarray(samples, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(protos, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "MemoryBuffer":
        with open(path, "rb") as fh:
            magic = fh.read(len(BUFFER_MAGIC))
            if magic != BUFFER_MAGIC:
                raise CheckpointError("bad buffer magic %r" % magic)
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            raw = fh.read()
        n, d_in, d_out = header["n"], header["d_in"], header["d_out"]
        expected = n * (d_in + d_out) * 8
        if len(raw) != expected:
            raise CheckpointError("buffer payload has %d bytes, need %d" % (len(raw), expected))
        buf = cls(capacity=int(header["capacity"]), next_identity=int(header["next_identity"]))
        if n:
            samples = np.frombuffer(raw[: n * d_in * 8], dtype="<f8").reshape(n, d_in)
            protos = np.frombuffer(raw[n * d_in * 8 :], dtype="<f8").reshape(n, d_out)
            for i in range(n):
                buf.entries.append(
                    BufferEntry(
                        sample=samples[i].astype(np.float64),
                        prototype=protos[i].astype(np.float64),
                        pseudo_identity=int(header["pseudo_identity"][i]),
                        source_domain=int(header["source_domain"][i]),
                        camera_id=int(header["camera_id"][i]),
                        source_cluster_size=int(header["source_cluster_size"][i]),
                        step_stored=int(header["step_stored"][i]),
                    )
                )
        return buf
