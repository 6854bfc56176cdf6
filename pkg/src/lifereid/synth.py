"""Synthetic identity domains.

Each domain is a random linear view of a shared generative recipe: identity
prototypes drawn uniformly on the unit sphere, additive per-camera offset
vectors of fixed norm, and isotropic Gaussian sample noise.  A sample of
identity u under camera c is

    x = A @ (u + offset_c + eps) + b + eta,
    eps ~ N(0, sigma^2 I),  eta ~ N(0, ambient_sigma^2 I)

where A = R2 @ diag(s) @ R1 with R1, R2 uniformly random rotations (QR of a
Gaussian matrix with the R diagonal sign fix) and singular values s drawn
log-uniformly from [1/transform_condition, 1].  The split between in-domain
noise eps (squashed together with the signal) and ambient noise eta (added
after the transform) is what makes the benchmark behave like a continual
learning problem: directions that A squashes carry signal drowned in
ambient noise, so raw cosine similarity is a mediocre ranking signal, and
the encoder must learn to favor the strong directions of this particular A
to denoise.  That subspace differs per domain, so an encoder adapted to a
later domain degrades on earlier ones unless something counteracts the
drift.  With transform_condition = 1 and ambient_noise_sigma = 0 the
domains become cosine-isomorphic and nothing forgets.

Draw order per domain (one block per call, see rng.py for block semantics):
R1 normals (d*d), singular-value uniforms (d), R2 normals (d*d), bias
normals (d), camera-offset normals (n_cam*d), prototype normals
((n_train+n_test)*d), then per split (train first, test second) one latent
noise block and one ambient noise block.

Identity ids are globally unique: domain_id * 100000 + local index, with
test identities offset by 50000.  Per test identity and camera, the first
sample goes to the query split and the rest to the gallery.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import HeaderMismatch, InvalidSpec, MalformedRow
from .rng import STREAM_DATA, SplitMix64, derive_seed

_ID_STRIDE = 100000
_TEST_ID_OFFSET = 50000


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    seed: int
    n_train_identities: int = 100
    n_test_identities: int = 50
    n_cameras: int = 4
    samples_per_id_per_camera: int = 4
    d_in: int = 64
    noise_sigma: float = 0.05
    camera_offset_norm: float = 0.2
    bias_scale: float = 0.1
    transform_condition: float = 8.0
    ambient_noise_sigma: float = 0.03

    def __post_init__(self):
        if min(self.n_train_identities, self.n_test_identities) < 1:
            raise InvalidSpec("need at least one identity per split")
        if self.n_cameras < 2:
            raise InvalidSpec("need at least two cameras for cross-camera retrieval")
        if self.samples_per_id_per_camera < 2:
            raise InvalidSpec("need at least two samples per identity and camera")
        if self.d_in < 2 or self.noise_sigma < 0 or self.ambient_noise_sigma < 0:
            raise InvalidSpec("bad dimensionality or noise level")
        if self.transform_condition < 1.0:
            raise InvalidSpec("transform_condition must be at least 1")


@dataclass
class DomainData:
    domain_id: int
    train_x: np.ndarray
    train_identity: np.ndarray
    train_camera: np.ndarray
    query_x: np.ndarray
    query_identity: np.ndarray
    query_camera: np.ndarray
    gallery_x: np.ndarray
    gallery_identity: np.ndarray
    gallery_camera: np.ndarray


def _random_rotation(rng: SplitMix64, d: int) -> np.ndarray:
    g = rng.normal(d * d).reshape(d, d)
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diagonal(r))[None, :]


def generate_domain(spec: DomainSpec) -> DomainData:
    """Deterministic domain synthesis from spec.seed alone."""
    rng = SplitMix64(spec.seed)
    d = spec.d_in
    r1 = _random_rotation(rng, d)
    scales = np.exp(rng.random(d) * -np.log(spec.transform_condition))
    r2 = _random_rotation(rng, d)
    transform = r2 @ (scales[:, None] * r1)
    bias = rng.normal(d) * spec.bias_scale
    offsets = rng.normal(spec.n_cameras * d).reshape(spec.n_cameras, d)
    offsets = offsets / np.linalg.norm(offsets, axis=1)[:, None] * spec.camera_offset_norm
    n_ids = spec.n_train_identities + spec.n_test_identities
    protos = rng.normal(n_ids * d).reshape(n_ids, d)
    protos = protos / np.linalg.norm(protos, axis=1)[:, None]

    def synth(protos_split: np.ndarray, ids_split: np.ndarray) -> tuple[np.ndarray, ...]:
        n_id = protos_split.shape[0]
        reps = spec.samples_per_id_per_camera
        noise = rng.normal(n_id * spec.n_cameras * reps * d).reshape(
            n_id, spec.n_cameras, reps, d
        ) * spec.noise_sigma
        clean = protos_split[:, None, None, :] + offsets[None, :, None, :] + noise
        x = clean.reshape(-1, d) @ transform.T + bias
        x = x + rng.normal(x.size).reshape(x.shape) * spec.ambient_noise_sigma
        ids = np.repeat(ids_split, spec.n_cameras * reps)
        cams = np.tile(np.repeat(np.arange(spec.n_cameras), reps), n_id)
        rep_idx = np.tile(np.arange(reps), n_id * spec.n_cameras)
        return x, ids, cams, rep_idx

    base = spec.domain_id * _ID_STRIDE
    train_ids = base + np.arange(spec.n_train_identities, dtype=np.int64)
    test_ids = base + _TEST_ID_OFFSET + np.arange(spec.n_test_identities, dtype=np.int64)

    train_x, train_id, train_cam, _ = synth(protos[: spec.n_train_identities], train_ids)
    test_x, test_id, test_cam, rep_idx = synth(protos[spec.n_train_identities :], test_ids)
    is_query = rep_idx == 0
    return DomainData(
        domain_id=spec.domain_id,
        train_x=train_x,
        train_identity=train_id,
        train_camera=train_cam.astype(np.int64),
        query_x=test_x[is_query],
        query_identity=test_id[is_query],
        query_camera=test_cam[is_query].astype(np.int64),
        gallery_x=test_x[~is_query],
        gallery_identity=test_id[~is_query],
        gallery_camera=test_cam[~is_query].astype(np.int64),
    )


@dataclass(frozen=True)
class AugmentConfig:
    sigma: float = 0.1
    p_mask: float = 0.1


def augment_batch(
    x: np.ndarray, rng: SplitMix64, cfg: AugmentConfig, strong: bool
) -> np.ndarray:
    """Weak augmentation is the identity; strong adds noise then masks.

    Strong draws one normal block (x.size) and one uniform block (x.size),
    in that order, even when sigma or p_mask is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if not strong:
        return x.copy()
    out = x + rng.normal(x.size).reshape(x.shape) * cfg.sigma
    mask = rng.random(x.size).reshape(x.shape) < cfg.p_mask
    out[mask] = 0.0
    return out


def default_domain_specs(
    master_seed: int,
    n_seen: int = 3,
    n_unseen: int = 2,
    **overrides,
) -> list[tuple[DomainSpec, bool]]:
    """(spec, is_seen) pairs; domain d is seeded from (master, STREAM_DATA, d)."""
    out = []
    for d in range(n_seen + n_unseen):
        spec = DomainSpec(
            domain_id=d, seed=derive_seed(master_seed, STREAM_DATA, d), **overrides
        )
        out.append((spec, d < n_seen))
    return out


# ---------------------------------------------------------------------------
# dataset directory: one CSV per domain plus a manifest

def _csv_header(d: int) -> list[str]:
    return ["domain_id", "split", "identity_id", "camera_id"] + ["f%d" % i for i in range(d)]


def write_domain_csv(path, data: DomainData) -> None:
    d = data.train_x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_csv_header(d))
        for split, xs, ids, cams in (
            ("train", data.train_x, data.train_identity, data.train_camera),
            ("query", data.query_x, data.query_identity, data.query_camera),
            ("gallery", data.gallery_x, data.gallery_identity, data.gallery_camera),
        ):
            for x, i, c in zip(xs, ids, cams):
                w.writerow(
                    [data.domain_id, split, int(i), int(c)] + ["%.17g" % v for v in x]
                )


def read_domain_csv(path) -> DomainData:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or len(header) < 5 or header[:4] != _csv_header(len(header) - 4)[:4]:
            raise HeaderMismatch("unexpected header in %s" % path)
        d = len(header) - 4
        if header != _csv_header(d):
            raise HeaderMismatch("feature columns must be f0..f%d" % (d - 1))
        rows = {"train": [], "query": [], "gallery": []}
        domain_id = None
        for ln, row in enumerate(r, start=2):
            if len(row) != 4 + d:
                raise MalformedRow("%s line %d: %d fields, expected %d" % (path, ln, len(row), 4 + d))
            try:
                dom, split, ident, cam = int(row[0]), row[1], int(row[2]), int(row[3])
                feats = np.array([float(v) for v in row[4:]], dtype=np.float64)
            except ValueError as exc:
                raise MalformedRow("%s line %d: %s" % (path, ln, exc)) from exc
            if split not in rows:
                raise MalformedRow("%s line %d: unknown split %r" % (path, ln, split))
            domain_id = dom if domain_id is None else domain_id
            if dom != domain_id:
                raise MalformedRow("%s line %d: mixed domain ids" % (path, ln))
            rows[split].append((feats, ident, cam))

    def stack(items):
        if not items:
            return np.zeros((0, d)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        xs = np.stack([f for f, _, _ in items])
        ids = np.array([i for _, i, _ in items], dtype=np.int64)
        cams = np.array([c for _, _, c in items], dtype=np.int64)
        return xs, ids, cams

    tx, ti, tc = stack(rows["train"])
    qx, qi, qc = stack(rows["query"])
    gx, gi, gc = stack(rows["gallery"])
    return DomainData(int(domain_id), tx, ti, tc, qx, qi, qc, gx, gi, gc)


def write_dataset(out_dir, specs_and_flags: list[tuple[DomainSpec, bool]], master_seed: int) -> dict:
    """Generate every domain, write CSVs and manifest.json; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"master_seed": int(master_seed), "domains": []}
    for spec, seen in specs_and_flags:
        data = generate_domain(spec)
        fname = "domain_%02d.csv" % spec.domain_id
        write_domain_csv(os.path.join(out_dir, fname), data)
        entry = {"file": fname, "seen": bool(seen)}
        entry.update(
            {
                "domain_id": spec.domain_id,
                "seed": spec.seed,
                "n_train_identities": spec.n_train_identities,
                "n_test_identities": spec.n_test_identities,
                "n_cameras": spec.n_cameras,
                "samples_per_id_per_camera": spec.samples_per_id_per_camera,
                "d_in": spec.d_in,
                "noise_sigma": spec.noise_sigma,
                "camera_offset_norm": spec.camera_offset_norm,
                "bias_scale": spec.bias_scale,
                "transform_condition": spec.transform_condition,
                "ambient_noise_sigma": spec.ambient_noise_sigma,
            }
        )
        manifest["domains"].append(entry)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def read_dataset(data_dir) -> tuple[dict, dict[int, DomainData], list[int]]:
    """Load manifest and all domain CSVs.

    Returns (manifest, {domain_id: data}, seen domain ids in listed order).
    """
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    domains: dict[int, DomainData] = {}
    seen: list[int] = []
    for entry in manifest["domains"]:
        data = read_domain_csv(os.path.join(data_dir, entry["file"]))
        if data.domain_id != entry["domain_id"]:
            raise MalformedRow(
                "%s holds domain %d, manifest says %d"
                % (entry["file"], data.domain_id, entry["domain_id"])
            )
        domains[data.domain_id] = data
        if entry["seen"]:
            seen.append(data.domain_id)
    return manifest, domains, seen
