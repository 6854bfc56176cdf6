"""Sequential adaptation over a domain stream.

One step adapts to one domain.  At the step boundary the momentum encoder is
frozen as the reference theta_frozen, the online encoder restarts from the
momentum weights, and Adam moments reset.  Every epoch re-clusters the clean
(un-augmented) momentum features of the training pool to refresh
pseudo-labels, prototypes, and camera proxies.  Every iteration draws an
identity-balanced current batch plus a rehearsal batch from the buffer,
applies the combined loss, takes one Adam step on the online encoder, and
moves the momentum encoder by EMA.  Only the momentum encoder is ever used
for inference, snapshots, and checkpoints.

Randomness within a step comes from one training stream, consumed in a fixed
order per iteration: batch indices, online strong view, momentum strong view,
then (when rehearsal is active) buffer indices, buffer online strong view,
buffer momentum strong view.  Inactive components draw nothing, so e.g. a
rehearsal-free run is bit-identical to a full run while the buffer is empty.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    ClusterAssignment,
    assign_and_summarize,
    dbscan,
    k_reciprocal_jaccard,
    pairwise_cosine_distance,
)
from .config import RunConfig
from .encoder import (
    AdamState,
    EncoderParams,
    adam_step,
    backward_batch,
    ema_update,
    forward_batch,
    freeze_snapshot,
    init_params,
    save_checkpoint,
)
from .errors import InvalidConfig, NoClusters
from .evaluation import (
    GallerySnapshot,
    cross_test,
    evaluate_domain,
    take_snapshot,
    write_metrics_csv,
)
from .losses import BatchView, l_overall
from .memory import MemoryBuffer, retain_old
from .rng import STREAM_INIT, STREAM_TRAIN, SplitMix64, derive_seed
from .synth import DomainData, augment_batch


@dataclass
class PipelineState:
    params_m: EncoderParams
    buffer: MemoryBuffer
    rng_train: SplitMix64
    step: int = 0


def encoder_sizes(cfg: RunConfig) -> tuple[int, ...]:
    return (cfg.data.d_in, *cfg.encoder.hidden, cfg.encoder.d_out)


def init_state(cfg: RunConfig) -> PipelineState:
    rng_init = SplitMix64(derive_seed(cfg.master_seed, STREAM_INIT))
    params = init_params(encoder_sizes(cfg), rng_init)
    return PipelineState(
        params_m=params.copy(),
        buffer=MemoryBuffer(capacity=cfg.n_mem),
        rng_train=SplitMix64(derive_seed(cfg.master_seed, STREAM_TRAIN)),
    )


def identity_batch(
    assignment: ClusterAssignment, rng: SplitMix64, n_p: int, n_k: int
) -> tuple[np.ndarray, np.ndarray]:
    """n_p distinct clusters, n_k members each; never selects noise.

    Members are drawn without replacement unless the cluster is smaller than
    n_k, in which case draws are with replacement.
    """
    n_clusters = assignment.n_clusters
    if n_clusters == 0:
        raise NoClusters("no clusters to sample a batch from")
    chosen = rng.choice_without_replacement(n_clusters, min(n_p, n_clusters))
    indices = []
    for j in chosen:
        members = np.flatnonzero(assignment.labels == j)
        if members.size >= n_k:
            indices.extend(members[rng.choice_without_replacement(members.size, n_k)])
        else:
            indices.extend(members[rng.randint(members.size)] for _ in range(n_k))
    idx = np.asarray(indices, dtype=np.int64)
    return idx, assignment.labels[idx]


@dataclass
class EpochLog:
    epoch: int
    n_clusters: int
    n_noise: int
    skipped: bool
    mean_parts: dict


@dataclass
class StepReport:
    domain_id: int
    step: int
    epochs: list[EpochLog] = field(default_factory=list)
    buffer_new: int = 0
    buffer_old: int = 0


def run_step(
    state: PipelineState,
    cfg: RunConfig,
    data: DomainData,
    iter_hook=None,
) -> StepReport:
    """Adapt to one domain in place; returns per-epoch logs."""
    sched = cfg.schedule
    report = StepReport(domain_id=data.domain_id, step=state.step + 1)

    theta_f = freeze_snapshot(state.params_m)
    theta = state.params_m.copy()
    adam = AdamState.zeros(theta)
    rng = state.rng_train

    rehearsal_possible = cfg.weights.lambda_ps != 0.0 or cfg.weights.lambda_is != 0.0
    stored_protos = state.buffer.prototype_matrix() if len(state.buffer) else None

    last_assignment: ClusterAssignment | None = None
    last_feats_m: np.ndarray | None = None

    for epoch in range(sched.epochs_per_step):
        feats_m, _ = forward_batch(state.params_m, data.train_x)
        dist = k_reciprocal_jaccard(pairwise_cosine_distance(feats_m), cfg.rerank)
        labels = dbscan(dist, cfg.dbscan)
        n_noise = int(np.count_nonzero(labels == -1))
        assignment = None
        if labels.max(initial=-1) >= 0:
            assignment = assign_and_summarize(feats_m, labels, data.train_camera)
        last_assignment, last_feats_m = assignment, feats_m

        rehearsal_active = rehearsal_possible and len(state.buffer) > 0
        if assignment is None and not rehearsal_active:
            report.epochs.append(
                EpochLog(epoch, 0, n_noise, skipped=True, mean_parts={})
            )
            continue

        part_sums: dict[str, float] = {}
        for _ in range(sched.iterations_per_epoch):
            current = cache_cur = None
            if assignment is not None:
                idx, batch_labels = identity_batch(assignment, rng, sched.n_p, sched.n_k)
                x = data.train_x[idx]
                x_on = augment_batch(x, rng, cfg.augment, strong=True)
                x_mo = augment_batch(x, rng, cfg.augment, strong=True)
                feats_on, cache_cur = forward_batch(theta, x_on)
                feats_mo, _ = forward_batch(state.params_m, x_mo)
                current = BatchView(
                    online_feats=feats_on,
                    momentum_feats=feats_mo,
                    pseudo_labels=batch_labels,
                    camera_ids=data.train_camera[idx],
                )
            buffer_view = cache_buf = None
            if rehearsal_active:
                entries = state.buffer.sample_batch(rng, sched.rehearsal_batch)
                xb = np.stack([e.sample for e in entries])
                xb_on = augment_batch(xb, rng, cfg.augment, strong=True)
                xb_mo = augment_batch(xb, rng, cfg.augment, strong=True)
                fb_on, cache_buf = forward_batch(theta, xb_on)
                fb_mo, _ = forward_batch(state.params_m, xb_mo)
                fb_frozen, _ = forward_batch(theta_f, xb)
                buffer_view = BatchView(
                    online_feats=fb_on,
                    momentum_feats=fb_mo,
                    pseudo_labels=np.array([e.pseudo_identity for e in entries]),
                    camera_ids=np.array([e.camera_id for e in entries]),
                    frozen_feats_weak=fb_frozen,
                )

            total, g_cur, g_buf, parts = l_overall(
                current,
                buffer_view,
                assignment.prototypes if assignment is not None else None,
                assignment,
                stored_protos,
                cfg.temperatures,
                cfg.weights,
            )
            grad = np.zeros_like(theta.data)
            if g_cur is not None:
                grad += backward_batch(theta, cache_cur, g_cur)
            if g_buf is not None:
                grad += backward_batch(theta, cache_buf, g_buf)
            theta = adam_step(theta, grad, adam, cfg.optimizer, epoch)
            state.params_m = ema_update(state.params_m, theta, cfg.ema_alpha)
            for k, v in parts.items():
                part_sums[k] = part_sums.get(k, 0.0) + v
            part_sums["total"] = part_sums.get("total", 0.0) + total
            if iter_hook is not None:
                iter_hook(
                    {
                        "step": state.step + 1,
                        "epoch": epoch,
                        "theta": theta,
                        "theta_m": state.params_m,
                        "theta_frozen": theta_f,
                        "parts": parts,
                        "total": total,
                    }
                )
        n_it = sched.iterations_per_epoch
        report.epochs.append(
            EpochLog(
                epoch,
                0 if assignment is None else assignment.n_clusters,
                n_noise,
                skipped=False,
                mean_parts={k: v / n_it for k, v in part_sums.items()},
            )
        )

    # step-boundary buffer maintenance, driven by the last clustering pass
    if last_assignment is not None:
        report.buffer_new, report.buffer_old = state.buffer.update(
            last_assignment,
            data.train_x,
            data.train_camera,
            last_feats_m,
            source_domain=data.domain_id,
            step_stored=state.step + 1,
        )
    elif len(state.buffer):
        keep = min(state.buffer.capacity, len(state.buffer))
        state.buffer.entries = retain_old(state.buffer.entries, keep)
        report.buffer_old = keep

    state.step += 1
    return report


@dataclass
class RunResult:
    metrics: list[dict]
    reports: list[StepReport]
    state: PipelineState
    out_dir: str | None


def run_sequence(
    cfg: RunConfig,
    domains: dict[int, DomainData],
    seen_ids: list[int],
    out_dir: str | None = None,
    iter_hook=None,
) -> RunResult:
    """Train over the seen domains in order, evaluating everything after each step.

    Writes (when out_dir is given): config.json, metrics.csv,
    checkpoints/step_{s}.bin, buffer/step_{s}.bin, and
    gallery_feats/step_{s}_domain_{d}.bin for every trained seen domain.
    """
    order = list(cfg.order) if cfg.order is not None else list(seen_ids)
    if sorted(order) != sorted(seen_ids):
        raise InvalidConfig(
            "order %r is not a permutation of the seen domains %r" % (order, seen_ids)
        )
    for d in domains.values():
        if d.train_x.shape[1] != cfg.data.d_in:
            raise InvalidConfig(
                "domain %d has %d input dims, config says %d"
                % (d.domain_id, d.train_x.shape[1], cfg.data.d_in)
            )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for sub in ("checkpoints", "buffer", "gallery_feats"):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
        cfg.dump_json(os.path.join(out_dir, "config.json"))

    state = init_state(cfg)
    first_trained: dict[int, GallerySnapshot] = {}
    metrics: list[dict] = []
    reports: list[StepReport] = []

    for dom_id in order:
        report = run_step(state, cfg, domains[dom_id], iter_hook=iter_hook)
        reports.append(report)
        step = state.step

        if dom_id not in first_trained:
            first_trained[dom_id] = take_snapshot(state.params_m, domains[dom_id], step)

        if out_dir is not None:
            save_checkpoint(
                os.path.join(out_dir, "checkpoints", "step_%d.bin" % step),
                state.params_m,
                rng_state=state.rng_train.state,
                extra={"step": step, "domain_id": dom_id},
            )
            state.buffer.save(os.path.join(out_dir, "buffer", "step_%d.bin" % step))
            for d in sorted(first_trained):
                snap = take_snapshot(state.params_m, domains[d], step)
                snap.save(
                    os.path.join(out_dir, "gallery_feats", "step_%d_domain_%d.bin" % (step, d))
                )

        for d in sorted(domains):
            kind = "seen" if d in seen_ids else "unseen"
            m, r1 = evaluate_domain(state.params_m, domains[d], cfg.threads)
            metrics.append(
                {"step": step, "domain_id": d, "kind": kind, "mode": "self", "mAP": m, "rank1": r1}
            )
            if d in first_trained:
                cm, cr1 = cross_test(state.params_m, domains[d], first_trained[d], cfg.threads)
                metrics.append(
                    {
                        "step": step,
                        "domain_id": d,
                        "kind": kind,
                        "mode": "cross",
                        "mAP": cm,
                        "rank1": cr1,
                    }
                )

    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
    return RunResult(metrics=metrics, reports=reports, state=state, out_dir=out_dir)
