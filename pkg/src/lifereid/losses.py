"""Contrastive and consistency losses with exact feature-space gradients.

Each loss returns ``(value, grad)`` where ``grad`` is dL/d(online features),
shape (n, d).  Momentum features, frozen features, prototypes, and proxies
are constants: no gradient flows through them.  Hard-example selections
(hardest positive, nearest negatives) are treated as fixed once chosen, which
is exact almost everywhere.

Adaptation losses (current batch):
  l_pa   prototype contrastive against the cluster prototypes
  l_ia   instance contrastive of each anchor against its hardest positive and
         all momentum features of other identities
  l_cam  cross-camera proxy contrastive, optional

Rehearsal losses (buffer batch):
  l_ps   KL between stored-prototype distributions of the online prediction
         and the frozen reference
  l_is   KL between batchwise instance-similarity distributions of the online
         prediction and the frozen reference
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment
from .errors import (
    BatchTooSmall,
    EmptyPrototypeStore,
    IdentityWithSingleInstance,
    IndexOutOfRange,
    LengthMismatch,
    NoisyLabelInBatch,
)
from .numerics import Temperatures, stable_softmax


@dataclass(frozen=True)
class LossWeights:
    lambda_ia: float = 1.0
    lambda_cam: float = 0.0
    lambda_ps: float = 0.3
    lambda_is: float = 0.6
    n_neg: int = 50
    n_hard_pos: int = 1


@dataclass
class BatchView:
    """Feature views of one batch under the three encoders.

    online_feats carry gradient; everything else is constant.  The frozen
    view is of un-augmented inputs and is only needed by rehearsal losses.
    """

    online_feats: np.ndarray
    momentum_feats: np.ndarray
    pseudo_labels: np.ndarray
    camera_ids: np.ndarray
    frozen_feats_weak: np.ndarray | None = None


def _check_batch(feats: np.ndarray, labels: np.ndarray) -> None:
    if len(feats) != len(labels):
        raise LengthMismatch("features and labels must align")


def l_pa(
    online_feats: np.ndarray,
    pseudo_labels: np.ndarray,
    prototypes: np.ndarray,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Prototype contrastive: mean cross-entropy against own cluster prototype."""
    online_feats = np.asarray(online_feats, dtype=np.float64)
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    _check_batch(online_feats, pseudo_labels)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if prototypes.ndim != 2 or prototypes.shape[0] == 0:
        raise EmptyPrototypeStore("no prototypes")
    if np.any(pseudo_labels < 0):
        raise NoisyLabelInBatch("noise label in prototype contrastive batch")
    if np.any(pseudo_labels >= prototypes.shape[0]):
        raise IndexOutOfRange("pseudo label exceeds prototype count")
    n = online_feats.shape[0]
    probs = stable_softmax(online_feats @ prototypes.T / tau)
    picked = probs[np.arange(n), pseudo_labels]
    loss = float(np.mean(-np.log(picked)))
    grad = (probs @ prototypes - prototypes[pseudo_labels]) / (tau * n)
    return loss, grad


def _hard_positive_key(
    sims: np.ndarray, candidates: np.ndarray, momentum_feats: np.ndarray, k: int
) -> np.ndarray:
    """Mean of the k least similar positives; ties resolved to lower index."""
    order = np.argsort(sims, kind="stable")
    sel = candidates[order[: max(1, min(k, candidates.size))]]
    return momentum_feats[sel].mean(axis=0)


def l_ia(
    online_feats: np.ndarray,
    momentum_feats: np.ndarray,
    pseudo_labels: np.ndarray,
    tau: float,
    n_hard_pos: int = 1,
) -> tuple[float, np.ndarray]:
    """Instance contrastive with the hardest positive.

    Keys per anchor: the hardest-positive momentum feature (or the mean of the
    n_hard_pos hardest) plus the momentum features of every other identity in
    the batch.
    """
    online_feats = np.asarray(online_feats, dtype=np.float64)
    momentum_feats = np.asarray(momentum_feats, dtype=np.float64)
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    _check_batch(online_feats, pseudo_labels)
    if np.any(pseudo_labels < 0):
        raise NoisyLabelInBatch("noise label in instance contrastive batch")
    n = online_feats.shape[0]
    loss = 0.0
    grad = np.zeros_like(online_feats)
    for i in range(n):
        same = np.flatnonzero(pseudo_labels == pseudo_labels[i])
        same = same[same != i]
        if same.size == 0:
            raise IdentityWithSingleInstance(
                "anchor %d has no positive candidate in the batch" % i
            )
        pos_key = _hard_positive_key(
            momentum_feats[same] @ online_feats[i], same, momentum_feats, n_hard_pos
        )
        negs = np.flatnonzero(pseudo_labels != pseudo_labels[i])
        keys = np.vstack([pos_key[None, :], momentum_feats[negs]])
        probs = stable_softmax(keys @ online_feats[i] / tau)
        loss += -np.log(probs[0])
        grad[i] = (probs @ keys - keys[0]) / tau
    return float(loss / n), grad / n


def l_cam(
    online_feats: np.ndarray,
    pseudo_labels: np.ndarray,
    camera_ids: np.ndarray,
    assignment: ClusterAssignment,
    tau: float,
    n_neg: int,
) -> tuple[float, np.ndarray]:
    """Cross-camera proxy contrastive.

    Each anchor pulls toward the proxies of its own cluster under other
    cameras, against its n_neg nearest other-cluster proxies.  Anchors whose
    cluster spans a single camera contribute zero.
    """
    online_feats = np.asarray(online_feats, dtype=np.float64)
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    camera_ids = np.asarray(camera_ids, dtype=np.int64)
    _check_batch(online_feats, pseudo_labels)
    if np.any(pseudo_labels < 0):
        raise NoisyLabelInBatch("noise label in camera contrastive batch")
    n = online_feats.shape[0]
    loss = 0.0
    grad = np.zeros_like(online_feats)
    for i in range(n):
        own = assignment.proxy_cluster == pseudo_labels[i]
        pos_rows = np.flatnonzero(own & (assignment.proxy_camera != camera_ids[i]))
        if pos_rows.size == 0:
            continue
        neg_rows = np.flatnonzero(~own)
        if neg_rows.size:
            sims = assignment.proxy_feats[neg_rows] @ online_feats[i]
            nearest = np.argsort(-sims, kind="stable")[: min(n_neg, neg_rows.size)]
            neg_keys = assignment.proxy_feats[neg_rows[nearest]]
        else:
            neg_keys = np.zeros((0, online_feats.shape[1]))
        term_grad = np.zeros(online_feats.shape[1])
        term_loss = 0.0
        for p in pos_rows:
            keys = np.vstack([assignment.proxy_feats[p][None, :], neg_keys])
            probs = stable_softmax(keys @ online_feats[i] / tau)
            term_loss += -np.log(probs[0])
            term_grad += (probs @ keys - keys[0]) / tau
        loss += term_loss / pos_rows.size
        grad[i] = term_grad / pos_rows.size
    return float(loss / n), grad / n


def _kl_rows_and_grad(
    pred_logits: np.ndarray, ref_logits: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean KL(softmax(pred) || softmax(ref)) and its gradient in the pred logits."""
    p = stable_softmax(pred_logits)
    r = stable_softmax(ref_logits)
    u = np.log(p) - np.log(r)
    per_row = (p * u).sum(axis=1)
    g_logits = p * (u - per_row[:, None])
    return float(per_row.mean()), g_logits


def l_ps(
    online_feats: np.ndarray,
    frozen_feats_weak: np.ndarray,
    stored_prototypes: np.ndarray,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Prototype-similarity consistency over the stored prototypes.

    KL from the online prediction (strong view) to the frozen reference
    (weak view); only the prediction side carries gradient.
    """
    online_feats = np.asarray(online_feats, dtype=np.float64)
    frozen_feats_weak = np.asarray(frozen_feats_weak, dtype=np.float64)
    stored_prototypes = np.asarray(stored_prototypes, dtype=np.float64)
    if stored_prototypes.ndim != 2 or stored_prototypes.shape[0] == 0:
        raise EmptyPrototypeStore("no stored prototypes")
    if online_feats.shape != frozen_feats_weak.shape:
        raise LengthMismatch("online and frozen views must align")
    n = online_feats.shape[0]
    loss, g_logits = _kl_rows_and_grad(
        online_feats @ stored_prototypes.T / tau,
        frozen_feats_weak @ stored_prototypes.T / tau,
    )
    return loss, g_logits @ stored_prototypes / (tau * n)


def l_is(
    online_feats: np.ndarray,
    momentum_feats: np.ndarray,
    frozen_feats_weak: np.ndarray,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Instance-similarity consistency within the batch.

    Prediction: each online feature against all momentum features of the
    batch (its own included).  Reference: the frozen weak features against
    themselves.  KL is averaged over anchors.
    """
    online_feats = np.asarray(online_feats, dtype=np.float64)
    momentum_feats = np.asarray(momentum_feats, dtype=np.float64)
    frozen_feats_weak = np.asarray(frozen_feats_weak, dtype=np.float64)
    n = online_feats.shape[0]
    if n < 2:
        raise BatchTooSmall("instance similarity needs at least two items")
    if momentum_feats.shape != online_feats.shape or frozen_feats_weak.shape != online_feats.shape:
        raise LengthMismatch("batch views must have identical shapes")
    loss, g_logits = _kl_rows_and_grad(
        online_feats @ momentum_feats.T / tau,
        frozen_feats_weak @ frozen_feats_weak.T / tau,
    )
    return loss, g_logits @ momentum_feats / (tau * n)


def l_overall(
    current: BatchView | None,
    buffer: BatchView | None,
    prototypes: np.ndarray | None,
    assignment: ClusterAssignment | None,
    stored_prototypes: np.ndarray | None,
    temps: Temperatures,
    weights: LossWeights,
) -> tuple[float, np.ndarray | None, np.ndarray | None, dict]:
    """Weighted sum of active losses.

    Returns (total, grad wrt current online feats, grad wrt buffer online
    feats, per-term values).  Adaptation terms require a current batch;
    rehearsal terms require a buffer batch.  Terms with weight exactly zero
    are skipped entirely.
    """
    total = 0.0
    parts: dict[str, float] = {}
    grad_cur = None
    grad_buf = None

    if current is not None:
        v, g = l_pa(current.online_feats, current.pseudo_labels, prototypes, temps.pa)
        parts["pa"] = v
        total += v
        grad_cur = g
        if weights.lambda_ia != 0.0:
            v, g = l_ia(
                current.online_feats,
                current.momentum_feats,
                current.pseudo_labels,
                temps.ia,
                weights.n_hard_pos,
            )
            parts["ia"] = v
            total += weights.lambda_ia * v
            grad_cur += weights.lambda_ia * g
        if weights.lambda_cam != 0.0:
            v, g = l_cam(
                current.online_feats,
                current.pseudo_labels,
                current.camera_ids,
                assignment,
                temps.cam,
                weights.n_neg,
            )
            parts["cam"] = v
            total += weights.lambda_cam * v
            grad_cur += weights.lambda_cam * g

    if buffer is not None:
        if weights.lambda_ps != 0.0:
            v, g = l_ps(
                buffer.online_feats, buffer.frozen_feats_weak, stored_prototypes, temps.ps
            )
            parts["ps"] = v
            total += weights.lambda_ps * v
            grad_buf = weights.lambda_ps * g
        # over a single-item batch the instance-similarity distributions are
        # both the point mass, so the term is exactly zero; skip it
        if weights.lambda_is != 0.0 and len(buffer.online_feats) >= 2:
            v, g = l_is(
                buffer.online_feats, buffer.momentum_feats, buffer.frozen_feats_weak, temps.is_
            )
            parts["is"] = v
            total += weights.lambda_is * v
            grad_buf = g * weights.lambda_is if grad_buf is None else grad_buf + weights.lambda_is * g

    return total, grad_cur, grad_buf, parts
