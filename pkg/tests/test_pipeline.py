"""Sequential adaptation driver: batching, EMA wiring, artifacts, determinism."""

import dataclasses
import os

import numpy as np
import pytest

from lifereid.clustering import ClusterAssignment
from lifereid.config import RunConfig
from lifereid.encoder import load_checkpoint
from lifereid.errors import InvalidConfig, NoClusters
from lifereid.evaluation import read_metrics_csv
from lifereid.pipeline import (
    encoder_sizes,
    identity_batch,
    init_state,
    run_sequence,
    run_step,
)
from lifereid.rng import STREAM_INIT, STREAM_TRAIN, SplitMix64, derive_seed
from lifereid.synth import generate_domain

from conftest import tiny_config


def test_encoder_sizes_compose_data_and_encoder_sections():
    cfg = RunConfig()
    assert encoder_sizes(cfg) == (64, 128, 32)
    assert encoder_sizes(tiny_config()) == (12, 16, 8)


def test_init_state_streams_and_emptiness():
    cfg = tiny_config()
    state = init_state(cfg)
    assert state.step == 0
    assert len(state.buffer) == 0
    assert state.buffer.capacity == cfg.n_mem
    assert state.rng_train.state == SplitMix64(derive_seed(11, STREAM_TRAIN)).state
    again = init_state(cfg)
    assert state.params_m.data.tobytes() == again.params_m.data.tobytes()
    # init stream is separate from the train stream
    assert derive_seed(11, STREAM_INIT) != derive_seed(11, STREAM_TRAIN)


def toy_assignment(labels):
    labels = np.asarray(labels, dtype=np.int64)
    n_c = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    protos = np.eye(max(n_c, 1))[:n_c]
    sizes = np.array([(labels == j).sum() for j in range(n_c)], dtype=np.int64)
    return ClusterAssignment(
        labels=labels,
        prototypes=protos,
        sizes=sizes,
        proxy_feats=protos,
        proxy_cluster=np.arange(n_c, dtype=np.int64),
        proxy_camera=np.zeros(n_c, dtype=np.int64),
    )


def test_identity_batch_shape_and_noise_exclusion():
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, -1, -1])
    assignment = toy_assignment(labels)
    rng = SplitMix64(5)
    for _ in range(20):
        idx, batch_labels = identity_batch(assignment, rng, n_p=2, n_k=3)
        assert idx.shape == (6,)
        assert np.array_equal(batch_labels, labels[idx])
        assert (batch_labels >= 0).all()  # noise rows are never drawn
        assert len(set(batch_labels.tolist())) == 2
        for j in set(batch_labels.tolist()):
            members = idx[batch_labels == j]
            assert len(set(members.tolist())) == 3  # without replacement


def test_identity_batch_small_cluster_replacement():
    assignment = toy_assignment(np.array([0, 1, 1, 1]))
    rng = SplitMix64(9)
    idx, batch_labels = identity_batch(assignment, rng, n_p=2, n_k=3)
    assert idx.shape == (6,)
    assert (idx[batch_labels == 0] == 0).all()  # singleton repeats itself


def test_identity_batch_requires_clusters():
    with pytest.raises(NoClusters):
        identity_batch(toy_assignment(np.array([-1, -1])), SplitMix64(1), 2, 2)


def test_run_step_report_and_buffer(tiny_cfg, tiny_domains):
    state = init_state(tiny_cfg)
    report = run_step(state, tiny_cfg, tiny_domains[0])
    assert report.domain_id == 0 and report.step == 1
    assert state.step == 1
    assert len(report.epochs) == tiny_cfg.schedule.epochs_per_step
    for log in report.epochs:
        assert not log.skipped
        assert log.n_clusters > 0 and log.n_noise >= 0
        assert set(log.mean_parts) == {"pa", "ia", "total"}
        assert np.isfinite(list(log.mean_parts.values())).all()
    assert report.buffer_new + report.buffer_old == len(state.buffer)
    assert report.buffer_old == 0
    assert 0 < len(state.buffer) <= tiny_cfg.n_mem


def test_rehearsal_terms_appear_once_buffer_is_populated(tiny_cfg, tiny_domains):
    state = init_state(tiny_cfg)
    run_step(state, tiny_cfg, tiny_domains[0])
    report2 = run_step(state, tiny_cfg, tiny_domains[1])
    for log in report2.epochs:
        assert set(log.mean_parts) == {"pa", "ia", "ps", "is", "total"}
    assert report2.buffer_old > 0  # retained entries from the first domain


def test_frozen_encoder_constant_within_step(tiny_cfg, tiny_domains):
    state = init_state(tiny_cfg)
    run_step(state, tiny_cfg, tiny_domains[0])
    at_step_start = state.params_m.data.copy()
    seen = []

    def hook(info):
        seen.append(info["theta_frozen"].data.tobytes())
        assert not info["theta_frozen"].data.flags.writeable

    run_step(state, tiny_cfg, tiny_domains[1], iter_hook=hook)
    assert len(seen) == 2 * 8  # epochs x iterations
    assert set(seen) == {at_step_start.tobytes()}


def test_momentum_follows_ema_recurrence(tiny_cfg, tiny_domains):
    state = init_state(tiny_cfg)
    prev_m = state.params_m.data.copy()
    trail = []

    def hook(info):
        trail.append((info["theta"].data.copy(), info["theta_m"].data.copy()))

    run_step(state, tiny_cfg, tiny_domains[0], iter_hook=hook)
    alpha = tiny_cfg.ema_alpha
    for theta, theta_m in trail:
        want = alpha * prev_m + (1.0 - alpha) * theta
        assert np.abs(theta_m - want).max() <= 1e-12
        prev_m = theta_m
    assert np.array_equal(state.params_m.data, trail[-1][1])


def test_sequence_is_deterministic(tiny_cfg, tiny_domains):
    seen = [0, 1]
    a = run_sequence(tiny_cfg, tiny_domains, seen)
    b = run_sequence(tiny_cfg, tiny_domains, seen)
    assert a.metrics == b.metrics
    assert a.state.params_m.data.tobytes() == b.state.params_m.data.tobytes()
    assert len(a.state.buffer) == len(b.state.buffer)


def test_sequence_metrics_layout(tiny_cfg, tiny_domains):
    result = run_sequence(tiny_cfg, tiny_domains, [0, 1])
    # per step: one self row per domain, one cross row per already-trained domain
    self_rows = [m for m in result.metrics if m["mode"] == "self"]
    cross_rows = [m for m in result.metrics if m["mode"] == "cross"]
    assert len(self_rows) == 2 * 3
    assert len(cross_rows) == 1 + 2
    kinds = {(m["domain_id"], m["kind"]) for m in result.metrics}
    assert ("2", "unseen") not in kinds  # ids stay ints
    assert {(0, "seen"), (1, "seen"), (2, "unseen")} <= kinds
    for m in result.metrics:
        assert 0.0 <= m["mAP"] <= 100.0 and 0.0 <= m["rank1"] <= 100.0
    # the snapshot is taken right after training, so the first cross test
    # of each domain coincides with its self test at that step
    first_cross = next(m for m in cross_rows if m["domain_id"] == 0)
    matching_self = next(
        m for m in self_rows if m["domain_id"] == 0 and m["step"] == first_cross["step"]
    )
    assert first_cross["mAP"] == matching_self["mAP"]


def test_sequence_order_override(tiny_cfg, tiny_domains):
    cfg = dataclasses.replace(tiny_cfg, order=(1, 0))
    result = run_sequence(cfg, tiny_domains, [0, 1])
    assert [r.domain_id for r in result.reports] == [1, 0]
    with pytest.raises(InvalidConfig, match="permutation"):
        run_sequence(dataclasses.replace(tiny_cfg, order=(0, 0)), tiny_domains, [0, 1])
    with pytest.raises(InvalidConfig, match="permutation"):
        run_sequence(dataclasses.replace(tiny_cfg, order=(0, 1, 2)), tiny_domains, [0, 1])


def test_sequence_writes_artifacts(tiny_cfg, tiny_domains, tmp_path):
    out = tmp_path / "run"
    result = run_sequence(tiny_cfg, tiny_domains, [0, 1], out_dir=str(out))
    assert (out / "config.json").is_file()
    assert RunConfig.from_json(out / "config.json").to_dict() == tiny_cfg.to_dict()
    rows = read_metrics_csv(out / "metrics.csv")
    assert len(rows) == len(result.metrics)
    for got, want in zip(rows, result.metrics):
        assert got["step"] == want["step"] and got["domain_id"] == want["domain_id"]
        assert got["mAP"] == pytest.approx(want["mAP"], rel=1e-9)
    for step in (1, 2):
        assert (out / "checkpoints" / ("step_%d.bin" % step)).is_file()
        assert (out / "buffer" / ("step_%d.bin" % step)).is_file()
    assert (out / "gallery_feats" / "step_1_domain_0.bin").is_file()
    assert not (out / "gallery_feats" / "step_1_domain_1.bin").exists()
    assert (out / "gallery_feats" / "step_2_domain_0.bin").is_file()
    assert (out / "gallery_feats" / "step_2_domain_1.bin").is_file()
    params, rng_state, extra = load_checkpoint(out / "checkpoints" / "step_2.bin")
    assert params.data.tobytes() == result.state.params_m.data.tobytes()
    assert rng_state == result.state.rng_train.state
    assert extra["step"] == 2 and extra["domain_id"] == 1


def test_sequence_rejects_dimension_mismatch(tiny_cfg, tiny_domains):
    cfg = dataclasses.replace(tiny_cfg, data=dataclasses.replace(tiny_cfg.data, d_in=13))
    with pytest.raises(InvalidConfig, match="input dims"):
        run_sequence(cfg, tiny_domains, [0, 1])
