"""Shared fixtures.

The expensive piece is `bench`: the four-configuration training comparison
(full, rehearsal-disabled, each rehearsal loss alone) on the default
benchmark.  It runs once per session and is shared by the acceptance tests,
so asserting on it from several tests costs nothing extra.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np
import pytest

from lifereid.cli import _specs_from_config
from lifereid.clustering import DbscanParams
from lifereid.config import EncoderConfig, RunConfig, ScheduleConfig, apply_ablation
from lifereid.pipeline import RunResult, run_sequence
from lifereid.synth import generate_domain

BENCH_ABLATIONS = ("full", "pa-ia", "pa-ia-ps", "pa-ia-is")


def generate_config_domains(cfg: RunConfig):
    """(domains dict, seen ids) for the config's synthetic suite."""
    domains, seen = {}, []
    for spec, is_seen in _specs_from_config(cfg):
        domains[spec.domain_id] = generate_domain(spec)
        if is_seen:
            seen.append(spec.domain_id)
    return domains, seen


def final_self_map(result: RunResult, domain_id: int) -> float:
    last = max(r["step"] for r in result.metrics)
    for r in result.metrics:
        if r["step"] == last and r["domain_id"] == domain_id and r["mode"] == "self":
            return r["mAP"]
    raise AssertionError("no final self metric for domain %d" % domain_id)


def final_gap(result: RunResult, domain_id: int) -> float:
    """|self - cross| mAP at the final step for one domain."""
    last = max(r["step"] for r in result.metrics)
    by_mode = {
        r["mode"]: r["mAP"]
        for r in result.metrics
        if r["step"] == last and r["domain_id"] == domain_id
    }
    return abs(by_mode["self"] - by_mode["cross"])


@dataclass
class BenchResults:
    cfg: RunConfig
    domains: dict
    seen: list
    results: dict[str, RunResult]
    out_dirs: dict[str, str]
    elapsed: float


@pytest.fixture(scope="session")
def bench(tmp_path_factory) -> BenchResults:
    cfg = RunConfig()
    domains, seen = generate_config_domains(cfg)
    base = tmp_path_factory.mktemp("bench")
    out_dirs = {name: str(base / name.replace("-", "_")) for name in BENCH_ABLATIONS}
    results = {}
    t0 = time.perf_counter()
    for name in BENCH_ABLATIONS:
        run_cfg = apply_ablation(cfg, name)
        results[name] = run_sequence(run_cfg, domains, seen, out_dir=out_dirs[name])
    elapsed = time.perf_counter() - t0
    return BenchResults(
        cfg=cfg,
        domains=domains,
        seen=seen,
        results=results,
        out_dirs=out_dirs,
        elapsed=elapsed,
    )


def tiny_config(**overrides) -> RunConfig:
    """Small but fully engaged run: real clusters, noise points, quota splits."""
    cfg = RunConfig()
    cfg.master_seed = 11
    cfg.n_mem = 16
    cfg.data = dataclasses.replace(
        cfg.data,
        n_seen=2,
        n_unseen=1,
        n_train_identities=24,
        n_test_identities=10,
        n_cameras=2,
        samples_per_id_per_camera=2,
        d_in=12,
        transform_condition=2.0,
        ambient_noise_sigma=0.01,
    )
    cfg.encoder = EncoderConfig(hidden=(16,), d_out=8)
    cfg.schedule = ScheduleConfig(
        epochs_per_step=2, iterations_per_epoch=8, n_p=4, n_k=2, rehearsal_batch=8
    )
    cfg.dbscan = DbscanParams(eps=0.22, min_pts=2)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_domains(tiny_cfg):
    domains, seen = generate_config_domains(tiny_cfg)
    assert seen == [0, 1]
    return domains


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the one-line acceptance verdicts even when stdout was captured."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit_rows():
    def make(rng, n, d):
        m = rng.normal(n * d).reshape(n, d)
        return m / np.linalg.norm(m, axis=1)[:, None]

    return make
