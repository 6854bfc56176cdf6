"""Finite-difference verification of end-to-end parameter gradients.

For each loss, build a random scene (tiny two-hidden-layer encoder, random
batch, random constants for the momentum/frozen sides), compose
loss(features(params)), and compare the analytic parameter gradient against
central differences (f(p + h e_i) - f(p - h e_i)) / 2h in float64.

The reported error for a trial is

    max_i |g_an_i - g_fd_i| / max(1, ||g_an||_inf, ||g_fd||_inf)

so it is scale-free for large gradients and absolute for small ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment
from .encoder import EncoderParams, backward_batch, forward_batch, init_params
from .losses import BatchView, LossWeights, l_cam, l_ia, l_is, l_overall, l_pa, l_ps
from .numerics import Temperatures, normalize_rows
from .rng import STREAM_GRADCHECK, SplitMix64, derive_seed

LOSS_NAMES = ("pa", "ia", "cam", "ps", "is", "overall")
DEFAULT_SIZES = (6, 5, 4, 3)
DEFAULT_TOLERANCE = 1e-5
DEFAULT_STEP = 1e-6


@dataclass
class Scene:
    """Everything a loss needs besides the online parameters."""

    params: EncoderParams
    x_cur: np.ndarray
    labels: np.ndarray
    cams: np.ndarray
    momentum_cur: np.ndarray
    prototypes: np.ndarray
    assignment: ClusterAssignment
    x_buf: np.ndarray
    momentum_buf: np.ndarray
    frozen_buf: np.ndarray
    stored_protos: np.ndarray
    temps: Temperatures
    weights: LossWeights


def _random_unit_rows(rng: SplitMix64, n: int, d: int) -> np.ndarray:
    return normalize_rows(rng.normal(n * d).reshape(n, d))


def build_scene(seed: int, sizes: tuple[int, ...] = DEFAULT_SIZES) -> Scene:
    rng = SplitMix64(seed)
    d_in, d_out = sizes[0], sizes[-1]
    params = init_params(sizes, rng)
    params_m = init_params(sizes, rng)
    params_f = init_params(sizes, rng)

    n_p, n_k = 4, 2
    n = n_p * n_k
    x_cur = rng.normal(n * d_in).reshape(n, d_in)
    labels = np.repeat(np.arange(n_p), n_k)
    cams = np.array([int(rng.randint(2)) for _ in range(n)], dtype=np.int64)
    momentum_cur, _ = forward_batch(params_m, x_cur + 0.1 * rng.normal(n * d_in).reshape(n, d_in))
    prototypes = _random_unit_rows(rng, n_p, d_out)

    proxy_feats, proxy_cluster, proxy_camera = [], [], []
    for j in range(n_p):
        for c in range(2):
            proxy_feats.append(_random_unit_rows(rng, 1, d_out)[0])
            proxy_cluster.append(j)
            proxy_camera.append(c)
    assignment = ClusterAssignment(
        labels=labels,
        prototypes=prototypes,
        sizes=np.full(n_p, n_k, dtype=np.int64),
        proxy_feats=np.asarray(proxy_feats),
        proxy_cluster=np.asarray(proxy_cluster, dtype=np.int64),
        proxy_camera=np.asarray(proxy_camera, dtype=np.int64),
    )

    m = 6
    x_buf = rng.normal(m * d_in).reshape(m, d_in)
    momentum_buf, _ = forward_batch(params_m, x_buf + 0.1 * rng.normal(m * d_in).reshape(m, d_in))
    frozen_buf, _ = forward_batch(params_f, x_buf)
    stored_protos = _random_unit_rows(rng, 5, d_out)

    return Scene(
        params=params,
        x_cur=x_cur,
        labels=labels,
        cams=cams,
        momentum_cur=momentum_cur,
        prototypes=prototypes,
        assignment=assignment,
        x_buf=x_buf,
        momentum_buf=momentum_buf,
        frozen_buf=frozen_buf,
        stored_protos=stored_protos,
        temps=Temperatures(),
        weights=LossWeights(lambda_cam=0.5, n_neg=3),
    )


def loss_and_grad(scene: Scene, name: str, flat: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss value and analytic parameter gradient at the given flat params."""
    params = EncoderParams(scene.params.sizes, flat)
    t, w = scene.temps, scene.weights
    if name == "overall":
        feats_cur, cache_cur = forward_batch(params, scene.x_cur)
        feats_buf, cache_buf = forward_batch(params, scene.x_buf)
        current = BatchView(feats_cur, scene.momentum_cur, scene.labels, scene.cams)
        buffer = BatchView(
            feats_buf,
            scene.momentum_buf,
            np.arange(len(scene.x_buf)),
            np.zeros(len(scene.x_buf), dtype=np.int64),
            frozen_feats_weak=scene.frozen_buf,
        )
        total, g_cur, g_buf, _ = l_overall(
            current, buffer, scene.prototypes, scene.assignment, scene.stored_protos, t, w
        )
        grad = backward_batch(params, cache_cur, g_cur) + backward_batch(params, cache_buf, g_buf)
        return total, grad

    if name in ("pa", "ia", "cam"):
        feats, cache = forward_batch(params, scene.x_cur)
        if name == "pa":
            v, g = l_pa(feats, scene.labels, scene.prototypes, t.pa)
        elif name == "ia":
            v, g = l_ia(feats, scene.momentum_cur, scene.labels, t.ia, w.n_hard_pos)
        else:
            v, g = l_cam(feats, scene.labels, scene.cams, scene.assignment, t.cam, w.n_neg)
        return v, backward_batch(params, cache, g)

    feats, cache = forward_batch(params, scene.x_buf)
    if name == "ps":
        v, g = l_ps(feats, scene.frozen_buf, scene.stored_protos, t.ps)
    else:
        v, g = l_is(feats, scene.momentum_buf, scene.frozen_buf, t.is_)
    return v, backward_batch(params, cache, g)


def check_loss(scene: Scene, name: str, h: float = DEFAULT_STEP, corrupt: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients."""
    flat = scene.params.data
    _, g_an = loss_and_grad(scene, name, flat)
    if corrupt:
        g_an = g_an.copy()
        g_an[0] += 1e-3
    g_fd = np.empty_like(g_an)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up, _ = loss_and_grad(scene, name, bumped)
        bumped[i] = flat[i] - h
        down, _ = loss_and_grad(scene, name, bumped)
        g_fd[i] = (up - down) / (2.0 * h)
    scale = max(1.0, np.abs(g_an).max(), np.abs(g_fd).max())
    return float(np.abs(g_an - g_fd).max() / scale)


def run_gradient_checks(
    seed: int,
    trials: int,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt: bool = False,
    losses: tuple[str, ...] = LOSS_NAMES,
) -> dict[str, float]:
    """Worst observed error per loss over seeded random scenes."""
    worst = {name: 0.0 for name in losses}
    for trial in range(trials):
        scene = build_scene(derive_seed(seed, STREAM_GRADCHECK, trial))
        for name in losses:
            err = check_loss(scene, name, corrupt=corrupt)
            worst[name] = max(worst[name], err)
    return worst
