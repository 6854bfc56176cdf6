"""Small MLP feature encoder with exact manual gradients.

Architecture: fully connected layers sized ``sizes = (d_in, h_1, ..., d_out)``
with tanh on every hidden layer, a linear output layer, and L2 normalization
of the output so features live on the unit sphere.  The normalization is part
of the model; its Jacobian (I - ff^T) / ||y|| is applied during backprop, so
any upstream gradient component parallel to the feature is annihilated.

Parameters are stored as one flat float64 vector (row-major W then b, layer by
layer), which makes the momentum update, Adam, and checkpointing trivial and
keeps reduction order fixed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, DimensionMismatch, LayoutMismatch
from .numerics import NORM_TOL
from .rng import SplitMix64

CHECKPOINT_MAGIC = b"LRENC001"


def _offsets(sizes: tuple[int, ...]) -> list[tuple[int, int, int]]:
    """Per layer: (start of W, start of b, end), into the flat vector."""
    out = []
    pos = 0
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        w0 = pos
        b0 = pos + d_in * d_out
        pos = b0 + d_out
        out.append((w0, b0, pos))
    return out


def n_params(sizes: tuple[int, ...]) -> int:
    return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


@dataclass
class EncoderParams:
    """Layer size tuple plus the flat parameter vector."""

    sizes: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2:
            raise LayoutMismatch("need at least input and output sizes")
        if self.data.shape != (n_params(self.sizes),):
            raise LayoutMismatch(
                "flat vector has %d entries, layout needs %d"
                % (self.data.size, n_params(self.sizes))
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat vector, one pair per layer."""
        out = []
        for (w0, b0, end), (d_in, d_out) in zip(
            _offsets(self.sizes), zip(self.sizes[:-1], self.sizes[1:])
        ):
            out.append((self.data[w0:b0].reshape(d_out, d_in), self.data[b0:end]))
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.sizes, self.data.copy())


def init_params(sizes: tuple[int, ...], rng: SplitMix64) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, drawn layer by layer.

    Stream order: for each layer, the W entries row-major, then the biases.
    """
    sizes = tuple(int(s) for s in sizes)
    flat = np.empty(n_params(sizes), dtype=np.float64)
    pos = 0
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(d_in)
        k = d_in * d_out + d_out
        flat[pos : pos + k] = (2.0 * rng.random(k) - 1.0) * bound
        pos += k
    return EncoderParams(sizes, flat)


@dataclass
class ForwardCache:
    """Intermediates kept by forward_batch for the backward pass."""

    inputs: np.ndarray
    hidden: list[np.ndarray]
    pre_norm: np.ndarray
    norms: np.ndarray
    feats: np.ndarray


def forward_batch(params: EncoderParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Encode a batch (n, d_in) to unit features (n, d_out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.sizes[0]:
        raise DimensionMismatch(
            "input shape %s does not match d_in=%d" % (x.shape, params.sizes[0])
        )
    layers = params.layers()
    a = x
    hidden = []
    for w, b in layers[:-1]:
        a = np.tanh(a @ w.T + b)
        hidden.append(a)
    w, b = layers[-1]
    y = a @ w.T + b
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms < NORM_TOL):
        from .errors import ZeroVector

        raise ZeroVector("pre-normalization output collapsed to zero")
    feats = y / norms[:, None]
    return feats, ForwardCache(x, hidden, y, norms, feats)


def forward(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Encode a single vector."""
    feats, _ = forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return feats[0]


def backward_batch(
    params: EncoderParams, cache: ForwardCache, upstream: np.ndarray
) -> np.ndarray:
    """Exact parameter gradient for upstream dL/dfeatures of shape (n, d_out).

    Returns a flat vector aligned with params.data.  Batch reduction is a
    single matmul per layer, so the result is deterministic.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.feats.shape:
        raise DimensionMismatch("upstream shape %s, features %s" % (upstream.shape, cache.feats.shape))
    layers = params.layers()
    grad = np.zeros_like(params.data)
    g_offsets = _offsets(params.sizes)

    # through the normalization: project out the radial component
    f = cache.feats
    g_y = (upstream - (upstream * f).sum(axis=1, keepdims=True) * f) / cache.norms[:, None]

    acts = [cache.inputs] + cache.hidden  # inputs to each layer
    g = g_y
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        if li != len(layers) - 1:
            g = g * (1.0 - cache.hidden[li] ** 2)  # tanh'
        w0, b0, end = g_offsets[li]
        grad[w0:b0] = (g.T @ acts[li]).ravel()
        grad[b0:end] = g.sum(axis=0)
        g = g @ w
    return grad


def ema_update(momentum: EncoderParams, online: EncoderParams, alpha: float) -> EncoderParams:
    """Exponential moving average: alpha * momentum + (1 - alpha) * online."""
    if momentum.sizes != online.sizes:
        raise LayoutMismatch("EMA across different layouts")
    return EncoderParams(momentum.sizes, alpha * momentum.data + (1.0 - alpha) * online.data)


def freeze_snapshot(params: EncoderParams) -> EncoderParams:
    """Deep copy with a read-only parameter vector."""
    snap = params.copy()
    snap.data.setflags(write=False)
    return snap


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 0.0007
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_epochs: int = 2


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, params: EncoderParams) -> "AdamState":
        return cls(np.zeros_like(params.data), np.zeros_like(params.data), 0)


def warmup_lr(cfg: OptimizerConfig, epoch: int) -> float:
    """Linear warmup over the first warmup_epochs epochs, then flat."""
    if cfg.warmup_epochs <= 0:
        return cfg.base_lr
    return cfg.base_lr * min(1.0, (epoch + 1) / cfg.warmup_epochs)


def adam_step(
    params: EncoderParams,
    grad: np.ndarray,
    state: AdamState,
    cfg: OptimizerConfig,
    epoch: int,
) -> EncoderParams:
    """One Adam step with decoupled weight decay at the warmed-up rate."""
    if grad.shape != params.data.shape:
        raise DimensionMismatch("gradient shape %s for %d params" % (grad.shape, params.data.size))
    lr = warmup_lr(cfg, epoch)
    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad**2
    m_hat = state.m / (1.0 - cfg.beta1**state.t)
    v_hat = state.v / (1.0 - cfg.beta2**state.t)
    new = params.data - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params.data)
    return EncoderParams(params.sizes, new)


def save_checkpoint(path, params: EncoderParams, rng_state: int | None = None, extra: dict | None = None) -> None:
    """Versioned binary checkpoint: magic, JSON header, raw float64 bytes."""
    header = {
        "sizes": list(params.sizes),
        "rng_state": None if rng_state is None else int(rng_state),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(params.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[EncoderParams, int | None, dict]:
    """Inverse of save_checkpoint; round-trips bit for bit."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("bad magic %r" % magic)
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        sizes = tuple(int(s) for s in header["sizes"])
        raw = fh.read()
    expected = n_params(sizes) * 8
    if len(raw) != expected:
        raise CheckpointError("payload has %d bytes, layout needs %d" % (len(raw), expected))
    data = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    params = EncoderParams(sizes, data)
    return params, header.get("rng_state"), header.get("extra", {})
