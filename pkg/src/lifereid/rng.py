"""Deterministic random number generation.

Every stochastic choice in this package flows through ``SplitMix64`` so that
datasets, training runs, and evaluations are reproducible bit for bit on any
platform and can be re-implemented in another language from this file alone.

Generator definition
--------------------
SplitMix64 over a 64-bit counter.  With golden-ratio increment
``GAMMA = 0x9E3779B97F4A7C15``, the k-th raw output (1-indexed) is::

    mix64(seed + k * GAMMA)   (mod 2**64)

where ``mix64`` is the finalizer::

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

Derived quantities:

* uniform double in [0, 1):   ``(u64 >> 11) * 2**-53``
* standard normal:            Box-Muller on pairs of raw draws, with
  ``u1 = ((x >> 11) + 1) * 2**-53`` (open at zero) and
  ``u2 = (y >> 11) * 2**-53``; a request for n normals always consumes
  ``2 * ceil(n / 2)`` raw draws.
* integer below ``bound``:    rejection sampling against the largest
  multiple of ``bound`` that fits in 64 bits, then modulo.
* k-of-n without replacement: partial Fisher-Yates over ``range(n)``.

Stream derivation
-----------------
``derive_seed(parent, *keys)`` folds integer keys into a child seed::

    s = mix64(parent)
    for k in keys:  s = mix64(s + (k + 1) * GAMMA)

Stream tags used by the package are module constants below; e.g. the dataset
for domain ``d`` is generated from ``derive_seed(master, STREAM_DATA, d)``.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Stream tags for derive_seed.  Fixed integers, never reordered.
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_TRAIN = 3
STREAM_EVAL = 4
STREAM_GRADCHECK = 5


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a python int, mod 2**64."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(parent: int, *keys: int) -> int:
    """Deterministically derive a child seed from a parent and integer keys."""
    s = mix64(parent)
    for k in keys:
        s = mix64((s + ((int(k) + 1) * GAMMA)) & _MASK)
    return s


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based SplitMix64 stream with an inspectable state.

    The state is the counter value; output k is mix64(seed + k * GAMMA).
    Because the counter advances by a fixed stride, any block of draws can
    be produced vectorized without changing the stream.
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    @property
    def state(self) -> int:
        return self._state

    def set_state(self, state: int) -> None:
        self._state = int(state) & _MASK

    def _advance(self, n: int) -> np.ndarray:
        """Return the next n raw states as a uint64 array."""
        base = self._state
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
            states = np.uint64(base) + steps
        self._state = (base + n * GAMMA) & _MASK
        return states

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs."""
        with np.errstate(over="ignore"):
            return _mix_array(self._advance(n))

    def next_u64(self) -> int:
        self._state = (self._state + GAMMA) & _MASK
        return mix64(self._state)

    def random(self, n: int) -> np.ndarray:
        """n uniform doubles in [0, 1)."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """n standard normal doubles via Box-Muller."""
        m = (n + 1) // 2
        raw = self.u64(2 * m)
        u1 = ((raw[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[m:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def randint(self, bound: int) -> int:
        """Uniform integer in [0, bound) without modulo bias."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % bound

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct integers from range(n), by partial Fisher-Yates."""
        if k > n:
            raise ValueError("cannot draw %d from %d without replacement" % (k, n))
        idx = list(range(n))
        for i in range(k):
            j = i + self.randint(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return np.asarray(idx[:k], dtype=np.int64)

    def shuffle_indices(self, n: int) -> np.ndarray:
        """A full random permutation of range(n)."""
        return self.choice_without_replacement(n, n)
