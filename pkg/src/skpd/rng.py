"""Counter-based random streams for reproducible simulation.

All randomness in this package flows through :class:`CounterRng`, a thin
wrapper around the Philox 4x64 counter-based bit generator.  A stream is
addressed by a ``(seed, stream)`` key pair, so independent substreams (one
per sample, per replicate, ...) can be opened without coordination and the
produced numbers depend only on the key, never on draw order elsewhere.

The exact stream is part of the artifact contract: datasets and benchmark
reports must be bit-reproducible across runs.  To that end the generator
only consumes raw 64-bit Philox words and derives everything else with a
fixed recipe:

* uniforms: ``(word >> 11) * 2**-53`` (53-bit doubles in ``[0, 1)``),
* normals:  Box-Muller on uniform pairs,
* permutations: stable argsort of uniform keys.

``STREAM_NAME``/``STREAM_VERSION`` identify the recipe; bump the version if
any of the above changes.
"""

from __future__ import annotations

import numpy as np

STREAM_NAME = "philox4x64-boxmuller"
STREAM_VERSION = 1

# Reserved stream ids.  Per-sample image streams use ids 0..n-1, so shared
# purposes live far away in the 64-bit key space.
NOISE_STREAM = 2**64 - 1
FILTER_INIT_STREAM = 2**64 - 2
PERMUTATION_STREAM_BASE = 2**48

_INV_2_53 = 2.0**-53


class CounterRng:
    """Deterministic double/normal/permutation source for one (seed, stream) key."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._bg = np.random.Philox(key=key)

    def raw(self, n):
        """Return ``n`` raw 64-bit Philox words."""
        return np.asarray(self._bg.random_raw(int(n)), dtype=np.uint64)

    def uniform(self, n):
        """Return ``n`` doubles uniform on [0, 1)."""
        return (self.raw(n) >> np.uint64(11)) * _INV_2_53

    def normal(self, shape):
        """Return standard normals of the given shape via Box-Muller."""
        if np.isscalar(shape):
            shape = (int(shape),)
        m = int(np.prod(shape)) if len(shape) else 1
        k = (m + 1) // 2
        u1 = self.uniform(k)
        u2 = self.uniform(k)
        # 1 - u1 lies in (0, 2**-53 .. 1], so the log is always finite.
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:m]
        return z.reshape(shape)

    def permutation(self, n):
        """Return a permutation of range(n) as an int64 array."""
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")


def image_stream(seed: int, index: int) -> CounterRng:
    """Stream for the ``index``-th simulated image under ``seed``."""
    return CounterRng(seed, index)


def noise_stream(seed: int) -> CounterRng:
    """Stream for the additive response noise under ``seed``."""
    return CounterRng(seed, NOISE_STREAM)


def permutation_stream(seed: int, replicate: int) -> CounterRng:
    """Stream for the ``replicate``-th permutation-test shuffle under ``seed``."""
    return CounterRng(seed, PERMUTATION_STREAM_BASE + replicate)
