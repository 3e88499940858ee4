"""Seeded, platform-independent random streams.

Backed by numpy's Philox bit generator, which is counter based: the same seed
and the same sequence of calls produce the same numbers on every platform.
"""

from __future__ import annotations

import numpy as np

from rre.errors import DistributionError


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 0 or w.shape[-1] == 0:
        raise DistributionError("categorical weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DistributionError("categorical weights must be finite and nonnegative")
    total = w.sum(axis=-1)
    if np.any(total <= 0):
        raise DistributionError("categorical weights sum to zero")
    return w


class Rng:
    """A reproducible random stream.

    Args:
        seed: 64-bit integer seed.
        key: optional tuple of integers mixed into the seed; used by
            :meth:`spawn` to derive independent sub-streams.
    """

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self.key])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *key) -> "Rng":
        """Independent child stream identified by ``key`` (ints or strings)."""
        ints = []
        for k in key:
            if isinstance(k, str):
                ints.append(int.from_bytes(k.encode("utf-8")[:8].ljust(8, b"\0"), "little"))
            else:
                ints.append(int(k))
        return Rng(self.seed, self.key + tuple(ints))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def categorical(self, weights) -> int:
        """Index ``i`` with probability ``weights[i] / sum(weights)``."""
        w = _check_weights(weights)
        if w.ndim != 1:
            raise DistributionError("categorical expects a 1-D weight vector")
        return int(self.categorical_many(w, 1)[0])

    def categorical_many(self, weights, n: int) -> np.ndarray:
        """``n`` independent draws (with replacement) from one weight vector."""
        w = _check_weights(weights)
        cdf = np.cumsum(w)
        cdf /= cdf[-1]
        u = self._gen.uniform(size=n)
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, len(w) - 1)

    def categorical_rows(self, probs) -> np.ndarray:
        """One draw per row of a ``(N, C)`` matrix of weights."""
        w = _check_weights(probs)
        cdf = np.cumsum(w, axis=-1)
        cdf /= cdf[:, -1:]
        u = self._gen.uniform(size=(w.shape[0], 1))
        idx = (cdf <= u).sum(axis=-1)
        return np.minimum(idx, w.shape[-1] - 1)


def seeded_rng(seed: int) -> Rng:
    return Rng(seed)
