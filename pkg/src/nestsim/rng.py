"""Reproducible, independent random streams.

Every stream is a Philox (counter-based) generator keyed by a base seed and a
tuple of integers, so the stream for "trial 3, inner paths of scenario 17" is
the same no matter which order scenarios are processed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OUTER = 0
INNER = 1
TARGET = 2
SAMPLE_POINT = 3
AUX = 4
_TRIAL = 99


def make_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(0 if rng is None else int(rng))


@dataclass(frozen=True)
class Streams:
    """Namespace of keyed generators derived from one seed."""

    seed: int
    prefix: tuple = ()

    def _rng(self, *key):
        return make_rng(self.seed, *self.prefix, *key)

    def outer(self) -> np.random.Generator:
        return self._rng(OUTER)

    def inner(self, i: int) -> np.random.Generator:
        return self._rng(INNER, i)

    def target(self, i: int) -> np.random.Generator:
        return self._rng(TARGET, i)

    def sample_point(self, i: int) -> np.random.Generator:
        return self._rng(SAMPLE_POINT, i)

    def aux(self, *key: int) -> np.random.Generator:
        return self._rng(AUX, *key)

    def trial(self, t: int) -> "Streams":
        return Streams(self.seed, self.prefix + (_TRIAL, int(t)))
