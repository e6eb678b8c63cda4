"""Counter-based Gaussian noise streams.

Every draw is addressable by (seed, stream, counter): the triple fully
determines the bytes, so a trace that records the triple can regenerate
the exact noise later.  Draws are spaced 2**128 Philox blocks apart,
far beyond what a single batch consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DrawSource:
    """Address of one noise draw."""

    seed: int
    stream: int
    counter: int


@dataclass(frozen=True)
class NoiseDraw:
    """A Gaussian batch together with the address it was drawn from."""

    eps: np.ndarray
    source: DrawSource

    @property
    def shape(self):
        return self.eps.shape


def _generate(source: DrawSource, shape) -> np.ndarray:
    key = np.array([source.seed & _MASK64, source.stream & _MASK64], dtype=np.uint64)
    bitgen = np.random.Philox(key=key, counter=source.counter << 128)
    return np.random.Generator(bitgen).standard_normal(shape, dtype=np.float64)


def regenerate(source: DrawSource, shape) -> np.ndarray:
    """Rebuild the exact bytes of a previously recorded draw."""
    return _generate(source, shape)


class NoiseStream:
    """Sequential draw source; the counter advances by one per draw."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = seed
        self.stream = stream
        self._counter = 0

    @property
    def counter(self) -> int:
        return self._counter

    def draw(self, shape) -> NoiseDraw:
        source = DrawSource(self.seed, self.stream, self._counter)
        self._counter += 1
        return NoiseDraw(_generate(source, shape), source)
