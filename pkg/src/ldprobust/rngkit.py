"""Deterministic, splittable randomness and the samplers the mechanisms consume.

Every mechanism in the package draws its randomness through a :class:`Stream`.
A stream is derived from a :class:`StreamKey` (root seed plus a path of 32-bit
labels), so the same key always reproduces the same draws, independently of
how trials are scheduled across workers.

All samplers are built on top of :meth:`Stream.uniform`, which makes it
possible to stub the uniforms in unit tests (see :class:`ScriptedStream`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF
_TWO_POW_53 = float(2**53)


class InvalidParameterError(ValueError):
    """Raised when a sampler or mechanism receives an out-of-range parameter."""


@dataclass(frozen=True)
class StreamKey:
    root_seed: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.root_seed <= _MASK64:
            raise InvalidParameterError(f"root_seed must be a 64-bit unsigned integer, got {self.root_seed}")
        path = tuple(int(p) for p in self.path)
        for label in path:
            if not 0 <= label <= _MASK32:
                raise InvalidParameterError(f"path labels must be 32-bit unsigned integers, got {label}")
        object.__setattr__(self, "path", path)

    def child(self, *labels: int) -> "StreamKey":
        return StreamKey(self.root_seed, self.path + tuple(labels))


@dataclass(frozen=True)
class PrivacyBudget:
    """Privacy level alpha with the constants the randomized-response style mechanisms need."""

    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidParameterError(f"alpha must be a positive finite real, got {self.alpha}")

    @property
    def keep_prob(self) -> float:
        """e^a / (1 + e^a), written to stay accurate for large a."""
        return 1.0 / (1.0 + math.exp(-self.alpha))

    @property
    def debias(self) -> float:
        """(e^a + 1) / (e^a - 1) = coth(a / 2)."""
        return 1.0 / math.tanh(self.alpha / 2.0)


def laplace_from_uniform(u, scale: float):
    """Inverse CDF of the centred Laplace law with the given scale."""
    if not scale > 0:
        raise InvalidParameterError(f"Laplace scale must be positive, got {scale}")
    u = np.asarray(u, dtype=float)
    lower = u < 0.5
    # both branches are evaluated; guard the logs against the unused side
    lo = scale * np.log(2.0 * np.where(lower, u, 0.25))
    hi = -scale * np.log(2.0 * (1.0 - np.where(lower, 0.75, u)))
    out = np.where(lower, lo, hi)
    return out if out.ndim else float(out)


class Stream:
    """A reproducible source of uniforms on the open interval (0, 1).

    Uniforms are built from 53 random bits of a PCG64 generator seeded through
    ``numpy.random.SeedSequence(root_seed, spawn_key=path)``, which hashes the
    root seed and the path labels together.
    """

    def __init__(self, key: StreamKey):
        self.key = key
        seq = np.random.SeedSequence(entropy=key.root_seed, spawn_key=key.path)
        self._rng = np.random.Generator(np.random.PCG64(seq))

    def uniform(self, size=None):
        bits = self._rng.integers(0, 2**53, size=size, dtype=np.uint64)
        u = (bits.astype(float) + 0.5) / _TWO_POW_53
        return u if size is not None else float(u)

    def laplace(self, scale: float, size=None):
        if not scale > 0:
            raise InvalidParameterError(f"Laplace scale must be positive, got {scale}")
        return laplace_from_uniform(self.uniform(size), scale)

    def bernoulli(self, p: float, size=None):
        """1 with probability p, decided as ``u <= p``."""
        if not 0.0 <= p <= 1.0:
            raise InvalidParameterError(f"probability must lie in [0, 1], got {p}")
        u = self.uniform(size)
        if size is None:
            return int(u <= p)
        return (u <= p).astype(np.int8)

    def rademacher(self, size=None):
        """Fair +-1 signs."""
        b = self.bernoulli(0.5, size)
        return 2 * b - 1 if size is None else 2 * b.astype(np.int64) - 1

    def normal(self, size=None):
        from scipy.special import ndtri

        out = ndtri(self.uniform(size))
        return out if size is not None else float(out)


class ScriptedStream(Stream):
    """Stream replaying a fixed list of uniforms, cycling when exhausted.

    ``ScriptedStream([0.5])`` yields zero Laplace noise and keeps every
    randomized-response bit, which is how the zero-noise hand traces are run.
    """

    def __init__(self, uniforms: Sequence[float]):
        self.key = None
        self._values = np.asarray(uniforms, dtype=float)
        if self._values.size == 0 or np.any((self._values <= 0) | (self._values >= 1)):
            raise InvalidParameterError("scripted uniforms must be non-empty and lie in (0, 1)")
        self._pos = 0

    def uniform(self, size=None):
        count = 1 if size is None else int(np.prod(size))
        idx = (self._pos + np.arange(count)) % self._values.size
        self._pos += count
        out = self._values[idx]
        if size is None:
            return float(out[0])
        return out.reshape(size)


def derive_stream(key: StreamKey) -> Stream:
    return Stream(key)


def sample_laplace(stream: Stream, scale: float, size=None):
    return stream.laplace(scale, size)


def sample_bernoulli(stream: Stream, p: float, size=None):
    return stream.bernoulli(p, size)
