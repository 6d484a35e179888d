"""Counter-based Gaussian noise streams.

Each (seed, stream, channel) triple keys a Philox-4x64 generator.  The normal
used at integration step ``j`` is built from the Philox block with counter
``j`` alone, so any window of steps can be regenerated without replaying the
ones before it.  This is what makes chunked simulation and path splicing
bit-exact.
"""
from __future__ import annotations

import numpy as np

_TWO_M53 = 2.0 ** -53
STREAM_BITS = 48
CHANNEL_BITS = 16
SEED_MAX = 2**64 - 1

# channel tags keep independent purposes apart under one master seed
CH_PATH = 0
CH_INIT = 1
CH_UNIFORM = 2
CH_RESTART = 3
CH_BOOT = 4


def _key(seed: int, stream: int, channel: int) -> int:
    seed, stream, channel = int(seed), int(stream), int(channel)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError("seed must be a 64-bit unsigned integer")
    if not 0 <= stream < 2**STREAM_BITS:
        raise ValueError(f"stream id must be in [0, 2^{STREAM_BITS})")
    if not 0 <= channel < 2**CHANNEL_BITS:
        raise ValueError(f"channel must be in [0, 2^{CHANNEL_BITS})")
    return (((channel << STREAM_BITS) | stream) << 64) | seed


def _blocks(seed, stream, channel, start, n):
    bg = np.random.Philox(key=_key(seed, stream, channel), counter=int(start))
    return bg.random_raw(4 * int(n)).reshape(-1, 4)


def _box_muller(w0, w1):
    u1 = ((w0 >> np.uint64(11)) + np.uint64(1)).astype(float) * _TWO_M53
    u2 = (w1 >> np.uint64(11)).astype(float) * _TWO_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class NoiseStream:
    """Standard normal increments for one trajectory.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    stream : int
        Substream id, one per trajectory.
    channel : int
        Purpose tag; different channels never share blocks.
    """

    def __init__(self, seed: int, stream: int = 0, channel: int = CH_PATH):
        _key(seed, stream, channel)
        self.seed = int(seed)
        self.stream = int(stream)
        self.channel = int(channel)

    def normals(self, start: int, n: int) -> np.ndarray:
        """Normals for steps ``start, ..., start + n - 1``."""
        if n <= 0:
            return np.empty(0)
        w = _blocks(self.seed, self.stream, self.channel, start, n)
        return _box_muller(w[:, 0], w[:, 1])

    def uniforms(self, start: int, n: int) -> np.ndarray:
        """Uniforms on [0, 1) for indices ``start, ..., start + n - 1``."""
        if n <= 0:
            return np.empty(0)
        w = _blocks(self.seed, self.stream, self.channel, start, n)
        return (w[:, 2] >> np.uint64(11)).astype(float) * _TWO_M53

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, stream={self.stream}, channel={self.channel})"


def normal_matrix(seed: int, streams, start: int, n: int, channel: int = CH_PATH) -> np.ndarray:
    """Stack ``NoiseStream(seed, s, channel).normals(start, n)`` over ``streams``."""
    streams = np.asarray(streams, dtype=np.int64).ravel()
    out = np.empty((len(streams), max(int(n), 0)))
    if n <= 0:
        return out
    for i, s in enumerate(streams):
        w = _blocks(seed, s, channel, start, n)
        out[i] = _box_muller(w[:, 0], w[:, 1])
    return out


def uniform_matrix(seed: int, streams, start: int, n: int, channel: int = CH_UNIFORM) -> np.ndarray:
    streams = np.asarray(streams, dtype=np.int64).ravel()
    out = np.empty((len(streams), max(int(n), 0)))
    for i, s in enumerate(streams):
        out[i] = NoiseStream(seed, s, channel).uniforms(start, n)
    return out
