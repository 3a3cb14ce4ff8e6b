"""Shared helpers: deterministic RNG substreams and small vector utilities."""

from __future__ import annotations

import numpy as np

# Stream tags keep independent noise sources decoupled from evaluation order.
# Every consumer derives its generator from (seed, tag, *indices) so that
# parallel schedules and chunk sizes never change the drawn values.
STREAM_ROTOR = 1
STREAM_RANGE = 2
STREAM_IMU = 3
STREAM_CELL = 4
STREAM_POSE = 5


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the (seed, *key) stream, independent of creation order."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, *key) into a plain integer seed for nested configs."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize along the last axis. Zero vectors raise."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return v / n


def wrap_angle(a):
    """Wrap to [0, 2*pi)."""
    return np.mod(a, 2.0 * np.pi)
