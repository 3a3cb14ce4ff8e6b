"""Scan pattern generation for rotating-prism scanners.

Rotor phases integrate commanded speed plus sampled-and-held Gaussian speed
noise: at every control tick a new instantaneous speed is drawn and held
constant, so phase is piecewise linear in time. Noise streams derive from
(seed, rotor index), which keeps multi-channel and chunked evaluation
schedule-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .optics import PrismSpec, angles_to_dir, dir_to_angles, trace_prism
from .util import STREAM_ROTOR, substream

MAX_ARRAY_OFFSET = np.deg2rad(2.0)


@dataclass(frozen=True)
class RotorConfig:
    """Rotor drive: signed speed (rad/s), initial phase (rad), speed noise."""

    speed: float
    initial_phase: float = 0.0
    noise_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise_fraction <= 0.2:
            raise ValueError("noise fraction must be in [0, 0.2]")
        if not np.isfinite(self.speed):
            raise ValueError("speed must be finite")


@dataclass(frozen=True)
class SamplingConfig:
    """Measurement clock: rate (Hz), duration (s), speed-noise control tick, seed."""

    rate: float
    duration: float
    control_tick: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 1e3 <= self.rate <= 1e6:
            raise ValueError("sample rate must be in [1 kHz, 1 MHz]")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.control_tick <= 0.0:
            raise ValueError("control tick must be positive")

    @property
    def n_samples(self) -> int:
        return int(np.floor(self.duration * self.rate + 1e-9))


@dataclass(frozen=True)
class ArraySpec:
    """Emitter array: one (horizontal, vertical) boresight offset per channel (rad)."""

    offsets: np.ndarray

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        if off.ndim != 2 or off.shape[1] != 2 or off.shape[0] < 1:
            raise ValueError("offsets must be (K, 2)")
        if np.abs(off).max() > MAX_ARRAY_OFFSET + 1e-12:
            raise ValueError("array offsets must stay within 2 degrees")
        object.__setattr__(self, "offsets", off)

    @property
    def count(self) -> int:
        return self.offsets.shape[0]

    @classmethod
    def single(cls) -> "ArraySpec":
        return cls(np.zeros((1, 2)))


def array_offsets(count: int, pitch: float, orientation: str) -> ArraySpec:
    """Evenly spaced, centered array. pitch in rad; orientation horizontal/vertical."""
    if count < 1:
        raise ValueError("count must be >= 1")
    pos = (np.arange(count) - (count - 1) / 2.0) * pitch
    off = np.zeros((count, 2))
    if orientation == "horizontal":
        off[:, 0] = pos
    elif orientation == "vertical":
        off[:, 1] = pos
    else:
        raise ValueError("orientation must be 'horizontal' or 'vertical'")
    return ArraySpec(off)


@dataclass
class ScanPattern:
    """Time-ordered steering samples: times (s), channel ids, unit directions."""

    times: np.ndarray
    channels: np.ndarray
    dirs: np.ndarray

    @property
    def n(self) -> int:
        return self.times.shape[0]

    def polar(self) -> np.ndarray:
        return np.arccos(np.clip(self.dirs[:, 2], -1.0, 1.0))

    def transverse(self):
        return dir_to_angles(self.dirs)

    def prefix(self, duration: float) -> "ScanPattern":
        """Samples with t < duration (accumulation-time slice)."""
        k = int(np.searchsorted(self.times, duration, side="left"))
        return ScanPattern(self.times[:k], self.channels[:k], self.dirs[:k])


@dataclass(frozen=True)
class ScanConfig:
    """Full pattern bundle used by coverage sweeps and the CLI."""

    prisms: tuple
    rotors: tuple
    sampling: SamplingConfig
    array: Optional[ArraySpec] = None
    model: str = "paraxial"

    def with_sampling(self, **kw) -> "ScanConfig":
        merged = {
            "rate": self.sampling.rate,
            "duration": self.sampling.duration,
            "control_tick": self.sampling.control_tick,
            "seed": self.sampling.seed,
        }
        merged.update(kw)
        return ScanConfig(self.prisms, self.rotors, SamplingConfig(**merged),
                          self.array, self.model)


def rotor_phases(rotors, sampling: SamplingConfig) -> np.ndarray:
    """Per-sample rotor phase matrix of shape (n_samples, n_rotors).

    Noise-free rotors use the closed form phi0 + w t; noisy rotors integrate
    the held per-tick speeds drawn from stream (seed, ROTOR, rotor index).
    """
    t = np.arange(sampling.n_samples) / sampling.rate
    out = np.empty((t.shape[0], len(rotors)))
    n_ticks = int(np.ceil(sampling.duration / sampling.control_tick)) + 1
    for i, rotor in enumerate(rotors):
        if rotor.noise_fraction == 0.0:
            out[:, i] = rotor.initial_phase + rotor.speed * t
            continue
        rng = substream(sampling.seed, STREAM_ROTOR, i)
        w = rng.normal(rotor.speed, rotor.noise_fraction * abs(rotor.speed), size=n_ticks)
        tick = sampling.control_tick
        phase_at_tick = np.concatenate([[rotor.initial_phase],
                                        rotor.initial_phase + np.cumsum(w) * tick])
        j = np.minimum((t / tick).astype(np.int64), n_ticks - 1)
        out[:, i] = phase_at_tick[j] + w[j] * (t - j * tick)
    return out


def generate_pattern(prisms, rotors, sampling: SamplingConfig,
                     array: Optional[ArraySpec] = None,
                     model: str = "paraxial") -> ScanPattern:
    """Simulate the steering pattern for two or three prisms.

    With three prisms the first two are a counter-phased pair: the second
    rotor must mirror the first (speed and phase negated) and shares its
    noise stream so their angles stay exactly opposite.
    """
    if len(prisms) != len(rotors) or len(prisms) not in (2, 3):
        raise ValueError("need two or three prisms with matching rotors")
    if model not in ("paraxial", "exact"):
        raise ValueError(f"unknown model {model!r}")
    if array is None:
        array = ArraySpec.single()

    if len(prisms) == 3:
        if prisms[0] != prisms[1]:
            raise ValueError("the counter-phased prism pair must be identical")
        r0, r1 = rotors[0], rotors[1]
        if r1.speed != -r0.speed or r1.initial_phase != -r0.initial_phase:
            raise ValueError("rotor 2 must mirror rotor 1 (phase-locked pair)")
        phases = rotor_phases([rotors[0], rotors[2]], sampling)
        angle_sets = [phases[:, 0], -phases[:, 0], phases[:, 1]]
    else:
        phases = rotor_phases(rotors, sampling)
        angle_sets = [phases[:, 0], phases[:, 1]]

    t = np.arange(sampling.n_samples) / sampling.rate
    n = t.shape[0]
    k = array.count

    if model == "paraxial":
        h = np.zeros(n)
        v = np.zeros(n)
        for prism, ang in zip(prisms, angle_sets):
            h -= prism.deflection * np.cos(ang)
            v -= prism.deflection * np.sin(ang)
        dirs = np.empty((n, k, 3))
        for c in range(k):
            dirs[:, c, :] = angles_to_dir(h + array.offsets[c, 0], v + array.offsets[c, 1])
    else:
        dirs = np.empty((n, k, 3))
        for c in range(k):
            d = np.broadcast_to(angles_to_dir(*array.offsets[c]), (n, 3))
            for prism, ang in zip(prisms, angle_sets):
                d = trace_prism(d, prism, ang)
            dirs[:, c, :] = d

    times = np.repeat(t, k)
    channels = np.tile(np.arange(k, dtype=np.int32), n)
    return ScanPattern(times, channels, dirs.reshape(n * k, 3))


def check_commensurable(w1: float, w2: float, tolerance: float,
                        max_denominator: int = 10000) -> Optional[float]:
    """Smallest common period if w1/w2 is within tolerance of a bounded rational.

    Searches coprime n/m with n, m <= max_denominator such that
    |w1/w2 - n/m| < tolerance (sign carried by n); returns 2*pi*m/|w2|, or
    None when no such rational exists.
    """
    if w1 == 0.0 or w2 == 0.0:
        raise ValueError("rotor speeds must be nonzero")
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    r = abs(w1 / w2)
    exact = Fraction(r)

    def best_error(dmax: int) -> float:
        f = exact.limit_denominator(dmax)
        return abs(r - f.numerator / f.denominator)

    if best_error(max_denominator) >= tolerance:
        return None
    # error is non-increasing in the denominator bound: bisect the smallest
    lo, hi = 1, max_denominator
    while lo < hi:
        mid = (lo + hi) // 2
        if best_error(mid) < tolerance:
            hi = mid
        else:
            lo = mid + 1
    f = exact.limit_denominator(hi)
    if f.numerator > max_denominator:
        return None
    return 2.0 * np.pi * f.denominator / abs(w2)


def rpm_to_rad_s(rpm: float) -> float:
    return rpm * 2.0 * np.pi / 60.0
