"""Angular sampling density and field-of-view coverage statistics.

Density is measured against the polar radius r of the steered direction. For
a counter-rotating pair the time spent per unit radius gives the foveal
profile rho(r) proportional to 1/(r * sqrt(1 - r^2/(2R)^2)): divergent at the
center and at the rim, minimal at r = R*sqrt(2). Binned predictions integrate
that profile exactly (the bin mass is proportional to the arcsin difference
of the edges), so empirical per-steradian histograms can be compared without
midpoint bias.

Coverage rasterizes directions onto a square angular grid clipped to the
circular field of view and reports the percentage of effective cells hit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pattern import RotorConfig, ScanConfig, ScanPattern, generate_pattern
from .util import derive_seed


def analytic_density(r, fov_radius: float):
    """Unnormalized foveal density 1/(r sqrt(1 - r^2/(2R)^2)).

    fov_radius is the per-prism deflection R; the pattern spans (0, 2R).
    Raises ValueError outside the open interval (the profile diverges at both
    endpoints).
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0) or np.any(r >= 2.0 * fov_radius):
        raise ValueError("radius must lie strictly inside (0, 2R)")
    u = r / (2.0 * fov_radius)
    return 1.0 / (r * np.sqrt(1.0 - u * u))


def analytic_bin_mass(edges, fov_radius: float) -> np.ndarray:
    """Exact integral of the foveal time-density over each radial bin.

    Proportional to arcsin(b/2R) - arcsin(a/2R); unnormalized.
    """
    edges = np.asarray(edges, dtype=float)
    x = np.clip(edges / (2.0 * fov_radius), 0.0, 1.0)
    s = np.arcsin(x)
    return np.diff(s)


@dataclass
class RadialDensityProfile:
    """Radial histogram: bin edges (rad), per-steradian density, raw counts."""

    edges: np.ndarray
    density: np.ndarray
    counts: np.ndarray

    @property
    def solid_angles(self) -> np.ndarray:
        return 2.0 * np.pi * (np.cos(self.edges[:-1]) - np.cos(self.edges[1:]))


def empirical_density(pattern: ScanPattern, fov_radius: float,
                      nbins: int = 50) -> RadialDensityProfile:
    """Histogram of sample polar angles over [0, 2R], per-steradian normalized."""
    if nbins < 4:
        raise ValueError("need at least 4 bins")
    edges = np.linspace(0.0, 2.0 * fov_radius, nbins + 1)
    counts, _ = np.histogram(pattern.polar(), bins=edges)
    omega = 2.0 * np.pi * (np.cos(edges[:-1]) - np.cos(edges[1:]))
    return RadialDensityProfile(edges, counts / omega, counts.astype(np.int64))


def density_rms_mismatch(profile: RadialDensityProfile, fov_radius: float,
                         trim: int = 2) -> float:
    """Relative RMS gap between empirical and analytic per-steradian profiles.

    Both profiles are normalized to unit sum over the interior bins (trim
    endpoint bins dropped per side, where the divergences live).
    """
    sel = slice(trim, len(profile.counts) - trim)
    ana = analytic_bin_mass(profile.edges, fov_radius) / profile.solid_angles
    emp = profile.density[sel] / profile.density[sel].sum()
    ana = ana[sel] / ana[sel].sum()
    return float(np.sqrt(np.mean(((emp - ana) / ana) ** 2)))


class CoverageGrid:
    """Square angular raster over the FoV disk; cells outside the circle are masked."""

    def __init__(self, half_angle: float, resolution: int = 100,
                 denominator: Optional[int] = None):
        if half_angle <= 0.0:
            raise ValueError("half angle must be positive")
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        self.half_angle = float(half_angle)
        self.resolution = int(resolution)
        step = 2.0 * self.half_angle / self.resolution
        centers = -self.half_angle + step * (np.arange(self.resolution) + 0.5)
        hh, vv = np.meshgrid(centers, centers, indexing="ij")
        self.mask = (hh * hh + vv * vv) <= self.half_angle ** 2
        self.effective_count = int(self.mask.sum())
        self.denominator = int(denominator) if denominator is not None else self.effective_count
        self._flat_mask = self.mask.ravel()

    def cell_ids(self, pattern: ScanPattern):
        """Flat cell id per sample plus a validity mask (inside an effective cell)."""
        h, v = pattern.transverse()
        res = self.resolution
        scale = res / (2.0 * self.half_angle)
        ix = np.clip(((h + self.half_angle) * scale).astype(np.int64), 0, res - 1)
        iy = np.clip(((v + self.half_angle) * scale).astype(np.int64), 0, res - 1)
        inside = (np.abs(h) <= self.half_angle) & (np.abs(v) <= self.half_angle)
        ids = ix * res + iy
        return ids, inside & self._flat_mask[ids]


def coverage(pattern: ScanPattern, grid: CoverageGrid) -> float:
    """Percentage of grid cells filled by the pattern."""
    if pattern.n == 0:
        return 0.0
    ids, valid = grid.cell_ids(pattern)
    filled = np.unique(ids[valid]).shape[0]
    return 100.0 * filled / grid.denominator


def first_fill_times(pattern: ScanPattern, grid: CoverageGrid) -> np.ndarray:
    """Sorted times at which each newly covered cell was first hit."""
    ids, valid = grid.cell_ids(pattern)
    ids = ids[valid]
    times = pattern.times[valid]
    _, first = np.unique(ids, return_index=True)
    return np.sort(times[first])


def coverage_at_times(pattern: ScanPattern, grid: CoverageGrid, times) -> np.ndarray:
    fills = first_fill_times(pattern, grid)
    k = np.searchsorted(fills, np.asarray(times, dtype=float), side="right")
    return 100.0 * k / grid.denominator


def grid_for_config(config: ScanConfig, resolution: int = 100,
                    denominator: Optional[int] = None) -> CoverageGrid:
    """Grid spanning the paraxial FoV of the configured prism stack."""
    half = sum(p.deflection for p in config.prisms[:2])
    return CoverageGrid(half, resolution, denominator)


def time_to_coverage(config: ScanConfig, threshold: float, time_cap: float,
                     grid: Optional[CoverageGrid] = None) -> float:
    """Seconds until coverage reaches threshold percent, or inf if capped.

    The pattern runs for at most time_cap seconds at the configured rate.
    """
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    if threshold > 100.0:
        raise ValueError("threshold is a percentage")
    if grid is None:
        grid = grid_for_config(config)
    cfg = config.with_sampling(duration=time_cap)
    pattern = generate_pattern(cfg.prisms, cfg.rotors, cfg.sampling, cfg.array, cfg.model)
    fills = first_fill_times(pattern, grid)
    need = int(np.ceil(threshold / 100.0 * grid.denominator))
    if fills.shape[0] < need:
        return float("inf")
    return float(fills[need - 1])


def sweep_speed_grid(config: ScanConfig, speeds1, speeds2, threshold: float,
                     time_cap: float, seed: int = 0, threads: int = 1) -> np.ndarray:
    """Matrix of time-to-coverage over a grid of rotor speed pairs (rad/s).

    Cell (i, j) runs speeds1[i] / speeds2[j] with a seed derived from
    (seed, i, j); results are identical for any thread count.
    """
    speeds1 = np.asarray(speeds1, dtype=float)
    speeds2 = np.asarray(speeds2, dtype=float)
    grid = grid_for_config(config)
    out = np.empty((speeds1.shape[0], speeds2.shape[0]))

    def run_cell(i, j):
        r1, r2 = config.rotors[0], config.rotors[1]
        rotors = (RotorConfig(speeds1[i], r1.initial_phase, r1.noise_fraction),
                  RotorConfig(speeds2[j], r2.initial_phase, r2.noise_fraction))
        cfg = ScanConfig(config.prisms, rotors,
                         config.sampling, config.array, config.model)
        cfg = cfg.with_sampling(seed=derive_seed(seed, i, j))
        out[i, j] = time_to_coverage(cfg, threshold, time_cap, grid)

    cells = [(i, j) for i in range(speeds1.shape[0]) for j in range(speeds2.shape[0])]
    if threads <= 1:
        for i, j in cells:
            run_cell(i, j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda c: run_cell(*c), cells))
    return out


def calibrate_rate_for_coverage(config: ScanConfig, target_pct: float, at_time: float,
                                grid: Optional[CoverageGrid] = None,
                                lo: float = 1e3, hi: float = 1e6,
                                tol_pct: float = 0.5, max_iter: int = 40) -> float:
    """Sample rate whose coverage at at_time matches target_pct (bisection).

    Rotor noise is tick-based, so the underlying beam path is identical for
    every candidate rate; only the sampling density changes.
    """
    if grid is None:
        grid = grid_for_config(config)

    def cov(rate):
        cfg = config.with_sampling(rate=rate, duration=at_time)
        p = generate_pattern(cfg.prisms, cfg.rotors, cfg.sampling, cfg.array, cfg.model)
        return coverage(p, grid)

    c_lo, c_hi = cov(lo), cov(hi)
    if not c_lo <= target_pct <= c_hi:
        raise ValueError(f"target {target_pct}% not bracketed: [{c_lo:.1f}, {c_hi:.1f}]")
    for _ in range(max_iter):
        mid = np.sqrt(lo * hi)
        c = cov(mid)
        if abs(c - target_pct) <= tol_pct:
            return float(mid)
        if c < target_pct:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))
