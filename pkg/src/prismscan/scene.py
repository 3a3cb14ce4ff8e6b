"""Synthetic 3-D scenes and ray casting for range simulation.

Scenes are small lists of analytic primitives (infinite planes, spheres,
axis-aligned boxes), each tagged with a reflectivity that passes through to
the returned points unchanged. Ray casts are exact nearest-hit queries; a
miss is a value, not an error.

scan_scene drives a steering pattern through a scene: each sample's direction
is taken through the lidar pose at its timestamp, cast into the world, and
the hit is reported in the lidar frame at sample time. The point stream is
sliced into fixed-length frames; range noise is drawn from a per-frame
substream so frames can be produced concurrently in any order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .pattern import ScanPattern
from .se3 import Pose
from .util import STREAM_RANGE, substream, unit

DEFAULT_MAX_RANGE = 260.0
_EPS = 1e-9


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(np.asarray(a, dtype=float))) for a in arrays)


@dataclass(frozen=True)
class Plane:
    """Infinite plane n . x = offset with unit normal n."""

    normal: np.ndarray
    offset: float
    reflectivity: float = 0.8

    def __post_init__(self):
        n = unit(np.asarray(self.normal, dtype=float))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))
        _check_reflectivity(self.reflectivity)
        if not _finite(n, self.offset):
            raise ValueError("plane parameters must be finite")

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        nd = dirs @ self.normal
        no = origins @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset - no) / nd
        t = np.where(np.abs(nd) < 1e-300, np.inf, t)
        return np.where(t > _EPS, t, np.inf)

    def implicit(self, points: np.ndarray) -> np.ndarray:
        return points @ self.normal - self.offset


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    reflectivity: float = 0.8

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        _check_reflectivity(self.reflectivity)
        if self.radius <= 0.0 or not _finite(c, self.radius):
            raise ValueError("sphere needs a positive finite radius")

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origins - self.center
        b = np.einsum("ij,ij->i", dirs, oc)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius ** 2
        disc = b * b - c
        hit = disc >= 0.0
        root = np.sqrt(np.where(hit, disc, 0.0))
        near = -b - root
        far = -b + root
        t = np.where(near > _EPS, near, far)
        return np.where(hit & (t > _EPS), t, np.inf)

    def implicit(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - self.center, axis=-1) - self.radius


@dataclass(frozen=True)
class Box:
    """Axis-aligned box spanning lo..hi per coordinate."""

    lo: np.ndarray
    hi: np.ndarray
    reflectivity: float = 0.8

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        _check_reflectivity(self.reflectivity)
        if not _finite(lo, hi) or np.any(hi <= lo):
            raise ValueError("box needs finite lo < hi per axis")

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        # slab test; zero direction components are clamped so the slab
        # degenerates to an inside/outside check
        d = np.where(np.abs(dirs) < 1e-300, np.copysign(1e-300, dirs), dirs)
        inv = 1.0 / d
        t1 = (self.lo - origins) * inv
        t2 = (self.hi - origins) * inv
        tmin = np.max(np.minimum(t1, t2), axis=1)
        tmax = np.min(np.maximum(t1, t2), axis=1)
        t = np.where(tmin > _EPS, tmin, tmax)
        hit = (tmax >= np.maximum(tmin, _EPS)) & (t > _EPS)
        return np.where(hit, t, np.inf)

    def implicit(self, points: np.ndarray) -> np.ndarray:
        # signed distance to the surface (negative inside)
        q = np.maximum(self.lo - points, points - self.hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside


Primitive = Union[Plane, Sphere, Box]


def _check_reflectivity(value: float):
    if not 0.0 <= value <= 1.0:
        raise ValueError("reflectivity must lie in [0, 1]")


class Scene:
    """Ordered collection of primitives with nearest-hit ray queries."""

    def __init__(self, primitives: Sequence[Primitive]):
        self.primitives = list(primitives)

    def raycast_batch(self, origins, dirs, max_range: float = DEFAULT_MAX_RANGE):
        """Nearest hit per ray: (ranges, reflectivity, primitive index, hit mask)."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        origins = np.broadcast_to(np.asarray(origins, dtype=float), dirs.shape)
        best = np.full(dirs.shape[0], np.inf)
        which = np.full(dirs.shape[0], -1, dtype=np.int64)
        for k, prim in enumerate(self.primitives):
            t = prim.intersect(origins, dirs)
            closer = t < best
            best = np.where(closer, t, best)
            which = np.where(closer, k, which)
        hit = np.isfinite(best) & (best <= max_range)
        refl = np.array([p.reflectivity for p in self.primitives] + [0.0])
        return best, refl[np.where(hit, which, -1)], which, hit

    def to_dict(self) -> dict:
        out = []
        for p in self.primitives:
            if isinstance(p, Plane):
                out.append({"type": "plane", "normal": p.normal.tolist(),
                            "offset": p.offset, "reflectivity": p.reflectivity})
            elif isinstance(p, Sphere):
                out.append({"type": "sphere", "center": p.center.tolist(),
                            "radius": p.radius, "reflectivity": p.reflectivity})
            else:
                out.append({"type": "box", "lo": p.lo.tolist(), "hi": p.hi.tolist(),
                            "reflectivity": p.reflectivity})
        return {"primitives": out}

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        if set(data.keys()) != {"primitives"}:
            raise ValueError("scene document must contain exactly 'primitives'")
        fields = {"plane": {"normal", "offset"}, "sphere": {"center", "radius"},
                  "box": {"lo", "hi"}}
        prims: List[Primitive] = []
        for entry in data["primitives"]:
            kind = entry.get("type")
            if kind not in fields:
                raise ValueError(f"unknown primitive type {kind!r}")
            allowed = fields[kind] | {"type", "reflectivity"}
            unknown = set(entry.keys()) - allowed
            if unknown:
                raise ValueError(f"unknown keys for {kind}: {sorted(unknown)}")
            args = {k: v for k, v in entry.items() if k != "type"}
            prims.append({"plane": Plane, "sphere": Sphere, "box": Box}[kind](**args))
        return cls(prims)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))


def raycast(origin, direction, scene: Scene,
            max_range: float = DEFAULT_MAX_RANGE) -> Optional[tuple]:
    """Single-ray convenience wrapper: (range, reflectivity) or None."""
    r, refl, _, hit = scene.raycast_batch(origin, np.asarray(direction, float)[None, :],
                                          max_range)
    if not hit[0]:
        return None
    return float(r[0]), float(refl[0])


@dataclass
class PointCloudFrame:
    """One slice of the point stream, in the lidar frame at sample time."""

    timestamp: float
    t: np.ndarray
    xyz: np.ndarray
    reflectivity: np.ndarray
    channel: np.ndarray

    @property
    def n(self) -> int:
        return self.t.shape[0]


def concat_frames(frames: Sequence[PointCloudFrame]) -> PointCloudFrame:
    if not frames:
        return PointCloudFrame(0.0, np.empty(0), np.empty((0, 3)), np.empty(0),
                               np.empty(0, dtype=np.int32))
    return PointCloudFrame(
        frames[0].timestamp,
        np.concatenate([f.t for f in frames]),
        np.vstack([f.xyz for f in frames]),
        np.concatenate([f.reflectivity for f in frames]),
        np.concatenate([f.channel for f in frames]),
    )


Trajectory = Union[Pose, Callable[[np.ndarray], tuple]]


def _poses_at(trajectory: Trajectory, times: np.ndarray):
    """Stacked (n,3,3) rotations and (n,3) translations along the trajectory."""
    if isinstance(trajectory, Pose):
        n = times.shape[0]
        return (np.broadcast_to(trajectory.r, (n, 3, 3)),
                np.broadcast_to(trajectory.t, (n, 3)))
    r, t = trajectory(times)
    return np.asarray(r, dtype=float), np.asarray(t, dtype=float)


def scan_scene(pattern: ScanPattern, scene: Scene, trajectory: Trajectory,
               range_noise_std: float = 0.02, frame_len: float = 0.1,
               max_range: float = DEFAULT_MAX_RANGE,
               seed: int = 0) -> List[PointCloudFrame]:
    """Cast every pattern sample into the scene and slice into frames.

    trajectory is either a static Pose or a callable mapping a time array to
    stacked rotations and translations. Noise is drawn per frame from a
    substream keyed by the frame index, so the output is independent of how
    the frames are scheduled.
    """
    if range_noise_std < 0.0:
        raise ValueError("range noise std must be >= 0")
    if frame_len <= 0.0:
        raise ValueError("frame length must be positive")
    if pattern.n == 0:
        return []

    rot, trans = _poses_at(trajectory, pattern.times)
    world_dirs = np.einsum("nij,nj->ni", rot, pattern.dirs)
    ranges, refl, _, hit = scene.raycast_batch(trans, world_dirs, max_range)

    frame_ids = np.floor(pattern.times / frame_len + 1e-12).astype(np.int64)
    n_frames = int(frame_ids[-1]) + 1
    frames = []
    for k in range(n_frames):
        sel = (frame_ids == k) & hit
        r = ranges[sel]
        if range_noise_std > 0.0:
            rng = substream(seed, STREAM_RANGE, k)
            r = r + rng.normal(0.0, range_noise_std, r.shape[0])
        frames.append(PointCloudFrame(
            timestamp=k * frame_len,
            t=pattern.times[sel],
            xyz=pattern.dirs[sel] * r[:, None],
            reflectivity=refl[sel],
            channel=pattern.channels[sel].astype(np.int32),
        ))
    return frames


def demo_room(half_width: float = 4.0, height: float = 3.0) -> Scene:
    """Closed rectangular room with objects inside the forward scanning cone.

    The room is z-up; a sensor near the origin aimed along world +x sees the
    interior objects at staggered depths, so registration gets normals in
    every direction rather than a single wall.
    """
    w, h = half_width, height
    return Scene([
        Plane([0.0, 0.0, 1.0], -1.2),                 # floor at z = -1.2
        Plane([0.0, 0.0, -1.0], -(h - 1.2)),          # ceiling
        Plane([1.0, 0.0, 0.0], -w),
        Plane([-1.0, 0.0, 0.0], -w),
        Plane([0.0, 1.0, 0.0], -w),
        Plane([0.0, -1.0, 0.0], -w),
        Box([2.6, -1.0, -0.8], [3.4, -0.2, 0.0], reflectivity=0.6),
        Sphere([3.0, 0.45, 0.3], 0.4, reflectivity=0.4),
        Box([2.0, -0.55, 0.1], [2.6, 0.1, 0.7], reflectivity=0.7),
    ])


def write_csv(frame: PointCloudFrame, path: str):
    """t,x,y,z,reflectivity,channel with stable formatting (LF endings)."""
    with open(path, "w", newline="\n") as f:
        f.write("t,x,y,z,reflectivity,channel\n")
        for k in range(frame.n):
            f.write("%.9g,%.9g,%.9g,%.9g,%.9g,%d\n" % (
                frame.t[k], frame.xyz[k, 0], frame.xyz[k, 1], frame.xyz[k, 2],
                frame.reflectivity[k], frame.channel[k]))


_PLY_DTYPE = np.dtype([("t", "<f8"), ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                       ("reflectivity", "<f8"), ("channel", "<i4")])


def write_ply(frame: PointCloudFrame, path: str):
    """Binary little-endian PLY with one vertex element."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {frame.n}\n"
        "property double t\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "property double reflectivity\n"
        "property int channel\n"
        "end_header\n"
    )
    rows = np.empty(frame.n, dtype=_PLY_DTYPE)
    rows["t"] = frame.t
    rows["x"] = frame.xyz[:, 0]
    rows["y"] = frame.xyz[:, 1]
    rows["z"] = frame.xyz[:, 2]
    rows["reflectivity"] = frame.reflectivity
    rows["channel"] = frame.channel
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rows.tobytes())


def read_ply(path: str) -> PointCloudFrame:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.index(b"end_header\n") + len(b"end_header\n")
    head = blob[:end].decode("ascii").splitlines()
    n = int(next(line.split()[-1] for line in head if line.startswith("element vertex")))
    rows = np.frombuffer(blob[end:], dtype=_PLY_DTYPE, count=n)
    xyz = np.stack([rows["x"], rows["y"], rows["z"]], axis=1)
    return PointCloudFrame(float(rows["t"][0]) if n else 0.0, rows["t"].copy(), xyz,
                           rows["reflectivity"].copy(), rows["channel"].copy())
