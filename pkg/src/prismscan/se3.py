"""SE(3) rigid transforms: exp/log maps, composition, quaternion and JSON I/O.

Rotations are stored as 3x3 matrices; quaternions (w, x, y, z) appear only at
serialization boundaries. Logs return the principal branch and refuse
rotations at the pi branch cut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Rodrigues coefficients switch to their Taylor expansions below this angle;
# the closed forms cancel catastrophically well before the angle underflows.
_SMALL = 1e-3
# log() refuses rotation angles within this distance of pi.
_PI_GUARD = 1e-7


class LogBranchError(ValueError):
    """Rotation angle is at the pi branch cut; the principal log is ambiguous."""


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


@dataclass(frozen=True)
class Twist:
    """se(3) element: angular part in rad, linear part in meters."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        ang = np.array(self.angular, dtype=float).reshape(3)
        lin = np.array(self.linear, dtype=float).reshape(3)
        object.__setattr__(self, "angular", ang)
        object.__setattr__(self, "linear", lin)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    @classmethod
    def from_vector(cls, v) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])


@dataclass(frozen=True)
class Pose:
    """Rigid transform with a 3x3 rotation `r` and translation `t` (meters)."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        t = np.array(self.t, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        err = np.abs(r @ r.T - np.eye(3)).max()
        if err > 1e-10 or abs(np.linalg.det(r) - 1.0) > 1e-10:
            raise ValueError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.r @ other.r, self.r @ other.t + self.t)

    def inverse(self) -> "Pose":
        rt = self.r.T
        return Pose(rt, -rt @ self.t)

    def apply(self, points):
        """Transform points of shape (..., 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.r.T + self.t

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def adjoint(self) -> np.ndarray:
        """6x6 adjoint acting on stacked (angular, linear) twist vectors."""
        ad = np.zeros((6, 6))
        ad[:3, :3] = self.r
        ad[3:, 3:] = self.r
        ad[3:, :3] = skew(self.t) @ self.r
        return ad

    def quat(self) -> np.ndarray:
        return rot_to_quat(self.r)

    @classmethod
    def from_quat(cls, q, t) -> "Pose":
        return cls(quat_to_rot(q), np.asarray(t, dtype=float))

    def to_dict(self) -> dict:
        return {"q": [float(x) for x in self.quat()], "t": [float(x) for x in self.t]}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        if set(d.keys()) != {"q", "t"}:
            raise ValueError("pose dict must have exactly the keys 'q' and 't'")
        return cls.from_quat(d["q"], d["t"])


def quat_to_rot(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-9:
        raise ValueError("quaternion must be unit norm")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(r) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def exp_so3(w) -> np.ndarray:
    """Rodrigues formula with Taylor guards near zero angle."""
    w = np.asarray(w, dtype=float).reshape(3)
    th = np.linalg.norm(w)
    wx = skew(w)
    t2 = th * th
    if th < _SMALL:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / t2
    return np.eye(3) + a * wx + b * (wx @ wx)


def log_so3(r) -> np.ndarray:
    """Principal rotation log. Raises LogBranchError at the pi branch cut."""
    r = np.asarray(r, dtype=float)
    c = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    th = np.arccos(c)
    if th > np.pi - _PI_GUARD:
        raise LogBranchError("rotation angle too close to pi for a principal log")
    v = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if th < _SMALL:
        return v * (1.0 + th * th / 6.0 + 7.0 * th ** 4 / 360.0)
    return v * (th / np.sin(th))


def exp_se3(xi: Twist) -> Pose:
    """Exponential map of a twist."""
    w = xi.angular
    v = xi.linear
    th = np.linalg.norm(w)
    wx = skew(w)
    wx2 = wx @ wx
    t2 = th * th
    if th < _SMALL:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / t2
        c = (th - np.sin(th)) / (t2 * th)
    r = np.eye(3) + a * wx + b * wx2
    vmat = np.eye(3) + b * wx + c * wx2
    return Pose(r, vmat @ v)


def log_se3(pose: Pose) -> Twist:
    """Principal twist log of a pose. Raises LogBranchError at angle pi."""
    w = log_so3(pose.r)
    th = np.linalg.norm(w)
    wx = skew(w)
    wx2 = wx @ wx
    if th < 1e-2:
        # closed form below cancels badly; series error here is ~th^6
        k = 1.0 / 12.0 + th * th / 720.0 + th ** 4 / 30240.0
    else:
        k = (1.0 - 0.5 * th * np.sin(th) / (1.0 - np.cos(th))) / (th * th)
    vinv = np.eye(3) - 0.5 * wx + k * wx2
    return Twist(w, vinv @ pose.t)
