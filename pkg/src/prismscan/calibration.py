"""Lidar-IMU extrinsic calibration pipeline on simulated data.

The experiment mirrors a bench procedure: a rig carrying the scanner and an
IMU visits a handful of poses, dwelling statically at each and moving
smoothly in between. Dense static scans are registered pairwise to get the
scanner's relative motions A_i; the IMU stream is bias-corrected and
integrated over each move to get B_i; the fixed extrinsic X is solved from
AX = XB; quality is the twist-space gap between reference motions and
X B X^-1, evaluated as a function of scan accumulation time.

Conventions: X maps IMU-frame coordinates to scanner-frame coordinates, so
A_i = X B_i X^-1. Rig poses are IMU body poses Y_i; the scanner's world pose
is Y_i compose X^-1.

Moves interpolate along a constant-twist screw with a quintic time warp
(zero velocity and acceleration at both ends), which gives closed-form
angular velocity and specific force for the simulated IMU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .pattern import ScanConfig, generate_pattern
from .scene import PointCloudFrame, Scene, concat_frames, scan_scene
from .se3 import Pose, Twist, exp_se3, exp_so3, log_se3, log_so3
from .util import STREAM_IMU, STREAM_POSE, derive_seed, substream, unit

GRAVITY = np.array([0.0, 0.0, -9.81])


class InsufficientStaticDataError(ValueError):
    """A static window is too short to estimate biases from."""


class UnobservableExtrinsicError(ValueError):
    """The motion set cannot determine the extrinsic (rank deficiency)."""


class RegistrationError(RuntimeError):
    """ICP failed to converge; carries the last iterate and fitness."""

    def __init__(self, message: str, last_pose: Pose, fitness: float):
        super().__init__(message)
        self.last_pose = last_pose
        self.fitness = fitness


@dataclass(frozen=True)
class ImuModel:
    """Noise densities are continuous (per sqrt(Hz)); sampled noise uses
    std = density * sqrt(rate). Biases are constant over the stream."""

    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rate: float = 400.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "gyro_bias", np.asarray(self.gyro_bias, float))
        object.__setattr__(self, "accel_bias", np.asarray(self.accel_bias, float))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, float))
        if self.rate < 100.0:
            raise ValueError("IMU rate must be at least 100 Hz")
        if self.gyro_noise < 0.0 or self.accel_noise < 0.0:
            raise ValueError("noise densities must be >= 0")


@dataclass(frozen=True)
class PoseSequence:
    """Rig (IMU body) poses with static dwells and fixed-length moves."""

    poses: tuple
    x_true: Pose
    dwell: float = 10.0
    move_duration: float = 2.0

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError("need at least two poses")
        if self.dwell <= 0.0 or self.move_duration <= 0.0:
            raise ValueError("dwell and move duration must be positive")
        for a, b in zip(self.poses[:-1], self.poses[1:]):
            gap = log_se3(a.inverse().compose(b))
            if np.linalg.norm(gap.as_vector()) < 1e-12:
                raise ValueError("consecutive poses must be distinct")

    @property
    def n_moves(self) -> int:
        return len(self.poses) - 1

    def total_duration(self) -> float:
        return len(self.poses) * self.dwell + self.n_moves * self.move_duration

    def static_windows(self) -> List[Tuple[float, float]]:
        out = []
        t = 0.0
        for _ in self.poses:
            out.append((t, t + self.dwell))
            t += self.dwell + self.move_duration
        return out

    def move_twists(self) -> List[Twist]:
        return [log_se3(a.inverse().compose(b))
                for a, b in zip(self.poses[:-1], self.poses[1:])]

    def true_relative(self, i: int) -> Pose:
        return self.poses[i].inverse().compose(self.poses[i + 1])

    def scanner_pose(self, i: int) -> Pose:
        return self.poses[i].compose(self.x_true.inverse())


def _smoothstep(u: float) -> Tuple[float, float, float]:
    """Quintic ramp and its first two derivatives (zero at both ends)."""
    s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    ds = 30.0 * u * u * (1.0 - u) ** 2
    dds = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)
    return s, ds, dds


@dataclass
class ImuStream:
    times: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    rate: float
    static_windows: List[Tuple[float, float]]


def simulate_imu(sequence: PoseSequence, model: ImuModel, seed: int = 0) -> ImuStream:
    """Gyro and specific-force samples along the rig trajectory.

    Static segments read zero rate and pure gravity reaction; moves follow
    the screw interpolant in closed form. Bias and white noise are added on
    top from the (seed, IMU) stream.
    """
    dt = 1.0 / model.rate
    total = sequence.total_duration()
    n = int(np.floor(total / dt + 1e-9))
    times = np.arange(n) * dt
    gyro = np.zeros((n, 3))
    accel = np.zeros((n, 3))

    windows = sequence.static_windows()
    twists = sequence.move_twists()
    g = model.gravity

    for i, (w0, w1) in enumerate(windows):
        sel = (times >= w0 - 1e-12) & (times < w1 - 1e-12)
        accel[sel] = -(sequence.poses[i].r.T @ g)

    for i, xi in enumerate(twists):
        t0 = windows[i][1]
        sel = (times >= t0 - 1e-12) & (times < t0 + sequence.move_duration - 1e-12)
        idx = np.nonzero(sel)[0]
        r0 = sequence.poses[i].r
        w_xi, v_xi = xi.angular, xi.linear
        wxv = np.cross(w_xi, v_xi)
        for k in idx:
            u = (times[k] - t0) / sequence.move_duration
            s, ds, dds = _smoothstep(u)
            ds /= sequence.move_duration
            dds /= sequence.move_duration ** 2
            r_wb = r0 @ exp_so3(s * w_xi)
            gyro[k] = ds * w_xi
            accel[k] = ds * ds * wxv + dds * v_xi - r_wb.T @ g

    rng = substream(seed, STREAM_IMU)
    gyro += model.gyro_bias
    accel += model.accel_bias
    if model.gyro_noise > 0.0:
        gyro += rng.normal(0.0, model.gyro_noise * np.sqrt(model.rate), (n, 3))
    if model.accel_noise > 0.0:
        accel += rng.normal(0.0, model.accel_noise * np.sqrt(model.rate), (n, 3))
    return ImuStream(times, gyro, accel, model.rate, windows)


def _window_stats(stream: ImuStream, window: Tuple[float, float],
                  gravity_magnitude: float):
    t0, t1 = window
    if t1 - t0 < 1.0:
        raise InsufficientStaticDataError(
            f"static window [{t0}, {t1}] shorter than 1 s")
    sel = (stream.times >= t0 - 1e-12) & (stream.times < t1 - 1e-12)
    if not np.any(sel):
        raise InsufficientStaticDataError("static window holds no samples")
    gyro_bias = stream.gyro[sel].mean(axis=0)
    f_mean = stream.accel[sel].mean(axis=0)
    accel_bias = f_mean - gravity_magnitude * unit(f_mean)
    center = 0.5 * (t0 + t1)
    gravity_body = -gravity_magnitude * unit(f_mean)
    return center, gyro_bias, accel_bias, gravity_body


def integrate_imu(stream: ImuStream,
                  static_windows: Optional[List[Tuple[float, float]]] = None,
                  gravity_magnitude: float = 9.81) -> List[Pose]:
    """Relative pose across each move, from bias-corrected midpoint integration.

    Biases come from the static-window means (gyro directly; accel after
    aligning the mean specific force with gravity of known magnitude) and are
    linearly interpolated across the move. The gravity direction seen in the
    window before each move anchors the integration frame.
    """
    windows = stream.static_windows if static_windows is None else static_windows
    if len(windows) < 2:
        raise InsufficientStaticDataError("need static windows around each move")
    stats = [_window_stats(stream, w, gravity_magnitude) for w in windows]

    out = []
    for i in range(len(windows) - 1):
        c0, bg0, ba0, g_body = stats[i]
        c1, bg1, ba1, _ = stats[i + 1]
        sel = (stream.times >= windows[i][1] - 1e-12) & \
              (stream.times <= windows[i + 1][0] + 1e-12)
        idx = np.nonzero(sel)[0]
        frac = np.clip((stream.times[idx] - c0) / (c1 - c0), 0.0, 1.0)
        gyro = stream.gyro[idx] - (bg0 + frac[:, None] * (bg1 - bg0))
        accel = stream.accel[idx] - (ba0 + frac[:, None] * (ba1 - ba0))

        dt = 1.0 / stream.rate
        r = np.eye(3)
        v = np.zeros(3)
        p = np.zeros(3)
        a_prev = r @ accel[0] + g_body
        for k in range(1, idx.shape[0]):
            w_mid = 0.5 * (gyro[k - 1] + gyro[k])
            r = r @ exp_so3(w_mid * dt)
            a_new = r @ accel[k] + g_body
            v_new = v + 0.5 * (a_prev + a_new) * dt
            p = p + 0.5 * (v + v_new) * dt
            v, a_prev = v_new, a_new
        out.append(Pose(_orthonormalize(r), p))
    return out


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _voxel_centroids(points: np.ndarray, voxel: float):
    """Centroid of each occupied voxel plus a raw-row -> centroid-row map."""
    keys = np.floor(points / voxel).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    counts = np.bincount(inv)
    cents = np.zeros((counts.shape[0], 3))
    np.add.at(cents, inv, points)
    cents /= counts[:, None]
    return cents, inv


class _NormalCache:
    """Lazy 20-nearest-neighbor surface normals over a fixed target cloud.

    With `voxel` set the planes are fitted to voxel centroids instead of raw
    points, which keeps the fit neighborhood wider than the range noise;
    correspondences still use the raw points, so noise-free registration
    stays exact.
    """

    def __init__(self, points: np.ndarray, k: int = 20,
                 voxel: Optional[float] = None):
        self.points = points
        self.tree = cKDTree(points)
        if voxel:
            self._fit, self._row = _voxel_centroids(points, voxel)
        else:
            self._fit, self._row = points, np.arange(points.shape[0])
        self._fit_tree = cKDTree(self._fit)
        self.k = min(k, self._fit.shape[0])
        self.normals = np.full_like(self._fit, np.nan)

    def get(self, indices: np.ndarray) -> np.ndarray:
        rows = self._row[indices]
        miss = np.unique(rows[np.isnan(self.normals[rows, 0])])
        if miss.shape[0]:
            _, nbr = self._fit_tree.query(self._fit[miss], k=self.k)
            clouds = self._fit[nbr]
            centered = clouds - clouds.mean(axis=1, keepdims=True)
            cov = np.einsum("nki,nkj->nij", centered, centered)
            _, vecs = np.linalg.eigh(cov)
            self.normals[miss] = vecs[:, :, 0]
        return self.normals[rows]


def register_clouds(src: PointCloudFrame, dst: PointCloudFrame,
                    init: Optional[Pose] = None, max_iter: int = 50,
                    tol: float = 1e-6, n_corr: int = 2000,
                    trim_factor: float = 3.0,
                    voxel: Optional[float] = 0.02) -> Tuple[Pose, float]:
    """Point-to-plane alignment: returns T with dst approx T(src), plus fitness.

    Deterministic: correspondences use an even stride of the source cloud and
    normals from 20 neighbors in the target (fitted over `voxel`-sized
    centroids so dense noisy clouds still yield stable planes); pairs beyond
    trim_factor times the median distance are dropped each iteration. Raises
    RegistrationError (carrying the last iterate) if the update never falls
    below tol.
    """
    if src.n == 0 or dst.n == 0:
        raise ValueError("cannot register empty clouds")
    pose = Pose.identity() if init is None else init
    cache = _NormalCache(dst.xyz, voxel=voxel)
    step = max(1, src.n // n_corr)
    p_src = src.xyz[::step]
    fitness = np.inf

    for _ in range(max_iter):
        x = p_src @ pose.r.T + pose.t
        dist, nn = cache.tree.query(x)
        keep = dist <= trim_factor * max(np.median(dist), 1e-12)
        xk = x[keep]
        qk = dst.xyz[nn[keep]]
        nk = cache.get(nn[keep])
        res = np.einsum("ij,ij->i", xk - qk, nk)
        fitness = float(np.mean(np.abs(res)))
        jac = np.hstack([np.cross(xk, nk), nk])
        h = jac.T @ jac
        b = jac.T @ res
        try:
            delta = np.linalg.solve(h, -b)
        except np.linalg.LinAlgError:
            delta, *_ = np.linalg.lstsq(h, -b, rcond=None)
        pose = exp_se3(Twist(delta[:3], delta[3:])).compose(pose)
        if np.linalg.norm(delta) < tol:
            return pose, fitness
    raise RegistrationError(f"no convergence in {max_iter} iterations",
                            pose, fitness)


def hand_eye_solve(pairs: Sequence[Tuple[Pose, Pose]]) -> Pose:
    """Least-squares X from motion pairs satisfying A_i = X B_i X^-1.

    Rotation first (orthogonal Procrustes on the rotation log-vectors), then
    translation from the stacked linear system (R_A - I) t = R_X t_B - t_A.
    """
    alphas, betas = [], []
    for a, b in pairs:
        al = log_so3(a.r)
        be = log_so3(b.r)
        if np.linalg.norm(al) > 1e-8 and np.linalg.norm(be) > 1e-8:
            alphas.append(al)
            betas.append(be)
    if len(alphas) < 2:
        raise UnobservableExtrinsicError("need at least two rotating motions")
    axes = np.array([unit(a) for a in alphas])
    spread = 0.0
    for i in range(len(axes)):
        for j in range(i + 1, len(axes)):
            c = abs(float(np.dot(axes[i], axes[j])))
            spread = max(spread, np.arccos(np.clip(c, -1.0, 1.0)))
    if spread < np.deg2rad(1.0):
        raise UnobservableExtrinsicError("rotation axes parallel within 1 degree")

    m = np.zeros((3, 3))
    for al, be in zip(alphas, betas):
        m += np.outer(be, al)
    u, _, vt = np.linalg.svd(m)
    r_x = vt.T @ np.diag([1.0, 1.0, np.sign(np.linalg.det(vt.T @ u.T))]) @ u.T

    rows, rhs = [], []
    for a, b in pairs:
        rows.append(a.r - np.eye(3))
        rhs.append(r_x @ b.t - a.t)
    t_x, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return Pose(r_x, t_x)


def calib_error(a: Pose, b: Pose, x: Pose) -> float:
    """Twist-space gap between A and X B X^-1 (norm of the 6-vector delta)."""
    mapped = x.compose(b).compose(x.inverse())
    va = log_se3(a).as_vector()
    vb = log_se3(mapped).as_vector()
    return float(np.linalg.norm(va - vb))


def default_pose_sequence(x_true: Optional[Pose] = None, n_poses: int = 6,
                          rotation_deg: float = 10.0, translation: float = 0.10,
                          dwell: float = 10.0, move_duration: float = 2.0,
                          seed: int = 0) -> PoseSequence:
    """Rig checkpoints: ~10 degree / 0.10 m moves with varied axes.

    The base pose aims the scanner's +z boresight along world +x (into the
    demo room); subsequent poses wander around it.
    """
    if x_true is None:
        x_true = Pose(exp_so3(np.deg2rad(5.0) * unit(np.array([0.3, 1.0, -0.5]))),
                      np.array([0.05, -0.03, 0.08]))
    rng = substream(seed, STREAM_POSE)
    base = Pose(exp_so3(np.array([0.0, np.pi / 2, 0.0])), np.zeros(3))
    poses = [base]
    for _ in range(n_poses - 1):
        axis = unit(rng.normal(size=3))
        step = Pose(exp_so3(np.deg2rad(rotation_deg) * axis),
                    translation * unit(rng.normal(size=3)))
        poses.append(poses[-1].compose(step))
    return PoseSequence(tuple(poses), x_true, dwell, move_duration)


def scan_at_pose(sequence: PoseSequence, scene: Scene, config: ScanConfig,
                 pose_index: int, duration: float, range_noise_std: float,
                 seed: int) -> PointCloudFrame:
    """Static scan accumulated for `duration` seconds at one rig checkpoint."""
    cfg = config.with_sampling(duration=duration,
                               seed=derive_seed(seed, 7, pose_index))
    pattern = generate_pattern(cfg.prisms, cfg.rotors, cfg.sampling,
                               cfg.array, cfg.model)
    frames = scan_scene(pattern, scene, sequence.scanner_pose(pose_index),
                        range_noise_std=range_noise_std,
                        seed=derive_seed(seed, 11, pose_index))
    return concat_frames(frames)


@dataclass
class CalibrationResult:
    accumulation_times: np.ndarray
    errors: np.ndarray          # (n_seeds, n_times) mean Eq-gap per run
    extrinsics: list            # per seed, per time, solved Pose

    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    def stderr(self) -> np.ndarray:
        n = self.errors.shape[0]
        return self.errors.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else \
            np.zeros(self.errors.shape[1])


def run_calibration_experiment(sequence: PoseSequence, scene: Scene,
                               config: ScanConfig,
                               accumulation_times: Sequence[float],
                               imu_model: Optional[ImuModel] = None,
                               range_noise_std: float = 0.02,
                               seeds: Sequence[int] = (0,),
                               reference: str = "simulation") -> CalibrationResult:
    """Full pipeline: scan, register, integrate, solve, score.

    For each seed the rig runs the pose sequence once; scans at every
    checkpoint are accumulated to the longest requested time and sliced to
    the shorter ones, so shorter accumulations are true prefixes. Reference
    motions A come from the simulation ground truth ('simulation') or from
    registering the full-length scans ('long_scan').
    """
    if reference not in ("simulation", "long_scan"):
        raise ValueError(f"unknown reference {reference!r}")
    times = np.asarray(sorted(accumulation_times), dtype=float)
    longest = float(times[-1])
    model = ImuModel() if imu_model is None else imu_model

    errors = np.empty((len(seeds), times.shape[0]))
    solved = []
    for si, seed in enumerate(seeds):
        stream = simulate_imu(sequence, model, seed=derive_seed(seed, 3))
        b_motions = integrate_imu(stream,
                                  gravity_magnitude=float(
                                      np.linalg.norm(model.gravity)))
        full = [scan_at_pose(sequence, scene, config, i, longest,
                             range_noise_std, seed)
                for i in range(len(sequence.poses))]
        if reference == "simulation":
            a_ref = [sequence.scanner_pose(i).inverse().compose(
                sequence.scanner_pose(i + 1)) for i in range(sequence.n_moves)]
        else:
            a_ref = [_register_motion(full[i], full[i + 1])
                     for i in range(sequence.n_moves)]

        row = []
        per_time = []
        for accum in times:
            clouds = [_slice_cloud(c, accum) for c in full]
            a_est = [_register_motion(clouds[i], clouds[i + 1])
                     for i in range(sequence.n_moves)]
            x_bar = hand_eye_solve(list(zip(a_est, b_motions)))
            per_time.append(x_bar)
            gaps = [calib_error(a_ref[i], b_motions[i], x_bar)
                    for i in range(sequence.n_moves)]
            row.append(float(np.mean(gaps)))
        errors[si] = row
        solved.append(per_time)
    return CalibrationResult(times, errors, solved)


def _slice_cloud(cloud: PointCloudFrame, duration: float) -> PointCloudFrame:
    sel = cloud.t < duration
    return PointCloudFrame(cloud.timestamp, cloud.t[sel], cloud.xyz[sel],
                           cloud.reflectivity[sel], cloud.channel[sel])


def _register_motion(cloud_i: PointCloudFrame, cloud_j: PointCloudFrame) -> Pose:
    """Scanner motion A between two checkpoints from cloud registration."""
    try:
        t, _ = register_clouds(cloud_i, cloud_j)
    except RegistrationError as err:
        t = err.last_pose
    return t.inverse()
