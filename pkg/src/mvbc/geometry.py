"""SE(2)/SE(3) pose algebra, pinhole camera model, and base-pose sampling.

Conventions used throughout the workbench:

* World and base frames are right-handed with +z up; the base frame has +x
  forward and +y left.
* The camera frame is right-handed with +z forward (optical axis), +x right,
  +y down.  Image row 0 is the top of the image.
* Quaternions are (w, x, y, z), unit norm, canonicalized to w >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TAU = 2.0 * math.pi


def wrap_angle(phi: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(phi, TAU)
    if r <= -math.pi:
        r += TAU
    return r


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[math.cos(half)], math.sin(half) * axis / n]))


def quat_from_yaw(phi: float) -> np.ndarray:
    return np.array([math.cos(0.5 * phi), 0.0, 0.0, math.sin(0.5 * phi)])


def quat_rotate(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(p, dtype=float)


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True)
class Pose2:
    """Planar base pose (x, y, phi) with phi wrapped into (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_angle(float(self.phi)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class Pose3:
    """Rigid transform: rotation (unit quaternion, w >= 0) then translation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        self.orientation = quat_normalize(np.asarray(self.orientation, dtype=float).reshape(4))

    def copy(self) -> "Pose3":
        return Pose3(self.position.copy(), self.orientation.copy())

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def as_seven_tuple(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])


def identity_pose() -> Pose3:
    return Pose3()


def compose(a: Pose3, b: Pose3) -> Pose3:
    """a then b: the transform mapping p to a(b(p))."""
    return Pose3(
        a.position + quat_rotate(a.orientation, b.position),
        quat_multiply(a.orientation, b.orientation),
    )


def inverse(a: Pose3) -> Pose3:
    qc = quat_conjugate(a.orientation)
    return Pose3(-quat_rotate(qc, a.position), qc)


def apply(a: Pose3, p: np.ndarray) -> np.ndarray:
    return a.position + quat_rotate(a.orientation, p)


def apply_many(a: Pose3, pts: np.ndarray) -> np.ndarray:
    """Apply a rigid transform to an (N, 3) array of points."""
    return pts @ a.rotation_matrix().T + a.position


def pose2_to_pose3(base: Pose2) -> Pose3:
    return Pose3(np.array([base.x, base.y, 0.0]), quat_from_yaw(base.phi))


def rot2(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# camera


@dataclass
class CameraModel:
    """Pinhole camera with fixed 64x48 resolution and a base-mount extrinsic.

    ``mount`` is the camera frame expressed in the base frame.
    """

    fx: float = 55.4
    fy: float = 55.4
    cx: float = 32.0
    cy: float = 24.0
    width: int = 64
    height: int = 48
    mount: Pose3 = field(default_factory=identity_pose)

    def __post_init__(self):
        if self.width != 64 or self.height != 48:
            raise ValueError("image resolution is fixed at 64x48")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")


# Camera +z forward / +x right / +y down, expressed in a base frame with
# +x forward / +y left / +z up, tilted down by ``pitch`` about the right axis.
def mount_rotation(pitch: float) -> np.ndarray:
    ct, st = math.cos(pitch), math.sin(pitch)
    x_cam = np.array([0.0, -1.0, 0.0])
    z_cam = np.array([ct, 0.0, -st])
    y_cam = np.cross(z_cam, x_cam)
    return np.column_stack([x_cam, y_cam, z_cam])


def default_camera() -> CameraModel:
    """Camera 0.10 m ahead of the base center at 0.90 m height, pitched 30 deg down."""
    mount = Pose3(np.array([0.10, 0.0, 0.90]), quat_from_matrix(mount_rotation(math.radians(30.0))))
    return CameraModel(mount=mount)


def camera_pose_world(base: Pose2, cam: CameraModel) -> Pose3:
    return compose(pose2_to_pose3(base), cam.mount)


def project(cam: CameraModel, p_cam: np.ndarray) -> tuple[float, float]:
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[2]
    if z <= 0.0:
        raise ValueError(f"point behind camera (z={z})")
    return (cam.fx * p_cam[0] / z + cam.cx, cam.fy * p_cam[1] / z + cam.cy)


def backproject(cam: CameraModel, u: float, v: float, depth: float) -> np.ndarray:
    if depth <= 0.0:
        raise ValueError(f"non-positive depth ({depth})")
    return np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])


def in_frustum(
    cam: CameraModel, camera_world: Pose3, p_world: np.ndarray, margin_px: float = 1.0
) -> bool:
    p_cam = apply(inverse(camera_world), p_world)
    if p_cam[2] <= 1e-6:
        return False
    u, v = project(cam, p_cam)
    return (
        margin_px <= u <= cam.width - 1 - margin_px
        and margin_px <= v <= cam.height - 1 - margin_px
    )


# ---------------------------------------------------------------------------
# base-pose sampling


@dataclass
class BaseSamplerConfig:
    """View-circle sampler: base poses whose camera axis passes through ``center``.

    ``center`` is the aim point in the world frame and ``horizontal_distance``
    the desired ground-plane distance from the camera origin to it.
    """

    center: np.ndarray
    horizontal_distance: float
    phi_min: float
    phi_max: float
    noise_xy: float = 0.01
    noise_phi: float = math.radians(0.5)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if self.phi_min >= self.phi_max:
            raise ValueError("phi_min must be < phi_max")
        if self.horizontal_distance <= 0:
            raise ValueError("horizontal_distance must be positive")
        if self.noise_xy < 0 or self.noise_phi < 0:
            raise ValueError("noise magnitudes must be >= 0")


def base_pose_for_phi(cfg: BaseSamplerConfig, cam: CameraModel, phi: float) -> Pose2:
    """The unique pre-noise base pose on the view circle at heading ``phi``."""
    heading = np.array([math.cos(phi), math.sin(phi)])
    cam_xy = cfg.center[:2] - cfg.horizontal_distance * heading
    base_xy = cam_xy - rot2(phi) @ cam.mount.position[:2]
    return Pose2(base_xy[0], base_xy[1], phi)


def sample_base_pose_with_phi(
    cfg: BaseSamplerConfig, cam: CameraModel, rng: np.random.Generator
) -> tuple[Pose2, float]:
    """Sample a base pose; also return the pre-noise heading used for it."""
    phi = rng.uniform(cfg.phi_min, cfg.phi_max)
    pose = base_pose_for_phi(cfg, cam, phi)
    nx = rng.uniform(-cfg.noise_xy, cfg.noise_xy)
    ny = rng.uniform(-cfg.noise_xy, cfg.noise_xy)
    nphi = rng.uniform(-cfg.noise_phi, cfg.noise_phi)
    return Pose2(pose.x + nx, pose.y + ny, pose.phi + nphi), phi


def sample_base_pose(cfg: BaseSamplerConfig, cam: CameraModel, rng: np.random.Generator) -> Pose2:
    return sample_base_pose_with_phi(cfg, cam, rng)[0]
