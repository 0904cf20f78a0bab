"""Rigid transforms, the pinhole camera, and the per-pixel map containers.

Poses map world points into the camera frame, ``x_cam = R @ x_world + t``.
Rotations are stored as unit quaternions ``(w, x, y, z)``.

Pixel coordinates are continuous: the full-resolution pixel in row ``i`` and
column ``j`` covers ``[j, j+1) x [i, i+1)`` and its center sits at
``(j + 0.5, i + 0.5)``.  A grid cell at stride ``s`` is centered at
``((j + 0.5) * s, (i + 0.5) * s)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, ShapeMismatch

_EPS_DEPTH = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------


def quat_multiply(a, b):
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


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    # canonical hemisphere keeps equality checks meaningful
    if q[0] < 0 or (q[0] == 0 and next((c for c in q[1:] if c != 0), 0) < 0):
        q = -q
    return q


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Shepperd's method; robust for all rotation angles."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def axis_angle_to_quat(rotvec):
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        # second-order expansion, exact to machine precision at this size
        q = np.array([1.0 - angle**2 / 8.0, *(0.5 * rotvec)])
    else:
        axis = rotvec / angle
        q = np.array([np.cos(angle / 2), *(np.sin(angle / 2) * axis)])
    return quat_normalize(q)


def quat_angle(q):
    """Rotation angle in radians of a unit quaternion."""
    w = abs(float(q[0]))
    v = float(np.linalg.norm(q[1:]))
    return 2.0 * np.arctan2(v, w)


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, R, t) -> Pose:
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_rotvec(cls, rotvec, t) -> Pose:
        return cls(axis_angle_to_quat(rotvec), t)

    @classmethod
    def from_center(cls, R, center) -> Pose:
        """Pose whose camera sits at ``center`` (world frame) with rotation ``R``."""
        R = np.asarray(R, dtype=np.float64)
        return cls.from_matrix(R, -R @ np.asarray(center, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def center(self) -> np.ndarray:
        """Camera center in the world frame, ``-R^T t``."""
        return -self.R.T @ self.translation

    def as_array(self) -> np.ndarray:
        """``[qw, qx, qy, qz, tx, ty, tz]``"""
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_array(cls, a) -> Pose:
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:4], a[4:7])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def compose(a: Pose, b: Pose) -> Pose:
    """``compose(a, b)`` applies ``b`` first, then ``a``."""
    q = quat_multiply(a.rotation, b.rotation)
    t = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return Pose(q, t)


def inverse(p: Pose) -> Pose:
    w, x, y, z = p.rotation
    q = np.array([w, -x, -y, -z])
    return Pose(q, -(quat_to_matrix(q) @ p.translation))


def rotation_error_deg(a: Pose, b: Pose) -> float:
    """Angle of ``R_a R_b^T`` in degrees.

    The relative quaternion ``q_a conj(q_b)`` is expanded so that identical
    inputs cancel exactly and give an angle of exactly zero.
    """
    wa, va = a.rotation[0], a.rotation[1:]
    wb, vb = b.rotation[0], b.rotation[1:]
    dw = wa * wb + va @ vb
    dv = wb * va - wa * vb - np.cross(va, vb)
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(dv), abs(dw))))


def translation_error(a: Pose, b: Pose) -> float:
    """Distance between camera centers in meters."""
    return float(np.linalg.norm(a.center - b.center))


def transform_to_camera(point, pose: Pose) -> np.ndarray:
    """Map world point(s) ``(..., 3)`` into the camera frame."""
    point = np.asarray(point, dtype=np.float64)
    return point @ pose.R.T + pose.translation


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def bearings(self, u, v) -> np.ndarray:
        """Unnormalized camera-frame ray directions ``(x, y, 1)`` for pixels."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}


def project(point, pose: Pose, K: CameraIntrinsics):
    """Project one world point; returns ``(pixel, depth)``.

    Raises :class:`BehindCamera` when the camera-frame depth is not positive.
    """
    pc = transform_to_camera(point, pose)
    if pc[2] <= _EPS_DEPTH:
        raise BehindCamera(f"camera-frame depth {pc[2]:.3g} is not positive")
    pixel = np.array([K.fx * pc[0] / pc[2] + K.cx, K.fy * pc[1] / pc[2] + K.cy])
    return pixel, float(pc[2])


def project_many(points, pose: Pose, K: CameraIntrinsics):
    """Vectorized projection; pixels behind the camera come back as NaN."""
    pc = transform_to_camera(points, pose)
    z = pc[..., 2]
    ok = z > _EPS_DEPTH
    zs = np.where(ok, z, np.nan)
    u = K.fx * pc[..., 0] / zs + K.cx
    v = K.fy * pc[..., 1] / zs + K.cy
    return np.stack([u, v], axis=-1), z


def cell_centers(h: int, w: int, stride: int = 1):
    """Full-resolution pixel coordinates ``(u, v)`` of grid cell centers."""
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    return (jj + 0.5) * stride, (ii + 0.5) * stride


# ---------------------------------------------------------------------------
# map containers
# ---------------------------------------------------------------------------


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CoordStateMap:
    """Per-pixel scene coordinates with isotropic variance.

    The same container carries ground truth, measurements, priors and
    posteriors. Invalid pixels hold NaN coordinates and log-variance.
    """

    coords: np.ndarray
    log_variance: np.ndarray
    valid: np.ndarray
    stride: int = 1

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        logvar = np.array(self.log_variance, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if coords.ndim != 3 or coords.shape[2] != 3:
            raise ShapeMismatch(f"coords must be HxWx3, got {coords.shape}")
        if logvar.shape != coords.shape[:2] or valid.shape != coords.shape[:2]:
            raise ShapeMismatch("log_variance and valid must be HxW matching coords")
        valid &= np.isfinite(coords).all(axis=2) & np.isfinite(logvar)
        coords[~valid] = np.nan
        logvar[~valid] = np.nan
        object.__setattr__(self, "coords", _frozen(coords, np.float64))
        object.__setattr__(self, "log_variance", _frozen(logvar, np.float64))
        object.__setattr__(self, "valid", _frozen(valid, bool))
        object.__setattr__(self, "stride", int(self.stride))

    @classmethod
    def from_variance(cls, coords, variance, valid=None, stride=1) -> CoordStateMap:
        variance = np.asarray(variance, dtype=np.float64)
        if valid is None:
            valid = np.isfinite(variance) & (variance > 0)
        valid = np.asarray(valid, dtype=bool) & (variance > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logvar = np.log(np.where(valid, variance, np.nan))
        return cls(coords, logvar, valid, stride)

    @classmethod
    def empty(cls, h: int, w: int, stride: int = 1) -> CoordStateMap:
        return cls(np.full((h, w, 3), np.nan), np.full((h, w), np.nan), np.zeros((h, w), bool), stride)

    @property
    def shape(self):
        return self.valid.shape

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_variance)

    def replace(self, **changes) -> CoordStateMap:
        fields = dict(coords=self.coords, log_variance=self.log_variance, valid=self.valid, stride=self.stride)
        fields.update(changes)
        return CoordStateMap(**fields)

    def equals(self, other: CoordStateMap) -> bool:
        """Bitwise equality, NaN payloads included."""
        return (
            self.stride == other.stride
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.coords, other.coords, equal_nan=True)
            and np.array_equal(self.log_variance, other.log_variance, equal_nan=True)
        )


@dataclass(frozen=True, eq=False)
class FlowField:
    """Backward-indexed displacement field.

    ``offsets[i, j]`` is the motion, in full-resolution pixels ``(du, dv)``, of
    the content now at cell ``(i, j)`` since the previous frame, i.e. the
    content came from ``center(i, j) - offsets[i, j]``.
    """

    offsets: np.ndarray
    valid: np.ndarray
    stride: int = 1

    def __post_init__(self):
        off = np.array(self.offsets, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if off.ndim != 3 or off.shape[2] != 2 or valid.shape != off.shape[:2]:
            raise ShapeMismatch(f"offsets must be HxWx2 with matching mask, got {off.shape}")
        valid &= np.isfinite(off).all(axis=2)
        off[~valid] = np.nan
        object.__setattr__(self, "offsets", _frozen(off, np.float64))
        object.__setattr__(self, "valid", _frozen(valid, bool))
        object.__setattr__(self, "stride", int(self.stride))

    @classmethod
    def zeros(cls, h: int, w: int, stride: int = 1) -> FlowField:
        return cls(np.zeros((h, w, 2)), np.ones((h, w), bool), stride)

    @property
    def shape(self):
        return self.valid.shape

    @property
    def confidence_valid(self) -> np.ndarray:
        return self.valid

    def in_cells(self) -> np.ndarray:
        return self.offsets / self.stride
