"""Synthetic textured scenes, camera trajectories and labelled frame sequences.

Everything here is deterministic: textures come from per-plane seeds and the
sequence generator derives per-frame seeds from a master seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io
from .errors import EmptyView
from .geometry import (
    CameraIntrinsics,
    CoordStateMap,
    FlowField,
    Pose,
    cell_centers,
    rotation_error_deg,
    translation_error,
)

MIN_COVERAGE = 0.2
_VISIBILITY_RTOL = 1e-6


# ---------------------------------------------------------------------------
# scene model
# ---------------------------------------------------------------------------


def _fade(x):
    return x * x * x * (x * (x * 6.0 - 15.0) + 10.0)


@dataclass(frozen=True, eq=False)
class Plane:
    """Textured rectangle ``origin + a * edge_u + b * edge_v`` for ``a, b`` in [0, 1]."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture_seed: int = 0
    texture_cell: float = 0.15
    octaves: int = 3
    albedo: float = 0.5

    def __post_init__(self):
        for name in ("origin", "edge_u", "edge_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        area = np.linalg.norm(np.cross(self.edge_u, self.edge_v))
        if not area > 0:
            raise ValueError("plane has zero area")
        if abs(np.dot(self.edge_u, self.edge_v)) > 1e-9 * area:
            raise ValueError("plane edges must be orthogonal")
        size = np.array([np.linalg.norm(self.edge_u), np.linalg.norm(self.edge_v)])
        rng = np.random.default_rng(self.texture_seed)
        lattices = []
        for k in range(self.octaves):
            cell = self.texture_cell / 2**k
            shape = tuple((np.ceil(size / cell) + 2).astype(int))
            lattices.append(rng.random(shape))
        object.__setattr__(self, "_size", size)
        object.__setattr__(self, "_lattices", lattices)

    @property
    def corners(self) -> np.ndarray:
        o, u, v = self.origin, self.edge_u, self.edge_v
        return np.array([o, o + u, o + u + v, o + v])

    def texture(self, a, b) -> np.ndarray:
        """Multi-octave value noise at local coordinates, values in [0, 1]."""
        x = np.asarray(a) * self._size[0]
        y = np.asarray(b) * self._size[1]
        total = np.zeros(np.shape(x))
        norm = 0.0
        for k, lat in enumerate(self._lattices):
            cell = self.texture_cell / 2**k
            gx, gy = x / cell, y / cell
            ix = np.clip(np.floor(gx).astype(int), 0, lat.shape[0] - 2)
            iy = np.clip(np.floor(gy).astype(int), 0, lat.shape[1] - 2)
            fx, fy = _fade(gx - ix), _fade(gy - iy)
            top = lat[ix, iy] * (1 - fx) + lat[ix + 1, iy] * fx
            bot = lat[ix, iy + 1] * (1 - fx) + lat[ix + 1, iy + 1] * fx
            amp = 0.5**k
            total += amp * (top * (1 - fy) + bot * fy)
            norm += amp
        return np.clip(self.albedo + 0.8 * (total / norm - 0.5), 0.0, 1.0)

    def transformed(self, pose: Pose) -> Plane:
        """Same texture, placed by the rigid transform ``pose`` (object to world)."""
        R = pose.R
        p = replace(
            self,
            origin=R @ self.origin + pose.translation,
            edge_u=R @ self.edge_u,
            edge_v=R @ self.edge_v,
        )
        return p


@dataclass(frozen=True, eq=False)
class DynamicQuad:
    """A textured quad moving with constant linear and angular velocity."""

    plane: Plane
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def pose_at(self, t: float) -> Pose:
        """Object-to-world transform at time ``t`` (rotation about the plane origin)."""
        w = np.asarray(self.angular_velocity, dtype=np.float64) * t
        rot = Pose.from_rotvec(w, np.zeros(3)).R
        o = self.plane.origin
        return Pose.from_matrix(rot, o - rot @ o + np.asarray(self.velocity, dtype=np.float64) * t)

    def plane_at(self, t: float) -> Plane:
        return self.plane.transformed(self.pose_at(t))


@dataclass(frozen=True, eq=False)
class SceneModel:
    planes: list
    dynamic_objects: list = field(default_factory=list)

    def __post_init__(self):
        corners = np.concatenate([p.corners for p in self.planes]) if self.planes else np.zeros((0, 3))
        if len(corners) and not np.isfinite(corners).all():
            raise ValueError("scene bounding box must be finite")

    def planes_at(self, t: float) -> list:
        return list(self.planes) + [d.plane_at(t) for d in self.dynamic_objects]

    def object_pose(self, obj_id: int, t: float) -> Pose:
        k = obj_id - len(self.planes)
        if k < 0:
            return Pose.identity()
        return self.dynamic_objects[k].pose_at(t)

    def with_dynamic(self, extra) -> SceneModel:
        return SceneModel(list(self.planes), list(self.dynamic_objects) + list(extra))


def _box(center, size, seed, albedo=0.5, cell=0.1):
    """The five faces of an axis-aligned box standing on the floor (no bottom)."""
    cx, cy, cz = center
    sx, sy, sz = size
    x0, x1 = cx - sx / 2, cx + sx / 2
    y0, y1 = cy - sy / 2, cy + sy / 2
    z0, z1 = cz - sz / 2, cz + sz / 2
    faces = [
        ((x0, y0, z0), (sx, 0, 0), (0, sy, 0)),  # front, facing -z
        ((x0, y0, z0), (0, 0, sz), (0, sy, 0)),  # left
        ((x1, y0, z0), (0, 0, sz), (0, sy, 0)),  # right
        ((x0, y0, z0), (sx, 0, 0), (0, 0, sz)),  # top (y is down)
        ((x0, y0, z1), (sx, 0, 0), (0, sy, 0)),  # back
    ]
    return [Plane(o, u, v, seed + k, cell, 3, albedo) for k, (o, u, v) in enumerate(faces)]


def make_default_scene(seed: int = 0, dynamic: bool = True) -> SceneModel:
    """A closed room with two boxes; optionally one slowly drifting panel.

    World axes follow the camera convention at the identity pose: x right,
    y down, z forward.
    """
    s = seed * 1000
    planes = [
        Plane((-2.5, -1.5, 4.0), (5.0, 0, 0), (0, 3.0, 0), s + 1, 0.16, 3, 0.55),  # back wall
        Plane((-2.5, 1.5, -1.0), (5.0, 0, 0), (0, 0, 5.0), s + 2, 0.5, 2, 0.45),  # floor
        Plane((-2.5, -1.5, -1.0), (5.0, 0, 0), (0, 0, 5.0), s + 3, 0.5, 2, 0.6),  # ceiling
        Plane((-2.5, -1.5, -1.0), (0, 0, 5.0), (0, 3.0, 0), s + 4, 0.16, 3, 0.5),  # left wall
        Plane((2.5, -1.5, -1.0), (0, 0, 5.0), (0, 3.0, 0), s + 5, 0.16, 3, 0.5),  # right wall
        Plane((-2.5, -1.5, -1.0), (5.0, 0, 0), (0, 3.0, 0), s + 6, 0.16, 3, 0.5),  # wall behind
    ]
    planes += _box((-0.9, 1.05, 2.6), (0.8, 0.9, 0.7), s + 10, 0.35, 0.08)
    planes += _box((1.0, 0.9, 3.0), (0.7, 1.2, 0.6), s + 20, 0.7, 0.08)
    dyn = []
    if dynamic:
        panel = Plane((-1.8, -0.6, 3.2), (0.45, 0, 0), (0, 0.45, 0), s + 30, 0.06, 2, 0.8)
        dyn.append(DynamicQuad(panel, velocity=np.array([0.12, 0.0, 0.0])))
    return SceneModel(planes, dyn)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    poses: list
    timestamps: np.ndarray
    max_angular_velocity: float = np.inf  # rad/s
    max_linear_velocity: float = np.inf  # m/s

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "timestamps", ts)
        if len(self.poses) != len(ts):
            raise ValueError("one timestamp per pose required")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        for k in range(1, len(ts)):
            dt = ts[k] - ts[k - 1]
            a, b = self.poses[k - 1], self.poses[k]
            if np.radians(rotation_error_deg(b, a)) / dt > self.max_angular_velocity + 1e-12:
                raise ValueError(f"angular velocity limit exceeded between frames {k - 1} and {k}")
            if translation_error(b, a) / dt > self.max_linear_velocity + 1e-12:
                raise ValueError(f"linear velocity limit exceeded between frames {k - 1} and {k}")

    def __len__(self):
        return len(self.poses)


def _rot_yaw_pitch_roll(yaw, pitch, roll):
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Ry @ Rx @ Rz  # camera-to-world


def make_trajectory(n_frames: int = 100, fps: float = 30.0, amplitude: float = 1.0, speed: float = 1.0) -> Trajectory:
    """Smooth hand-held style motion looking roughly down +z.

    ``amplitude`` scales the excursion, ``speed`` scales how fast it is traversed.
    """
    t = np.arange(n_frames) / fps
    w = 2 * np.pi * 0.12 * speed
    poses = []
    for tk in t:
        center = amplitude * np.array(
            [0.45 * np.sin(w * tk), 0.12 * np.sin(1.7 * w * tk), 0.25 * np.sin(0.6 * w * tk)]
        )
        yaw = amplitude * 0.22 * np.sin(0.8 * w * tk + 0.3)
        pitch = amplitude * 0.08 * np.sin(1.3 * w * tk)
        roll = amplitude * 0.03 * np.sin(0.9 * w * tk)
        R_cw = _rot_yaw_pitch_roll(yaw, pitch, roll)
        poses.append(Pose.from_center(R_cw.T, center))
    return Trajectory(poses, t)


def static_trajectory(n_frames: int = 10, fps: float = 30.0, pose: Pose | None = None) -> Trajectory:
    pose = pose or Pose.identity()
    return Trajectory([pose] * n_frames, np.arange(n_frames) / fps)


def translation_trajectory(n_frames: int, step, fps: float = 30.0, start: Pose | None = None) -> Trajectory:
    """Camera center moving by ``step`` (world meters) every frame, fixed rotation."""
    start = start or Pose.identity()
    R = start.R
    c0 = start.center
    step = np.asarray(step, dtype=np.float64)
    poses = [Pose.from_center(R, c0 + k * step) for k in range(n_frames)]
    return Trajectory(poses, np.arange(n_frames) / fps)


def default_camera(width: int = 256, height: int = 192, fov_deg: float = 65.0) -> CameraIntrinsics:
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return CameraIntrinsics(f, f, width / 2, height / 2, width, height)


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------


@dataclass
class RayHits:
    depth: np.ndarray  # camera-frame z of the hit, inf where nothing was hit
    object_id: np.ndarray  # -1 where nothing was hit
    a: np.ndarray
    b: np.ndarray
    points: np.ndarray  # world coordinates, NaN where nothing was hit


def cast_rays(scene: SceneModel, pose: Pose, K: CameraIntrinsics, u, v, t: float = 0.0) -> RayHits:
    """Nearest-hit ray casting through continuous pixel positions ``(u, v)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    shape = u.shape
    d_cam = K.bearings(u.ravel(), v.ravel())
    R = pose.R
    d = d_cam @ R  # rows are R^T d_cam; unit camera depth per unit parameter
    C = pose.center
    n = len(d)
    best = np.full(n, np.inf)
    obj = np.full(n, -1, dtype=int)
    best_a = np.full(n, np.nan)
    best_b = np.full(n, np.nan)
    for k, pl in enumerate(scene.planes_at(t)):
        normal = np.cross(pl.edge_u, pl.edge_v)
        denom = d @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((pl.origin - C) @ normal) / denom
        hit = np.isfinite(lam) & (lam > 1e-6) & (lam < best)
        if not hit.any():
            continue
        idx = np.flatnonzero(hit)
        p = C + lam[idx, None] * d[idx]
        rel = p - pl.origin
        a = rel @ pl.edge_u / (pl.edge_u @ pl.edge_u)
        b = rel @ pl.edge_v / (pl.edge_v @ pl.edge_v)
        inside = (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        idx = idx[inside]
        best[idx] = lam[idx]
        obj[idx] = k
        best_a[idx] = a[inside]
        best_b[idx] = b[inside]
    points = np.where(np.isfinite(best)[:, None], C + best[:, None] * d, np.nan)
    return RayHits(
        best.reshape(shape),
        obj.reshape(shape),
        best_a.reshape(shape),
        best_b.reshape(shape),
        points.reshape(shape + (3,)),
    )


def shade(scene: SceneModel, hits: RayHits, t: float, background: float = 0.5) -> np.ndarray:
    planes = scene.planes_at(t)
    img = np.full(hits.depth.shape, background)
    for k, pl in enumerate(planes):
        m = hits.object_id == k
        if m.any():
            img[m] = pl.texture(hits.a[m], hits.b[m])
    return img


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

BLURRED = "blurred"
TRIMMED_RESTART = "trimmed_restart"


@dataclass(frozen=True, eq=False)
class FrameBundle:
    image: np.ndarray
    gt_coords: CoordStateMap
    gt_flow: FlowField
    gt_pose: Pose
    timestamp: float = 0.0
    degradation_tags: frozenset = frozenset()
    gt_object_id: np.ndarray | None = None
    index: int = 0

    @property
    def label_stride(self) -> int:
        return self.gt_coords.stride


def render_labels(
    scene: SceneModel,
    pose: Pose,
    K: CameraIntrinsics,
    t: float,
    stride: int,
    prev_pose: Pose | None = None,
    prev_t: float | None = None,
):
    """Ground-truth coordinates and backward flow at the centers of ``stride`` cells."""
    h, w = K.height // stride, K.width // stride
    u, v = cell_centers(h, w, stride)
    hits = cast_rays(scene, pose, K, u, v, t)
    valid = hits.object_id >= 0
    coords = CoordStateMap(hits.points, np.zeros((h, w)), valid, stride)

    if prev_pose is None:
        prev_pose, prev_t = pose, t
    # where each hit point was at the previous timestamp
    prev_points = hits.points.copy()
    for k in range(len(scene.planes), len(scene.planes) + len(scene.dynamic_objects)):
        m = hits.object_id == k
        if m.any():
            now, then = scene.object_pose(k, t), scene.object_pose(k, prev_t)
            local = (hits.points[m] - now.translation) @ now.R
            prev_points[m] = local @ then.R.T + then.translation
    pc = prev_points @ prev_pose.R.T + prev_pose.translation
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        pu = K.fx * pc[..., 0] / z + K.cx
        pv = K.fy * pc[..., 1] / z + K.cy
    inb = valid & (z > 1e-9) & (pu >= 0) & (pu < K.width) & (pv >= 0) & (pv < K.height)
    flow_valid = np.zeros((h, w), bool)
    if inb.any():
        back = cast_rays(scene, prev_pose, K, pu[inb], pv[inb], prev_t)
        same = (back.object_id == hits.object_id[inb]) & (
            np.abs(back.depth - z[inb]) <= _VISIBILITY_RTOL * (1.0 + z[inb])
        )
        flow_valid[inb] = same
    offsets = np.stack([u - pu, v - pv], axis=-1)
    flow = FlowField(offsets, flow_valid, stride)
    return coords, flow, hits.object_id


def render_frame(
    scene: SceneModel,
    pose: Pose,
    K: CameraIntrinsics,
    t: float = 0.0,
    prev_pose: Pose | None = None,
    prev_t: float | None = None,
    label_stride: int = 1,
    index: int = 0,
) -> FrameBundle:
    """Ray-cast an image plus coordinate and flow labels for one camera pose.

    Labels are produced at ``label_stride`` cell centers; flow is relative to
    ``prev_pose`` (defaults to ``pose`` itself, giving zero flow).
    """
    u, v = cell_centers(K.height, K.width, 1)
    hits = cast_rays(scene, pose, K, u, v, t)
    coverage = float((hits.object_id >= 0).mean())
    if coverage < MIN_COVERAGE:
        raise EmptyView(f"only {coverage:.1%} of pixels hit a surface", index)
    image = shade(scene, hits, t)
    coords, flow, obj = render_labels(scene, pose, K, t, label_stride, prev_pose, prev_t)
    return FrameBundle(image, coords, flow, pose, float(t), frozenset(), obj, index)


def motion_blur_kernel(kernel_px: int, direction) -> np.ndarray:
    """Normalized line kernel of ``kernel_px`` taps along ``direction`` (du, dv)."""
    if kernel_px < 1:
        raise ValueError("kernel_px must be >= 1")
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    d = d / norm if norm > 1e-12 else np.array([1.0, 0.0])
    half = (kernel_px - 1) / 2.0
    r = int(np.ceil(half)) + 1
    ker = np.zeros((2 * r + 1, 2 * r + 1))
    for k in range(kernel_px):
        s = k - half
        x, y = r + s * d[0], r + s * d[1]
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - x0, y - y0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                if 0 <= y0 + dy < ker.shape[0] and 0 <= x0 + dx < ker.shape[1]:
                    ker[y0 + dy, x0 + dx] += wy * wx
    return ker / ker.sum()


def apply_motion_blur(frame: FrameBundle, kernel_px: int, direction=(1.0, 0.0)) -> FrameBundle:
    """Line-kernel blur of the image only; labels are left untouched.

    Boundaries wrap, so the image mean is preserved exactly.
    """
    ker = motion_blur_kernel(kernel_px, direction)
    if kernel_px == 1:
        img = frame.image.copy()
    else:
        img = ndimage.convolve(frame.image, ker, mode="wrap")
    return replace(frame, image=img, degradation_tags=frame.degradation_tags | {BLURRED})


@dataclass(frozen=True)
class DegradationConfig:
    blur_kernel_px: int = 0
    blur_every_n: int = 10
    trim_range: tuple | None = None  # inclusive original frame indices
    occluder_count: int = 0
    blur_direction: tuple | None = None  # None: image motion direction

    def __post_init__(self):
        if self.blur_kernel_px < 0:
            raise ValueError("blur_kernel_px must be >= 0")
        if self.blur_every_n < 1:
            raise ValueError("blur_every_n must be >= 1")


def make_occluders(count: int, seed: int, near=(1.0, 2.0), speed=(0.15, 0.4)) -> list:
    rng = np.random.default_rng([seed, 7919])
    out = []
    for k in range(count):
        z = rng.uniform(*near)
        side = rng.uniform(0.25, 0.5)
        x = rng.uniform(-1.2, 0.6)
        y = rng.uniform(-0.6, 0.4)
        plane = Plane((x, y, z), (side, 0, 0), (0, side, 0), int(rng.integers(1 << 30)), 0.05, 2, 0.3 + 0.4 * rng.random())
        vel = np.array([rng.uniform(*speed) * rng.choice([-1, 1]), rng.uniform(-0.05, 0.05), 0.0])
        out.append(DynamicQuad(plane, vel))
    return out


def generate_sequence(
    scene: SceneModel,
    traj: Trajectory,
    K: CameraIntrinsics,
    degradation: DegradationConfig | None = None,
    seed: int = 0,
    label_stride: int = 1,
) -> list:
    """Render a trajectory into frame bundles, applying trims, occluders and blur."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    degradation = degradation or DegradationConfig()
    if degradation.occluder_count:
        scene = scene.with_dynamic(make_occluders(degradation.occluder_count, seed))
    keep = list(range(len(traj)))
    if degradation.trim_range is not None:
        a, b = degradation.trim_range
        keep = [k for k in keep if not (a <= k <= b)]
    frames = []
    prev = None
    for out_idx, k in enumerate(keep):
        pose, t = traj.poses[k], float(traj.timestamps[k])
        prev_pose, prev_t = (traj.poses[prev], float(traj.timestamps[prev])) if prev is not None else (None, None)
        try:
            fr = render_frame(scene, pose, K, t, prev_pose, prev_t, label_stride, out_idx)
        except EmptyView as exc:
            raise EmptyView(f"frame {out_idx}: {exc}", out_idx) from exc
        tags = set()
        if prev is not None and k != prev + 1:
            tags.add(TRIMMED_RESTART)
        fr = replace(fr, degradation_tags=frozenset(tags))
        if degradation.blur_kernel_px >= 1 and out_idx % degradation.blur_every_n == degradation.blur_every_n - 1:
            direction = degradation.blur_direction
            if direction is None:
                direction = _mean_flow_direction(fr.gt_flow)
            fr = apply_motion_blur(fr, degradation.blur_kernel_px, direction)
        frames.append(fr)
        prev = k
    return frames


def _mean_flow_direction(flow: FlowField):
    if not flow.valid.any():
        return (1.0, 0.0)
    m = flow.offsets[flow.valid].mean(axis=0)
    return tuple(m) if np.linalg.norm(m) > 1e-9 else (1.0, 0.0)


# ---------------------------------------------------------------------------
# sequence manifest
# ---------------------------------------------------------------------------


def save_sequence(frames: list, K: CameraIntrinsics, out_dir, extra: dict | None = None) -> Path:
    """Write images (PGM), coordinate maps (KFSC), flows and a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for fr in frames:
        stem = f"frame_{fr.index:05d}"
        io.write_pgm(out / f"{stem}.pgm", fr.image)
        io.write_coord_map(out / f"{stem}.kfsc", fr.gt_coords)
        io.write_flow(out / f"{stem}.flow", fr.gt_flow)
        entries.append(
            {
                "index": fr.index,
                "timestamp": fr.timestamp,
                "image": f"{stem}.pgm",
                "coords": f"{stem}.kfsc",
                "flow": f"{stem}.flow",
                "pose": [float(x) for x in fr.gt_pose.as_array()],
                "tags": sorted(fr.degradation_tags),
            }
        )
    manifest = {
        "camera": K.to_dict(),
        "label_stride": frames[0].label_stride if frames else 1,
        "frames": entries,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_sequence(manifest_path):
    """Inverse of :func:`save_sequence`; returns ``(frames, K)``."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    m = json.loads(path.read_text())
    root = path.parent
    K = CameraIntrinsics(**m["camera"])
    stride = int(m.get("label_stride", 1))
    frames = []
    for e in m["frames"]:
        frames.append(
            FrameBundle(
                image=io.read_pgm(root / e["image"]),
                gt_coords=io.read_coord_map(root / e["coords"], stride),
                gt_flow=io.read_flow(root / e["flow"], stride),
                gt_pose=Pose.from_array(e["pose"]),
                timestamp=float(e["timestamp"]),
                degradation_tags=frozenset(e.get("tags", [])),
                index=int(e["index"]),
            )
        )
    return frames, K
