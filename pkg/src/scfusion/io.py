"""On-disk formats: KFSC coordinate maps, flow binaries, PLY, PGM/PPM."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import CoordStateMap, FlowField

COORD_MAGIC = b"KFSC"
FLOW_MAGIC = b"KFFL"
_HEADER = struct.Struct("<4sII")


def coord_map_to_bytes(m: CoordStateMap) -> bytes:
    h, w = m.shape
    return b"".join(
        [
            _HEADER.pack(COORD_MAGIC, h, w),
            np.ascontiguousarray(m.coords, dtype="<f4").tobytes(),
            np.ascontiguousarray(m.log_variance, dtype="<f4").tobytes(),
            np.ascontiguousarray(m.valid, dtype="u1").tobytes(),
        ]
    )


def coord_map_from_bytes(data: bytes, stride: int = 1) -> CoordStateMap:
    magic, h, w = _HEADER.unpack_from(data, 0)
    if magic != COORD_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {COORD_MAGIC!r}")
    n = h * w
    off = _HEADER.size
    expected = off + 12 * n + 4 * n + n
    if len(data) != expected:
        raise ValueError(f"truncated KFSC payload: {len(data)} bytes, expected {expected}")
    coords = np.frombuffer(data, "<f4", 3 * n, off).reshape(h, w, 3).astype(np.float64)
    off += 12 * n
    logvar = np.frombuffer(data, "<f4", n, off).reshape(h, w).astype(np.float64)
    off += 4 * n
    valid = np.frombuffer(data, "u1", n, off).reshape(h, w).astype(bool)
    return CoordStateMap(coords, logvar, valid, stride)


def write_coord_map(path, m: CoordStateMap) -> None:
    Path(path).write_bytes(coord_map_to_bytes(m))


def read_coord_map(path, stride: int = 1) -> CoordStateMap:
    return coord_map_from_bytes(Path(path).read_bytes(), stride)


def flow_to_bytes(f: FlowField) -> bytes:
    h, w = f.shape
    return b"".join(
        [
            _HEADER.pack(FLOW_MAGIC, h, w),
            np.ascontiguousarray(f.offsets, dtype="<f4").tobytes(),
            np.ascontiguousarray(f.valid, dtype="u1").tobytes(),
        ]
    )


def flow_from_bytes(data: bytes, stride: int = 1) -> FlowField:
    magic, h, w = _HEADER.unpack_from(data, 0)
    if magic != FLOW_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {FLOW_MAGIC!r}")
    n = h * w
    off = _HEADER.size
    if len(data) != off + 8 * n + n:
        raise ValueError("truncated flow payload")
    offsets = np.frombuffer(data, "<f4", 2 * n, off).reshape(h, w, 2).astype(np.float64)
    valid = np.frombuffer(data, "u1", n, off + 8 * n).reshape(h, w).astype(bool)
    return FlowField(offsets, valid, stride)


def write_flow(path, f: FlowField) -> None:
    Path(path).write_bytes(flow_to_bytes(f))


def read_flow(path, stride: int = 1) -> FlowField:
    return flow_from_bytes(Path(path).read_bytes(), stride)


# --- images ----------------------------------------------------------------


def write_pgm(path, image) -> None:
    """Binary 16-bit PGM of an image with intensities in [0, 1]."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w = img.shape
    data = np.round(img * 65535).astype(">u2").tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + data)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError("only binary PGM (P5) is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(raw, dtype, h * w, pos).reshape(h, w)
    return img.astype(np.float64) / maxval


def write_ppm(path, rgb) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def flow_to_rgb(flow: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Hue encodes direction, saturation encodes magnitude; invalid cells black."""
    off = np.nan_to_num(flow.offsets)
    mag = np.hypot(off[..., 0], off[..., 1])
    if max_magnitude is None:
        max_magnitude = float(mag[flow.valid].max()) if flow.valid.any() else 1.0
    max_magnitude = max(max_magnitude, 1e-9)
    hue = (np.arctan2(off[..., 1], off[..., 0]) / (2 * np.pi)) % 1.0
    sat = np.clip(mag / max_magnitude, 0, 1)
    # HSV -> RGB with V = 1
    k = (np.stack([5.0, 3.0, 1.0]) + hue[..., None] * 6.0) % 6.0
    rgb = 1.0 - sat[..., None] * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)
    rgb[~flow.valid] = 0.0
    return np.round(rgb * 255).astype(np.uint8)


# --- point clouds ----------------------------------------------------------


def write_ply(path, points, variances=None) -> int:
    """ASCII PLY with grayscale from variance rank (most certain is brightest)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    gray = np.full(n, 255, dtype=int)
    if variances is not None and n > 1:
        rank = np.empty(n, dtype=float)
        rank[np.argsort(np.asarray(variances), kind="stable")] = np.arange(n)
        gray = np.round(255 * (1.0 - rank / (n - 1))).astype(int)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {g} {g} {g}" for p, g in zip(points, gray)]
    Path(path).write_text("\n".join(lines) + "\n")
    return n


def read_ply_points(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    n = int(next(line for line in lines if line.startswith("element vertex")).split()[-1])
    start = lines.index("end_header") + 1
    if n == 0:
        return np.zeros((0, 3))
    return np.array([[float(x) for x in line.split()[:3]] for line in lines[start : start + n]])
