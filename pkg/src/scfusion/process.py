"""State transition between frames: features, cost volumes, soft-argmin flow,
flow-guided warping of the previous posterior, and process noise.

Offsets ``o`` in a cost volume are image motions: the current cell ``p`` is
compared with the previous frame at ``p - o``, so the expected offset is
directly the backward-indexed flow used by :func:`warp_state`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io
from .errors import BadStride, ShapeMismatch
from .geometry import CoordStateMap, FlowField
from .measurement import gaussian_nll, gaussian_nll_grad

ENERGY_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """L2-normalized cell descriptors.

    ``phases`` optionally holds descriptors of cells displaced by sub-cell
    amounts, indexed ``phases[dy // search_stride, dx // search_stride]``; they
    let a cost volume search at finer than cell resolution.
    """

    descriptors: np.ndarray  # h x w x c
    defined: np.ndarray  # h x w
    stride: int
    phases: np.ndarray | None = None  # P x P x h x w x c
    phases_defined: np.ndarray | None = None  # P x P x h x w
    search_stride: int | None = None

    @property
    def shape(self):
        return self.defined.shape


def _block_means(a, step, pad):
    """Means of ``step x step`` blocks anchored at every pixel of the
    edge-padded array (top-left anchoring, padded coordinates)."""
    p = np.pad(a, pad + step, mode="edge")
    c = np.pad(p.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    n = p.shape[0] - step + 1, p.shape[1] - step + 1
    s = c[step:, step:] - c[:-step, step:] - c[step:, :-step] + c[:-step, :-step]
    return s[: n[0], : n[1]] / (step * step)


def _cell_descriptors(blocks, grad_x, grad_y, shape, stride, step, pad, dy=0, dx=0):
    """Descriptors for the cell grid displaced by ``(dy, dx)`` pixels.

    Each cell samples ``stride x stride`` block means of ``step`` pixels on a
    lattice spanning ``stride * step`` pixels centered on the cell; with
    ``step = 1`` this is the cell's own pixels.
    """
    H, W = shape
    h, w = H // stride, W // stride
    support = stride * step
    off = (stride - support) // 2 + pad + step
    ky = np.arange(stride) * step
    rows = (np.arange(h) * stride + dy + off)[:, None] + ky[None, :]  # h x n
    cols = (np.arange(w) * stride + dx + off)[:, None] + ky[None, :]  # w x n
    ri = rows[:, None, :, None]
    ci = cols[None, :, None, :]
    patch = blocks[ri, ci].reshape(h, w, stride * stride)
    patch = patch - patch.mean(axis=-1, keepdims=True)
    gx = grad_x[ri, ci].reshape(h, w, -1).mean(axis=-1)
    gy = grad_y[ri, ci].reshape(h, w, -1).mean(axis=-1)
    desc = np.concatenate([patch, gx[..., None], gy[..., None]], axis=-1)
    energy = np.sum(desc * desc, axis=-1)
    defined = np.isfinite(energy) & (energy >= ENERGY_FLOOR)
    norm = np.sqrt(np.where(defined, energy, 1.0))
    desc = np.where(defined[..., None], desc / norm[..., None], 0.0)
    return desc, defined


def extract_features(
    image, stride: int = 8, search_stride: int | None = None, support: int | None = None
) -> FeatureMap:
    """Mean-removed intensity lattice plus pooled Sobel responses per cell.

    ``support`` (a multiple of ``stride``, default ``stride``) is the side of
    the square each descriptor summarizes; wider supports average finer
    texture into block means and tolerate blur better.
    """
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape
    if stride < 1 or H % stride or W % stride:
        raise BadStride(f"image {H}x{W} is not divisible by stride {stride}")
    if search_stride is not None and (search_stride < 1 or stride % search_stride):
        raise BadStride(f"search stride {search_stride} must divide stride {stride}")
    support = stride if support is None else int(support)
    if support < stride or support % stride:
        raise BadStride(f"support {support} must be a positive multiple of stride {stride}")
    step = support // stride
    pad = support
    sx = ndimage.sobel(image, axis=1, mode="nearest")
    sy = ndimage.sobel(image, axis=0, mode="nearest")
    blocks = _block_means(image, step, pad)
    bx = _block_means(sx, step, pad)
    by = _block_means(sy, step, pad)
    args = (blocks, bx, by, (H, W), stride, step, pad)
    desc, defined = _cell_descriptors(*args)
    phases = phases_defined = None
    if search_stride is not None and search_stride < stride:
        shifts = range(0, stride, search_stride)
        P = len(shifts)
        phases = np.empty((P, P) + desc.shape)
        phases_defined = np.empty((P, P) + defined.shape, bool)
        for a, dy in enumerate(shifts):
            for b, dx in enumerate(shifts):
                phases[a, b], phases_defined[a, b] = _cell_descriptors(*args, dy, dx)
    return FeatureMap(desc, defined, stride, phases, phases_defined, search_stride)


@dataclass(frozen=True, eq=False)
class CostVolume:
    costs: np.ndarray  # h x w x n x n, indexed [.., oy, ox]
    valid: np.ndarray  # h x w x n x n
    offsets: np.ndarray  # n offsets per axis, full-resolution pixels
    window_size: int
    search_stride: int
    stride: int

    @property
    def shape(self):
        return self.costs.shape[:2]


def build_cost_volume(
    f_prev: FeatureMap,
    f_cur: FeatureMap,
    window_size: int = 9,
    search_stride: int | None = None,
    dtype=np.float64,
) -> CostVolume:
    """L1 distance between normalized descriptors over a square search window.

    ``window_size`` counts cells per side; with a finer ``search_stride`` the
    same extent is sampled every ``search_stride`` pixels using the phase
    descriptors of ``f_prev``.  ``dtype`` sets the working precision of the
    distance computation (``float32`` roughly halves the cost).
    """
    if f_prev.shape != f_cur.shape or f_prev.stride != f_cur.stride:
        raise ShapeMismatch("feature maps differ in shape or stride")
    if f_prev.descriptors.shape[-1] != f_cur.descriptors.shape[-1]:
        raise ShapeMismatch("feature maps differ in descriptor length")
    if window_size < 1 or window_size % 2 == 0:
        raise ValueError("window_size must be a positive odd integer")
    s = f_cur.stride
    ss = s if search_stride is None else int(search_stride)
    if ss < s and (f_prev.phases is None or f_prev.search_stride != ss):
        raise ValueError(f"previous features lack phase descriptors for search stride {ss}")
    if s % ss:
        raise BadStride(f"search stride {ss} must divide stride {s}")
    radius = (window_size // 2) * s
    offsets = np.arange(-radius, radius + 1, ss, dtype=np.float64)
    n = len(offsets)
    h, w = f_cur.shape
    cur = f_cur.descriptors.astype(dtype)
    # offsets sharing a sub-cell remainder read the same phase map, shifted
    # by whole cells; gather those shifts together from a padded copy
    groups: dict[int, list[tuple[int, int]]] = {}
    for k, o in enumerate(offsets.astype(int)):
        q, r = divmod(-o, s)
        groups.setdefault(r, []).append((k, q))
    pad = window_size // 2 + 1
    ii = np.arange(h)[:, None]
    jj = np.arange(w)[None, :]
    costs = np.zeros((h, w, n, n))
    valid = np.zeros((h, w, n, n), bool)
    for ry, rows in groups.items():
        for rx, cols in groups.items():
            if ry == 0 and rx == 0:
                src, src_def = f_prev.descriptors, f_prev.defined
            else:
                src, src_def = f_prev.phases[ry // ss, rx // ss], f_prev.phases_defined[ry // ss, rx // ss]
            src_p = np.pad(src.astype(dtype), ((pad, pad), (pad, pad), (0, 0)))
            def_p = np.pad(src_def, pad)  # cells outside the grid are undefined
            ka = np.array([k for k, _ in rows])
            kb = np.array([k for k, _ in cols])
            qy = np.array([q for _, q in rows])
            qx = np.array([q for _, q in cols])
            # current cell (i, j) reads previous cell (i + qy, j + qx)
            yi = (ii[None, None] + qy[:, None, None, None] + pad)
            xj = (jj[None, None] + qx[None, :, None, None] + pad)
            d = np.abs(cur[None, None] - src_p[yi, xj]).sum(axis=-1)  # ny x nx x h x w
            ok = def_p[yi, xj] & f_cur.defined[None, None]
            costs[:, :, ka[:, None], kb[None, :]] = d.transpose(2, 3, 0, 1)
            valid[:, :, ka[:, None], kb[None, :]] = ok.transpose(2, 3, 0, 1)
    costs[~valid] = 0.0
    return CostVolume(costs, valid, offsets, window_size, ss, s)


def flow_from_volume(vol: CostVolume, temperature: float = 0.05) -> FlowField:
    """Soft-argmin flow: expectation of window offsets under softmax(-cost / T)."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    h, w, n, _ = vol.costs.shape
    conf = np.where(vol.valid, -vol.costs / temperature, -np.inf).reshape(h, w, n * n)
    any_valid = vol.valid.reshape(h, w, -1).any(axis=-1)
    top = np.where(any_valid, conf.max(axis=-1), 0.0)
    with np.errstate(invalid="ignore"):
        e = np.exp(conf - top[..., None])
    e = np.where(np.isfinite(e), e, 0.0)
    p = e / np.where(any_valid, e.sum(axis=-1), 1.0)[..., None]
    oy, ox = np.meshgrid(vol.offsets, vol.offsets, indexing="ij")
    fu = p @ ox.ravel()
    fv = p @ oy.ravel()
    return FlowField(np.stack([fu, fv], axis=-1), any_valid, vol.stride)


def _bilinear_setup(h, w, src_i, src_j):
    i0 = np.floor(src_i)
    j0 = np.floor(src_j)
    fi = src_i - i0
    fj = src_j - j0
    i0 = i0.astype(int)
    j0 = j0.astype(int)
    # an exact hit on a grid row/column needs no second neighbor
    i1 = np.where(fi > 0, i0 + 1, i0)
    j1 = np.where(fj > 0, j0 + 1, j0)
    inb = (i0 >= 0) & (j0 >= 0) & (i1 < h) & (j1 < w)
    return i0, i1, j0, j1, fi, fj, inb


def _sample_bilinear(values, ok, src_i, src_j):
    """Bilinear lookup of ``values`` (h x w x k) at fractional cell indices."""
    h, w = ok.shape
    src_i = np.where(np.isfinite(src_i), src_i, -1.0)
    src_j = np.where(np.isfinite(src_j), src_j, -1.0)
    i0, i1, j0, j1, fi, fj, inb = _bilinear_setup(h, w, src_i, src_j)
    i0c, i1c = np.clip(i0, 0, h - 1), np.clip(i1, 0, h - 1)
    j0c, j1c = np.clip(j0, 0, w - 1), np.clip(j1, 0, w - 1)
    good = inb & ok[i0c, j0c] & ok[i0c, j1c] & ok[i1c, j0c] & ok[i1c, j1c]
    v = np.where(ok[..., None], values, 0.0)
    wi, wj = fi[..., None], fj[..., None]
    # nested lerps reproduce a constant field exactly
    top = v[i0c, j0c] + wj * (v[i0c, j1c] - v[i0c, j0c])
    bottom = v[i1c, j0c] + wj * (v[i1c, j1c] - v[i1c, j0c])
    out = top + wi * (bottom - top)
    return out, good


def _source_positions(flow: FlowField):
    h, w = flow.shape
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cells = flow.in_cells()
    return ii - cells[..., 1], jj - cells[..., 0]


def warp_state(prev_posterior: CoordStateMap, flow: FlowField) -> CoordStateMap:
    """Resample the previous state at ``p - flow(p)``; variance, not log-variance,
    is interpolated."""
    if prev_posterior.shape != flow.shape or prev_posterior.stride != flow.stride:
        raise ShapeMismatch(
            f"state {prev_posterior.shape}/stride {prev_posterior.stride} vs flow {flow.shape}/stride {flow.stride}"
        )
    src_i, src_j = _source_positions(flow)
    values = np.concatenate([prev_posterior.coords, prev_posterior.variance[..., None]], axis=-1)
    out, good = _sample_bilinear(values, prev_posterior.valid, src_i, src_j)
    good &= flow.valid
    return CoordStateMap.from_variance(out[..., :3], out[..., 3], good, prev_posterior.stride)


@dataclass(frozen=True)
class ProcessNoiseConfig:
    base_w2: float = 4e-4
    flow_gain: float = 0.0
    occlusion_penalty: float = 0.04
    fb_threshold: float = 3.0

    def __post_init__(self):
        for name in ("base_w2", "flow_gain", "occlusion_penalty", "fb_threshold"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def forward_backward_residual(flow: FlowField, fb_flow: FlowField) -> np.ndarray:
    """``|flow(p) + fb_flow(p - flow(p))|`` in pixels; inf where undefined."""
    src_i, src_j = _source_positions(flow)
    back, good = _sample_bilinear(fb_flow.offsets, fb_flow.valid, src_i, src_j)
    res = np.linalg.norm(np.nan_to_num(flow.offsets) + back, axis=-1)
    return np.where(good & flow.valid, res, np.inf)


def process_noise(flow: FlowField, cfg: ProcessNoiseConfig, fb_flow: FlowField | None = None) -> np.ndarray:
    mag2 = np.sum(np.nan_to_num(flow.offsets) ** 2, axis=-1)
    w2 = cfg.base_w2 + cfg.flow_gain * mag2
    if fb_flow is not None:
        occluded = forward_backward_residual(flow, fb_flow) > cfg.fb_threshold
        w2 = w2 + cfg.occlusion_penalty * occluded
    return w2


def assemble_prior(
    warped: CoordStateMap,
    flow: FlowField,
    cfg: ProcessNoiseConfig,
    fb_flow: FlowField | None = None,
) -> CoordStateMap:
    """Prior variance ``r^2 = warped variance + w^2`` with per-pixel process noise."""
    if warped.shape != flow.shape or (fb_flow is not None and fb_flow.shape != flow.shape):
        raise ShapeMismatch("warped state and flow fields must share a grid")
    r2 = warped.variance + process_noise(flow, cfg, fb_flow)
    return CoordStateMap.from_variance(warped.coords, r2, warped.valid, warped.stride)


def prior_loss(prior: CoordStateMap, gt: CoordStateMap):
    return gaussian_nll(prior, gt)


def prior_loss_grad(prior: CoordStateMap, gt: CoordStateMap):
    return gaussian_nll_grad(prior, gt)


# --- debug emitters ----------------------------------------------------------


def write_flow_debug(flow: FlowField, stem, max_magnitude: float | None = None) -> None:
    """``<stem>.flow`` binary plus ``<stem>.ppm`` false-color rendering."""
    stem = Path(stem)
    io.write_flow(stem.with_suffix(".flow"), flow)
    io.write_ppm(stem.with_suffix(".ppm"), io.flow_to_rgb(flow, max_magnitude))


def write_cost_slices(vol: CostVolume, cells, out_dir) -> list:
    """One PGM per requested cell showing its window of costs (dark = cheap)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, j in cells:
        c = np.where(vol.valid[i, j], vol.costs[i, j], np.nan)
        top = np.nanmax(c) if np.isfinite(c).any() else 1.0
        img = np.nan_to_num(c / max(top, 1e-12), nan=1.0)
        p = out / f"cost_{i:03d}_{j:03d}.pgm"
        io.write_pgm(p, img)
        paths.append(p)
    return paths
