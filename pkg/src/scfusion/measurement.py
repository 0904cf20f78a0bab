"""Synthetic scene-coordinate measurements and the Gaussian likelihood loss.

The oracle stands in for a learned per-pixel coordinate regressor: it perturbs
ground truth with isotropic Gaussian noise (inflated at depth discontinuities
and on blurred frames), injects uniform-ball outliers, and reports a
log-variance that is either honest or deliberately miscalibrated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMap, NonFiniteLoss, ShapeMismatch
from .geometry import CoordStateMap

HONEST = "honest"
MISREPORTED = "misreported"


@dataclass(frozen=True)
class MeasurementOracleConfig:
    inlier_sigma: float = 0.02
    outlier_ratio: float = 0.02
    outlier_spread: float = 0.5
    boundary_sigma_boost: float = 2.0
    reported_sigma_mode: str = HONEST
    misreport_factor: float = 1.0
    # degradation response on frames tagged as blurred
    blur_sigma_scale: float = 2.0
    blur_outlier_ratio: float = 0.2
    boundary_threshold: float = 0.05

    def __post_init__(self):
        if not self.inlier_sigma > 0:
            raise ValueError("inlier_sigma must be positive")
        for name in ("outlier_ratio", "blur_outlier_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.boundary_sigma_boost < 1:
            raise ValueError("boundary_sigma_boost must be >= 1")
        if self.reported_sigma_mode not in (HONEST, MISREPORTED):
            raise ValueError(f"unknown reported_sigma_mode {self.reported_sigma_mode!r}")
        if not self.misreport_factor > 0:
            raise ValueError("misreport_factor must be positive")

    @classmethod
    def misreported(cls, factor: float, **kw) -> MeasurementOracleConfig:
        return cls(reported_sigma_mode=MISREPORTED, misreport_factor=factor, **kw)


def boundary_mask(gt: CoordStateMap, threshold: float = 0.05) -> np.ndarray:
    """Pixels sitting on a depth discontinuity or surface crease.

    A pixel is flagged when the second difference of the coordinates along a
    row or column, taken through it, exceeds ``threshold`` meters.  Planar
    neighborhoods give a second difference near zero regardless of the cell
    footprint, so the test is resolution independent.
    """
    c = np.where(gt.valid[..., None], gt.coords, np.nan)
    out = np.zeros(gt.shape, bool)
    with np.errstate(invalid="ignore"):
        dx = np.linalg.norm(c[:, 2:] - 2 * c[:, 1:-1] + c[:, :-2], axis=-1)
        dy = np.linalg.norm(c[2:] - 2 * c[1:-1] + c[:-2], axis=-1)
        out[:, 1:-1] |= dx > threshold
        out[1:-1] |= dy > threshold
    return out & gt.valid


def _uniform_ball(direction_normals, radius_uniform, spread):
    d = direction_normals / np.linalg.norm(direction_normals, axis=-1, keepdims=True)
    return d * (spread * np.cbrt(radius_uniform))[..., None]


def synthesize_measurement(
    gt: CoordStateMap,
    cfg: MeasurementOracleConfig,
    seed: int = 0,
    blurred: bool = False,
) -> CoordStateMap:
    """Noisy measurement of ``gt`` with per-pixel reported log-variance.

    Random draws are taken for every grid position in a fixed order from a
    counter-based generator keyed by ``seed``, so each pixel's noise depends
    only on the seed and its position.
    """
    if not gt.valid.any():
        raise EmptyMap("ground truth has no valid pixels")
    h, w = gt.shape
    rng = np.random.Generator(np.random.Philox(key=int(seed) % 2**64))
    gauss = rng.standard_normal((h, w, 3))
    pick = rng.random((h, w))
    ball_dir = rng.standard_normal((h, w, 3))
    ball_r = rng.random((h, w))

    sigma = np.full((h, w), cfg.inlier_sigma)
    if cfg.boundary_sigma_boost != 1.0:
        sigma[boundary_mask(gt, cfg.boundary_threshold)] *= cfg.boundary_sigma_boost
    outlier_ratio = cfg.outlier_ratio
    if blurred:
        sigma *= cfg.blur_sigma_scale
        outlier_ratio = 1.0 - (1.0 - outlier_ratio) * (1.0 - cfg.blur_outlier_ratio)

    gt_c = np.nan_to_num(gt.coords)
    outlier = pick < outlier_ratio
    noise = np.where(outlier[..., None], _uniform_ball(ball_dir, ball_r, cfg.outlier_spread), gauss * sigma[..., None])
    coords = gt_c + noise
    reported = sigma if cfg.reported_sigma_mode == HONEST else cfg.misreport_factor * sigma
    return CoordStateMap(coords, np.log(reported**2), gt.valid, gt.stride)


# ---------------------------------------------------------------------------
# Gaussian negative log-likelihood, shared by the likelihood, prior and
# posterior losses
# ---------------------------------------------------------------------------


def _joint(pred: CoordStateMap, gt: CoordStateMap):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    m = pred.valid & gt.valid
    r = np.where(m[..., None], pred.coords - gt.coords, 0.0)
    s = np.where(m, pred.log_variance, 0.0)
    return m, r, s


def gaussian_nll(pred: CoordStateMap, gt: CoordStateMap):
    """Sum over jointly valid pixels of ``3 log v + |pred - gt|^2 / (2 v^2)``.

    ``v^2`` is the predicted isotropic variance.  Returns ``(total, per_pixel)``
    with zeros at pixels excluded from the sum.
    """
    m, r, s = _joint(pred, gt)
    with np.errstate(over="ignore", invalid="ignore"):
        per = np.where(m, 1.5 * s + 0.5 * np.sum(r * r, axis=-1) * np.exp(-s), 0.0)
    if not np.isfinite(per).all():
        raise NonFiniteLoss("loss is not finite at some valid pixel")
    return float(per.sum()), per


def gaussian_nll_grad(pred: CoordStateMap, gt: CoordStateMap):
    """Gradients of :func:`gaussian_nll` w.r.t. coordinates and log-variance."""
    m, r, s = _joint(pred, gt)
    inv_var = np.where(m, np.exp(-s), 0.0)
    g_coords = r * inv_var[..., None]
    g_logvar = np.where(m, 1.5 - 0.5 * np.sum(r * r, axis=-1) * inv_var, 0.0)
    if not (np.isfinite(g_coords).all() and np.isfinite(g_logvar).all()):
        raise NonFiniteLoss("gradient is not finite at some valid pixel")
    return g_coords, g_logvar


def likelihood_loss(z: CoordStateMap, gt: CoordStateMap):
    return gaussian_nll(z, gt)


def likelihood_loss_grad(z: CoordStateMap, gt: CoordStateMap):
    return gaussian_nll_grad(z, gt)
