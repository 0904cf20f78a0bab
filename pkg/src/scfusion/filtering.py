"""Per-pixel Kalman fusion of a prior and a measurement, NIS gating, the
posterior and combined losses, and two simple temporal-aggregation baselines.

All maps carry an isotropic per-pixel covariance ``variance * I3``, so every
update decouples into independent scalar-gain updates of a 3-vector.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadProbability, NonFiniteLoss, ShapeMismatch
from .geometry import CoordStateMap
from .measurement import gaussian_nll, gaussian_nll_grad

DEFAULT_NIS_ALPHA = 0.05


# ---------------------------------------------------------------------------
# chi-square quantiles
# ---------------------------------------------------------------------------


def regularized_lower_gamma(a: float, x: float) -> float:
    """P(a, x) = gamma(a, x) / Gamma(a).

    Series expansion below ``x < a + 1``, Lentz continued fraction for the
    upper tail otherwise; both converge to double precision.
    """
    if x <= 0:
        return 0.0
    if not math.isfinite(x):
        return 1.0
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1:
        term = total = 1.0 / a
        n = a
        for _ in range(1000):
            n += 1
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return total * math.exp(log_prefix)
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < 1e-17:
            break
    return 1.0 - math.exp(log_prefix) * h


def chi2_cdf(x: float, dof: int = 3) -> float:
    return regularized_lower_gamma(dof / 2.0, x / 2.0)


def chi2_quantile(dof: int, p: float, tol: float = 1e-10) -> float:
    """Inverse chi-square CDF by bisection to relative tolerance ``tol``."""
    if not (0.0 < p < 1.0):
        raise BadProbability(f"probability must lie in (0, 1), got {p}")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        lo, hi = hi, 2 * hi
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Kalman update
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FusionDiagnostics:
    innovation: np.ndarray  # h x w x 3, NaN where not fused
    kalman_gain: np.ndarray  # h x w, NaN where not fused
    nis: np.ndarray  # h x w, NaN where not fused
    nis_rejected: np.ndarray  # h x w bool

    @property
    def fused(self) -> np.ndarray:
        """Pixels where both prior and measurement were available."""
        return np.isfinite(self.nis)

    @property
    def rejection_rate(self) -> float:
        n = int(self.fused.sum())
        return float(self.nis_rejected.sum()) / n if n else 0.0


def kalman_update(
    prior: CoordStateMap,
    meas: CoordStateMap,
    nis_alpha: float | None = DEFAULT_NIS_ALPHA,
    reset_rejected: bool = True,
) -> tuple[CoordStateMap, FusionDiagnostics]:
    """Fuse ``prior`` with ``meas`` pixel-wise; ``nis_alpha=None`` disables gating.

    Pixels whose NIS exceeds the chi-square(3) critical value drop the prior
    and take the measurement alone.  With ``reset_rejected=False`` the test
    is only recorded in the diagnostics and every pixel is fused.  Pixels
    valid on only one side pass through unchanged.
    """
    if prior.shape != meas.shape:
        raise ShapeMismatch(f"prior {prior.shape} vs measurement {meas.shape}")
    if nis_alpha is not None and not (0.0 < nis_alpha < 1.0):
        raise BadProbability(f"nis_alpha must lie in (0, 1), got {nis_alpha}")
    both = prior.valid & meas.valid
    r2 = np.where(both, prior.variance, 1.0)
    v2 = np.where(both, meas.variance, 1.0)
    prior_mean = np.where(both[..., None], prior.coords, 0.0)
    z = np.where(both[..., None], meas.coords, 0.0)

    e = z - prior_mean
    s = r2 + v2
    k = r2 / s
    nis = np.sum(e * e, axis=-1) / s
    fused_mean = prior_mean + k[..., None] * e
    # r^2 (1 - k) written without the cancellation in 1 - k
    fused_var = r2 * v2 / s

    rejected = np.zeros(prior.shape, bool)
    if nis_alpha is not None:
        rejected = both & (nis > chi2_quantile(3, 1.0 - nis_alpha))

    use_meas = meas.valid & ~prior.valid
    if reset_rejected:
        use_meas = use_meas | rejected
    use_prior = prior.valid & ~meas.valid
    coords = np.where(use_meas[..., None], meas.coords, np.where(use_prior[..., None], prior.coords, fused_mean))
    logvar = np.where(use_meas, meas.log_variance, np.where(use_prior, prior.log_variance, np.log(fused_var)))
    valid = prior.valid | meas.valid
    posterior = CoordStateMap(coords, logvar, valid, prior.stride)

    nan = np.nan
    diag = FusionDiagnostics(
        innovation=np.where(both[..., None], e, nan),
        kalman_gain=np.where(both, k, nan),
        nis=np.where(both, nis, nan),
        nis_rejected=rejected,
    )
    return posterior, diag


def write_diagnostics_csv(path, diag: FusionDiagnostics) -> int:
    """One row per fused pixel: flat index, NIS, gain, rejection flag."""
    idx = np.flatnonzero(diag.fused)
    nis = diag.nis.ravel()[idx]
    gain = diag.kalman_gain.ravel()[idx]
    rej = diag.nis_rejected.ravel()[idx]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pixel", "nis", "gain", "rejected"])
        for row in zip(idx, nis, gain, rej):
            w.writerow([int(row[0]), f"{row[1]:.9g}", f"{row[2]:.9g}", int(row[3])])
    return len(idx)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def posterior_loss(posterior: CoordStateMap, gt: CoordStateMap):
    return gaussian_nll(posterior, gt)


def posterior_loss_grad(posterior: CoordStateMap, gt: CoordStateMap):
    return gaussian_nll_grad(posterior, gt)


@dataclass(frozen=True)
class LossWeights:
    likelihood: float = 0.2
    prior: float = 0.2
    posterior: float = 0.6

    def __post_init__(self):
        weights = (self.likelihood, self.prior, self.posterior)
        if min(weights) < 0:
            raise ValueError("loss weights must be nonnegative")
        if max(weights) <= 0:
            raise ValueError("at least one loss weight must be positive")


def full_loss(l_like: float, l_prior: float, l_post: float, w: LossWeights = LossWeights()) -> float:
    parts = (l_like, l_prior, l_post)
    if not all(math.isfinite(x) for x in parts):
        raise NonFiniteLoss(f"non-finite loss component in {parts}")
    return w.likelihood * l_like + w.prior * l_prior + w.posterior * l_post


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

TPOOLER = "tpooler"
SWEIGHT = "sweight"


def fuse_baseline(
    warped_neighbors: list,
    current_meas: CoordStateMap,
    mode: str = TPOOLER,
    sim_temp: float = 1e-3,
) -> CoordStateMap:
    """Aggregate warped neighbor states with the current measurement.

    ``tpooler`` takes the plain mean of the candidate means (variance: sum of
    variances over count squared).  ``sweight`` weights each candidate by
    ``softmax(-|mean - measurement|^2 / sim_temp)`` and combines means and
    variances with those weights (variances with squared weights).  Only
    candidates valid at a pixel take part; the measurement always does where
    it is valid.
    """
    if not warped_neighbors:
        raise ValueError("need at least one warped neighbor")
    if mode not in (TPOOLER, SWEIGHT):
        raise ValueError(f"unknown baseline mode {mode!r}")
    for n in warped_neighbors:
        if n.shape != current_meas.shape:
            raise ShapeMismatch(f"neighbor {n.shape} vs measurement {current_meas.shape}")
    cands = list(warped_neighbors) + [current_meas]
    ok = np.stack([c.valid for c in cands]) & current_meas.valid
    means = np.stack([np.where(c.valid[..., None], c.coords, 0.0) for c in cands])
    var = np.stack([np.where(c.valid, c.variance, 0.0) for c in cands])

    if mode == TPOOLER:
        w = ok.astype(np.float64)
    else:
        z = np.where(current_meas.valid[..., None], current_meas.coords, 0.0)
        logits = -np.sum((means - z) ** 2, axis=-1) / sim_temp
        logits = np.where(ok, logits, -np.inf)
        top = np.max(logits, axis=0)
        top = np.where(np.isfinite(top), top, 0.0)
        w = np.where(ok, np.exp(logits - top), 0.0)
    total = w.sum(axis=0)
    w = w / np.where(total > 0, total, 1.0)
    coords = np.einsum("kij,kijc->ijc", w, means)
    variance = np.sum(w * w * var, axis=0)
    valid = current_meas.valid
    return CoordStateMap.from_variance(coords, np.where(valid, variance, 1.0), valid, current_meas.stride)
