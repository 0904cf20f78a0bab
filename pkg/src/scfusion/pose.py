"""Camera pose from a coordinate map: uncertainty gating, RANSAC over a
three-point minimal solver, Levenberg-Marquardt refinement, and the usual
relocalization error metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    Diverged,
    EmptyInput,
    NoConsensus,
    TooFewCorrespondences,
)
from .geometry import (
    CameraIntrinsics,
    CoordStateMap,
    Pose,
    axis_angle_to_quat,
    cell_centers,
    quat_multiply,
    rotation_error_deg,
    skew,
    translation_error,
)

COLLINEAR_AREA = 1e-8  # m^2
BEARING_EPS = 1e-12


@dataclass(frozen=True)
class Correspondence:
    pixel: tuple  # full-resolution (u, v)
    point: tuple  # world meters
    weight: float = 1.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.pixel)) and np.all(np.isfinite(self.point)) and math.isfinite(self.weight)):
            raise ValueError("correspondence must be finite")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")


def _stack(corrs):
    pix = np.array([c.pixel for c in corrs], dtype=np.float64).reshape(-1, 2)
    pts = np.array([c.point for c in corrs], dtype=np.float64).reshape(-1, 3)
    w = np.array([c.weight for c in corrs], dtype=np.float64)
    return pix, pts, w


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 256
    inlier_threshold_px: float = 10.0
    confidence: float = 0.99
    min_inliers: int = 20
    lambda_m: float = 0.05

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_threshold_px > 0:
            raise ValueError("inlier_threshold_px must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")
        if not self.lambda_m >= 0:
            raise ValueError("lambda_m must be nonnegative")


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    pose: Pose
    inlier_mask: np.ndarray
    iterations_used: int
    mean_reproj_err_px: float

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def gather_correspondences(posterior: CoordStateMap, K: CameraIntrinsics, lambda_m: float) -> list:
    """Cells whose standard deviation is at most ``lambda_m``, at full-res centers."""
    h, w = posterior.shape
    u, v = cell_centers(h, w, posterior.stride)
    var = posterior.variance
    with np.errstate(invalid="ignore"):
        keep = posterior.valid & (np.sqrt(var) <= lambda_m)
    if keep.sum() < 4:
        raise TooFewCorrespondences(f"{int(keep.sum())} cells pass the {lambda_m} m gate")
    return [
        Correspondence((float(u[i, j]), float(v[i, j])), tuple(posterior.coords[i, j]), float(1.0 / var[i, j]))
        for i, j in zip(*np.nonzero(keep))
    ]


# ---------------------------------------------------------------------------
# projection helpers
# ---------------------------------------------------------------------------


def _project(R, t, pts, K: CameraIntrinsics):
    Xc = pts @ R.T + t
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * Xc[:, 0] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy], axis=1)
    return uv, z


def reprojection_errors(pose: Pose, pix, pts, K: CameraIntrinsics) -> np.ndarray:
    """Pixel distance per correspondence; inf for points behind the camera."""
    uv, z = _project(pose.R, pose.translation, pts, K)
    err = np.linalg.norm(uv - pix, axis=1)
    return np.where(z > 1e-9, err, np.inf)


def _kabsch(P, X):
    """Rigid (R, t) minimizing sum |R P_i + t - X_i|^2."""
    pc, xc = P.mean(axis=0), X.mean(axis=0)
    H = (P - pc).T @ (X - xc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, xc - R @ pc


# ---------------------------------------------------------------------------
# minimal solver
# ---------------------------------------------------------------------------


def p3p_minimal(corrs, K: CameraIntrinsics) -> list:
    """All real poses consistent with exactly three correspondences.

    Unknown ray lengths ``s_k`` satisfy the three law-of-cosines constraints.
    Writing ``s2 = u s1`` and ``s3 = v s1`` and subtracting two of them gives
    ``u`` as a rational function of ``v``; substituting back leaves a quartic
    in ``v`` solved through its companion matrix.  Each root is polished by
    Newton iterations on the original constraints and aligned to the world
    points by an SVD rigid fit.
    """
    pix, pts, _ = _stack(corrs)
    if len(pts) != 3:
        raise ValueError("p3p_minimal needs exactly three correspondences")
    P1, P2, P3 = pts
    if 0.5 * np.linalg.norm(np.cross(P2 - P1, P3 - P1)) < COLLINEAR_AREA:
        raise DegenerateConfiguration("world points are (nearly) collinear")
    f = K.bearings(pix[:, 0], pix[:, 1])
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        if np.linalg.norm(np.cross(f[i], f[j])) < BEARING_EPS:
            raise DegenerateConfiguration("coincident bearing vectors")

    ca, cb, cg = f[1] @ f[2], f[0] @ f[2], f[0] @ f[1]
    a2 = np.sum((P2 - P3) ** 2)
    b2 = np.sum((P1 - P3) ** 2)
    c2 = np.sum((P1 - P2) ** 2)

    P = np.polynomial.polynomial
    Q = np.array([1.0, -2 * cb, 1.0])  # 1 - 2 cb v + v^2
    N = b2 * np.array([1.0, 0.0, -1.0]) + (a2 - c2) * Q  # numerator of u
    D = 2 * b2 * np.array([cg, -ca])  # denominator of u
    quartic = P.polysub(
        P.polyadd(b2 * P.polymul(N, N), -2 * b2 * cg * P.polymul(N, D)),
        P.polymul(P.polysub(c2 * Q, [b2]), P.polymul(D, D)),
    )
    quartic = np.trim_zeros(quartic, "b")
    if len(quartic) < 2:
        return []
    roots = np.roots(quartic[::-1])

    out = []
    for r in roots:
        if abs(r.imag) > 1e-6 * (1 + abs(r.real)):
            continue
        v = r.real
        d = P.polyval(v, D)
        if abs(d) < 1e-14 or v <= 0:
            continue
        u = P.polyval(v, N) / d
        q = P.polyval(v, Q)
        if u <= 0 or q <= 0:
            continue
        s1 = math.sqrt(b2 / q)
        s = _polish_lengths(np.array([s1, u * s1, v * s1]), ca, cb, cg, a2, b2, c2)
        if s is None:
            continue
        R, t = _kabsch(pts, s[:, None] * f)
        pose = Pose.from_matrix(R, t)
        if any(rotation_error_deg(pose, o) < 1e-7 and np.linalg.norm(pose.translation - o.translation) < 1e-9 for o in out):
            continue
        out.append(pose)
    return out


def _polish_lengths(s, ca, cb, cg, a2, b2, c2, iters: int = 5):
    def resid(s):
        s1, s2, s3 = s
        return np.array(
            [
                s1 * s1 + s2 * s2 - 2 * s1 * s2 * cg - c2,
                s1 * s1 + s3 * s3 - 2 * s1 * s3 * cb - b2,
                s2 * s2 + s3 * s3 - 2 * s2 * s3 * ca - a2,
            ]
        )

    for _ in range(iters):
        s1, s2, s3 = s
        J = np.array(
            [
                [2 * s1 - 2 * s2 * cg, 2 * s2 - 2 * s1 * cg, 0.0],
                [2 * s1 - 2 * s3 * cb, 0.0, 2 * s3 - 2 * s1 * cb],
                [0.0, 2 * s2 - 2 * s3 * ca, 2 * s3 - 2 * s2 * ca],
            ]
        )
        r = resid(s)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
        s_new = s - step
        if not np.all(np.isfinite(s_new)) or np.linalg.norm(resid(s_new)) >= np.linalg.norm(r):
            break
        s = s_new
    return s if np.all(s > 0) else None


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------


def reprojection_residuals(pose: Pose, pix, pts, K: CameraIntrinsics, weights=None) -> np.ndarray:
    """Stacked ``sqrt(w) * (projection - pixel)``, shape (2n,)."""
    uv, _ = _project(pose.R, pose.translation, pts, K)
    sw = np.ones(len(pts)) if weights is None else np.sqrt(np.asarray(weights, dtype=np.float64))
    return ((uv - pix) * sw[:, None]).ravel()


def reprojection_jacobian(pose: Pose, pts, K: CameraIntrinsics, weights=None) -> np.ndarray:
    """Jacobian of :func:`reprojection_residuals` w.r.t. ``(delta, dt)``.

    The rotation increment acts on the left, ``R <- exp([delta]x) R``.
    """
    RX = pts @ pose.R.T
    Xc = RX + pose.translation
    x, y, z = Xc.T
    n = len(pts)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = K.fx / z
    dproj[:, 0, 2] = -K.fx * x / z**2
    dproj[:, 1, 1] = K.fy / z
    dproj[:, 1, 2] = -K.fy * y / z**2
    dX = np.zeros((n, 3, 6))
    dX[:, :, :3] = -np.stack([skew(p) for p in RX])
    dX[:, :, 3:] = np.eye(3)
    J = dproj @ dX
    if weights is not None:
        J = J * np.sqrt(np.asarray(weights, dtype=np.float64))[:, None, None]
    return J.reshape(2 * n, 6)


def apply_increment(pose: Pose, step) -> Pose:
    step = np.asarray(step, dtype=np.float64)
    q = quat_multiply(axis_angle_to_quat(step[:3]), pose.rotation)
    return Pose(q, pose.translation + step[3:])


@dataclass
class RefineTrace:
    costs: list = field(default_factory=list)  # cost after each accepted step
    iterations: int = 0
    reason: str = ""


def refine_pose(
    initial: Pose,
    inliers,
    K: CameraIntrinsics,
    weights=None,
    max_iterations: int = 100,
    trace: RefineTrace | None = None,
) -> Pose:
    """Levenberg-Marquardt on the weighted squared reprojection error.

    ``inliers`` is a list of :class:`Correspondence` or a ``(pixels, points)``
    pair.  Stops on gradient norm < 1e-10, step norm < 1e-12 or the iteration
    cap; only cost-decreasing steps are accepted.
    """
    if isinstance(inliers, tuple):
        pix, pts = (np.asarray(a, dtype=np.float64) for a in inliers)
    else:
        pix, pts, w_c = _stack(inliers)
        if weights is None:
            weights = w_c
    if len(pts) < 3:
        raise TooFewCorrespondences("refinement needs at least three points")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / weights.mean()  # scale-free; improves conditioning
    trace = trace if trace is not None else RefineTrace()

    def cost_of(p):
        r = reprojection_residuals(p, pix, pts, K, weights)
        _, z = _project(p.R, p.translation, pts, K)
        return float(r @ r) if np.all(z > 1e-9) else math.inf

    pose = initial
    cost = cost_of(pose)
    if not math.isfinite(cost):
        raise Diverged("initial reprojection cost is not finite")
    trace.costs.append(cost)
    mu = 1e-3
    for it in range(max_iterations):
        trace.iterations = it + 1
        r = reprojection_residuals(pose, pix, pts, K, weights)
        J = reprojection_jacobian(pose, pts, K, weights)
        g = J.T @ r
        if np.linalg.norm(g) < 1e-10:
            trace.reason = "gradient"
            break
        H = J.T @ J
        while True:
            A = H + mu * np.diag(np.diag(H) + 1e-12)
            step = -np.linalg.solve(A, g)
            if np.linalg.norm(step) < 1e-12:
                trace.reason = "step"
                return pose
            cand = apply_increment(pose, step)
            c_new = cost_of(cand)
            if c_new < cost:
                pose, cost = cand, c_new
                trace.costs.append(cost)
                mu = max(mu / 10, 1e-12)
                break
            mu *= 10
            if not math.isfinite(mu):
                raise Diverged("damping overflowed")
    else:
        trace.reason = "iterations"
    return pose


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------


REFIT_ROUNDS = 5
TRIM_FACTOR = 3.0


def _truncated_cost(pose, pix, pts, K, thr):
    err = reprojection_errors(pose, pix, pts, K)
    return float(np.sum(np.minimum(err, thr) ** 2))


def _score(pose, pix, pts, K, thr):
    err = reprojection_errors(pose, pix, pts, K)
    mask = err < thr
    n = int(mask.sum())
    mean_err = float(err[mask].mean()) if n else math.inf
    return mask, n, mean_err


def ransac_pnp(corrs, K: CameraIntrinsics, cfg: RansacConfig = RansacConfig(), seed: int = 0) -> PoseEstimate:
    """Hypothesize-and-verify over three-point samples, then refine on inliers.

    Models rank by inlier count, then by lower mean inlier error; among exact
    ties the earliest iteration wins.  Sampling stops early once the usual
    ``1 - (1 - w^3)^k >= confidence`` bound holds for the best inlier ratio.
    """
    pix, pts, wts = _stack(corrs)
    n = len(pts)
    if n < 4:
        raise TooFewCorrespondences(f"{n} correspondences, need at least 4")
    rng = np.random.Generator(np.random.Philox(key=int(seed) % 2**64))
    thr = cfg.inlier_threshold_px
    best = None  # (n_inliers, mean_err, pose, mask)
    used = 0
    for it in range(cfg.max_iterations):
        used = it + 1
        idx = rng.choice(n, 3, replace=False)
        try:
            cands = p3p_minimal([corrs[i] for i in idx], K)
        except DegenerateConfiguration:
            continue
        for pose in cands:
            mask, cnt, err = _score(pose, pix, pts, K, thr)
            if best is None or cnt > best[0] or (cnt == best[0] and err < best[1]):
                best = (cnt, err, pose, mask)
        if best is not None and best[0] > 0:
            w = best[0] / n
            if w >= 1.0:
                break
            needed = math.log(1 - cfg.confidence) / math.log(1 - w**3) if w**3 > 1e-300 else math.inf
            if used >= needed:
                break
    if best is None or best[0] < cfg.min_inliers:
        got = 0 if best is None else best[0]
        raise NoConsensus(f"best model has {got} inliers, need {cfg.min_inliers}")

    cnt, err, pose, mask = best
    # refit: alternate refinement on the current inliers and re-selection,
    # keeping a refit only when it lowers the truncated reprojection cost
    cost = _truncated_cost(pose, pix, pts, K, thr)
    for _ in range(REFIT_ROUNDS):
        # fit on a trimmed set so that stray points just inside the gate
        # cannot bias the solution along weakly constrained directions
        e = reprojection_errors(pose, pix, pts, K)
        fit = mask & (e <= min(thr, TRIM_FACTOR * float(np.median(e[mask]))))
        if fit.sum() < 3:
            fit = mask
        try:
            refined = refine_pose(pose, (pix[fit], pts[fit]), K, wts[fit])
        except (Diverged, TooFewCorrespondences, np.linalg.LinAlgError):
            break
        r_cost = _truncated_cost(refined, pix, pts, K, thr)
        if not r_cost < cost:
            break
        r_mask, _, r_err = _score(refined, pix, pts, K, thr)
        if r_mask.sum() < 3:
            break
        pose, mask, err, cost = refined, r_mask, r_err, r_cost
    return PoseEstimate(pose, mask, used, err)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MetricsReport:
    translation_errors: np.ndarray  # meters, inf for failed frames
    rotation_errors: np.ndarray  # degrees, inf for failed frames
    median_translation: float
    median_rotation: float
    accuracy_5cm_5deg: float
    coord_error_mean: float | None = None
    coord_error_std: float | None = None

    def to_dict(self) -> dict:
        return {
            "frames": int(len(self.translation_errors)),
            "median_translation_m": self.median_translation,
            "median_rotation_deg": self.median_rotation,
            "accuracy_5cm_5deg": self.accuracy_5cm_5deg,
            "coord_error_mean_m": self.coord_error_mean,
            "coord_error_std_m": self.coord_error_std,
        }


def coordinate_errors(pred: CoordStateMap, gt: CoordStateMap) -> np.ndarray:
    """Euclidean errors over jointly valid pixels."""
    m = pred.valid & gt.valid
    return np.linalg.norm(pred.coords[m] - gt.coords[m], axis=-1)


def pose_metrics(estimates, maps=None) -> MetricsReport:
    """Median errors and 5cm-5deg accuracy over ``(estimate, gt_pose)`` pairs.

    An estimate of ``None`` (failed frame) counts as an infinite error.  When
    ``maps`` -- ``(predicted, gt)`` coordinate-map pairs -- are given, the
    mean and standard deviation of all per-pixel coordinate errors are added.
    """
    estimates = list(estimates)
    if not estimates:
        raise EmptyInput("no poses to evaluate")
    te, re = [], []
    for est, gt in estimates:
        if est is None:
            te.append(math.inf)
            re.append(math.inf)
            continue
        p = est.pose if isinstance(est, PoseEstimate) else est
        te.append(translation_error(p, gt))
        re.append(rotation_error_deg(p, gt))
    te, re = np.array(te), np.array(re)
    acc = float(np.mean((te < 0.05) & (re < 5.0)))
    cm = cs = None
    if maps:
        errs = np.concatenate([coordinate_errors(p, g) for p, g in maps])
        if len(errs):
            cm, cs = float(errs.mean()), float(errs.std())
    return MetricsReport(te, re, float(np.median(te)), float(np.median(re)), acc, cm, cs)
