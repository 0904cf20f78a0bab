"""The recursive per-frame loop and the named experiment suites.

Each frame: measure -> transition (flow, warp, process noise) -> fuse ->
gate -> solve the pose -> score against ground truth.  Reports are written
as CSV/JSON with fixed float formatting so that equal seeds give
byte-identical files; wall-clock timings go to a separate file.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, NoConsensus, TooFewCorrespondences, UnknownSuite
from .filtering import DEFAULT_NIS_ALPHA, LossWeights, full_loss, fuse_baseline, kalman_update, write_diagnostics_csv
from .geometry import CameraIntrinsics, CoordStateMap, FlowField, Pose
from .measurement import MeasurementOracleConfig, likelihood_loss, synthesize_measurement
from .pose import RansacConfig, coordinate_errors, gather_correspondences, pose_metrics, ransac_pnp
from .process import (
    ProcessNoiseConfig,
    assemble_prior,
    build_cost_volume,
    extract_features,
    flow_from_volume,
    forward_backward_residual,
    prior_loss,
    warp_state,
    write_flow_debug,
)
from .filtering import posterior_loss
from .simulator import (
    BLURRED,
    TRIMMED_RESTART,
    DegradationConfig,
    default_camera,
    generate_sequence,
    load_sequence,
    make_default_scene,
    make_trajectory,
    static_trajectory,
    translation_trajectory,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

FUSION_MODES = ("kalman", "tpooler", "sweight", "measurement_only")
TRAJECTORIES = ("default", "static", "translation")
FLOW_SOURCES = ("estimated", "ground_truth")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceConfig:
    scene_seed: int = 0
    dynamic: bool = True
    trajectory: str = "default"
    n_frames: int = 100
    fps: float = 30.0
    speed: float = 2.0
    amplitude: float = 1.0
    translation_step: tuple = (0.02, 0.0, 0.0)
    width: int = 256
    height: int = 192
    fov_deg: float = 65.0
    path: str | None = None  # load a saved sequence instead of simulating

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise ConfigError(f"unknown trajectory {self.trajectory!r}; expected one of {TRAJECTORIES}")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")

    def camera(self) -> CameraIntrinsics:
        return default_camera(self.width, self.height, self.fov_deg)

    def trajectory_model(self):
        if self.trajectory == "static":
            return static_trajectory(self.n_frames, self.fps)
        if self.trajectory == "translation":
            return translation_trajectory(self.n_frames, self.translation_step, self.fps)
        return make_trajectory(self.n_frames, self.fps, self.amplitude, self.speed)


@dataclass(frozen=True)
class PipelineConfig:
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    oracle: MeasurementOracleConfig = field(default_factory=MeasurementOracleConfig)
    process: ProcessNoiseConfig = field(default_factory=ProcessNoiseConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    stride: int = 8
    window_size: int = 5  # cells per side
    search_stride: int = 1  # pixels
    temperature: float = 0.05
    feature_support: int = 32  # pixels summarized by each cell descriptor
    nis_alpha: float | None = DEFAULT_NIS_ALPHA  # None disables gating
    nis_action: str = "reset"  # "monitor": flag failing pixels but fuse them anyway
    fusion_mode: str = "kalman"
    flow_source: str = "estimated"
    baseline_neighbors: int = 2
    sim_temp: float = 1e-3
    seed: int = 0
    output_dir: str | None = None
    dump_diagnostics: bool = False
    write_flow_images: bool = False

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion_mode {self.fusion_mode!r}; expected one of {FUSION_MODES}")
        if self.flow_source not in FLOW_SOURCES:
            raise ConfigError(f"unknown flow_source {self.flow_source!r}; expected one of {FLOW_SOURCES}")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ConfigError("window_size must be a positive odd number of cells")
        if self.stride < 1 or self.search_stride < 1 or self.stride % self.search_stride:
            raise ConfigError("search_stride must divide stride")
        if self.nis_alpha is not None and not 0 < self.nis_alpha < 1:
            raise ConfigError("nis_alpha must lie in (0, 1) or be omitted")
        if self.nis_action not in ("reset", "monitor"):
            raise ConfigError(f"nis_action must be 'reset' or 'monitor', got {self.nis_action!r}")
        if self.baseline_neighbors < 1:
            raise ConfigError("baseline_neighbors must be >= 1")
        if self.feature_support < self.stride or self.feature_support % self.stride:
            raise ConfigError("feature_support must be a positive multiple of stride")
        if not self.temperature > 0 or not self.sim_temp > 0:
            raise ConfigError("temperatures must be positive")

    def replace(self, **changes) -> PipelineConfig:
        return dataclasses.replace(self, **changes)

    # --- (de)serialization ------------------------------------------------

    _SECTIONS = {
        "sequence": SequenceConfig,
        "degradation": DegradationConfig,
        "oracle": MeasurementOracleConfig,
        "process": ProcessNoiseConfig,
        "loss_weights": LossWeights,
        "ransac": RansacConfig,
    }

    @classmethod
    def from_dict(cls, data: dict) -> PipelineConfig:
        data = dict(data)
        kwargs = {}
        try:
            for name, typ in cls._SECTIONS.items():
                if name in data:
                    section = dict(data.pop(name))
                    _check_keys(typ, section, name)
                    for k, v in section.items():
                        if isinstance(v, list):
                            section[k] = tuple(v)
                    kwargs[name] = typ(**section)
            _check_keys(cls, data, "top level")
            if data.get("nis_alpha", 0.05) in ("none", "off", False):
                data["nis_alpha"] = None
            kwargs.update(data)
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path) -> PipelineConfig:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return json.loads(json.dumps(out, default=list))


def _check_keys(typ, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(typ)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def sub_seed(seed: int, *stream: int) -> int:
    """Independent 63-bit seed for a (frame, purpose) stream."""
    return int(np.random.SeedSequence([int(seed) % 2**63, *stream]).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    "frame",
    "blurred",
    "trimmed_restart",
    "pose_ok",
    "translation_error_m",
    "rotation_error_deg",
    "n_correspondences",
    "n_inliers",
    "ransac_iterations",
    "coord_error_mean_m",
    "coord_error_std_m",
    "meas_error_mean_m",
    "nis_rejection_rate",
    "flow_error_median_px",
    "loss_likelihood",
    "loss_prior",
    "loss_posterior",
    "loss_full",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf"
    return f"{v:.9g}"


def rows_to_csv(rows, columns) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


@dataclass
class RunReport:
    rows: list  # one dict per processed frame
    mode: str
    config: dict
    posteriors: list = field(default_factory=list, repr=False)
    timings: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else float(r[name]) for r in self.rows])

    @property
    def translation_errors(self) -> np.ndarray:
        return self.column("translation_error_m")

    @property
    def rotation_errors(self) -> np.ndarray:
        return self.column("rotation_error_deg")

    def mean_coordinate_error(self, start: int = 0) -> float:
        """Pixel-weighted mean coordinate error over frames ``start`` onward."""
        m = self.column("coord_error_mean_m")[start:]
        n = self.column("_coord_count")[start:]
        return float(np.nansum(m * n) / np.nansum(n))

    def summary(self) -> dict:
        te, re = self.translation_errors, self.rotation_errors
        ok = self.column("pose_ok").astype(bool)
        rej = self.column("nis_rejection_rate")
        return {
            "mode": self.mode,
            "frames": len(self.rows),
            "failed_frames": int((~ok).sum()),
            "median_translation_m": float(np.median(te)),
            "median_rotation_deg": float(np.median(re)),
            "accuracy_5cm_5deg": float(np.mean((te < 0.05) & (re < 5.0))),
            "coord_error_mean_m": self.mean_coordinate_error(),
            "nis_rejection_rate_mean": float(np.nanmean(rej)) if np.isfinite(rej).any() else None,
            "pose_error_quantiles": pose_error_quantiles(te, re),
        }

    def to_csv(self) -> str:
        return rows_to_csv(self.rows, REPORT_COLUMNS)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv())
        (out / "summary.json").write_text(_json({"config": self.config, "summary": self.summary()}))
        (out / "timings.json").write_text(json.dumps(self.timings, indent=2))
        return out


def _json(obj) -> str:
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, float):
            if math.isnan(x):
                return None
            if math.isinf(x):
                return "inf"
            return float(f"{x:.9g}")
        return x

    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


def pose_error_quantiles(te, re) -> dict:
    """Empirical quantiles of pose errors (the points of an error CDF)."""
    te = np.asarray(te, dtype=np.float64)
    re = np.asarray(re, dtype=np.float64)
    return {
        "q": list(QUANTILES),
        "translation_m": [float(np.quantile(te, q)) for q in QUANTILES],
        "rotation_deg": [float(np.quantile(re, q)) for q in QUANTILES],
    }


# ---------------------------------------------------------------------------
# the recursive loop
# ---------------------------------------------------------------------------


def build_frames(cfg: PipelineConfig):
    sc = cfg.sequence
    if sc.path:
        frames, K = load_sequence(sc.path)
        if frames and frames[0].label_stride != cfg.stride:
            raise ConfigError(f"sequence labels have stride {frames[0].label_stride}, config says {cfg.stride}")
        return frames, K
    K = sc.camera()
    scene = make_default_scene(sc.scene_seed, dynamic=sc.dynamic)
    frames = generate_sequence(scene, sc.trajectory_model(), K, cfg.degradation, cfg.seed, cfg.stride)
    return frames, K


def _mean_loss(total_and_per, valid) -> float:
    total, _ = total_and_per
    n = int(valid.sum())
    return total / n if n else math.nan


class _FlowEstimator:
    """Caches per-frame features so every frame is described exactly once."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.prev = None

    def __call__(self, frame):
        cfg = self.cfg
        if cfg.flow_source == "ground_truth":
            return frame.gt_flow, None
        feats = extract_features(frame.image, cfg.stride, cfg.search_stride, cfg.feature_support)
        prev, self.prev = self.prev, feats
        if prev is None:
            return None, None
        fwd = flow_from_volume(build_cost_volume(prev, feats, cfg.window_size, cfg.search_stride, np.float32), cfg.temperature)
        bwd = flow_from_volume(build_cost_volume(feats, prev, cfg.window_size, cfg.search_stride, np.float32), cfg.temperature)
        return fwd, bwd

    def prime(self, frame):
        if self.cfg.flow_source == "estimated":
            self.prev = extract_features(frame.image, self.cfg.stride, self.cfg.search_stride, self.cfg.feature_support)


def run_sequence(cfg: PipelineConfig, frames=None, K: CameraIntrinsics | None = None) -> RunReport:
    """Run the filter over a sequence (simulated from ``cfg`` unless given)."""
    t_start = time.perf_counter()
    if frames is None:
        frames, K = build_frames(cfg)
    elif K is None:
        raise ConfigError("pre-rendered frames need their camera intrinsics")
    t_render = time.perf_counter() - t_start
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    mode = cfg.fusion_mode
    needs_flow = mode != "measurement_only"
    flow_est = _FlowEstimator(cfg)
    rows, posteriors = [], []
    posterior = None
    neighbors: list = []  # warped previous measurements for the baselines
    t_frames = []

    for t, fr in enumerate(frames):
        t0 = time.perf_counter()
        gt = fr.gt_coords
        blurred = BLURRED in fr.degradation_tags
        meas = synthesize_measurement(gt, cfg.oracle, sub_seed(cfg.seed, t, 1), blurred=blurred)
        prior = None
        flow = None
        rejection = None
        n_fused = 0
        diag = None

        if t == 0 or not needs_flow:
            posterior = meas
            if t == 0 and needs_flow:
                flow_est.prime(fr)
        else:
            flow, fb_flow = flow_est(fr)
            if mode == "kalman":
                warped = warp_state(posterior, flow)
                prior = assemble_prior(warped, flow, cfg.process, fb_flow)
                posterior, diag = kalman_update(prior, meas, cfg.nis_alpha, cfg.nis_action == "reset")
                rejection = diag.rejection_rate
                n_fused = int(diag.fused.sum())
            else:
                neighbors = [assemble_prior(warp_state(n, flow), flow, cfg.process, fb_flow) for n in neighbors]
                prior = neighbors[-1] if neighbors else None
                posterior = fuse_baseline(neighbors, meas, mode, cfg.sim_temp) if neighbors else meas
        if mode in ("tpooler", "sweight"):
            neighbors = (neighbors + [meas])[-cfg.baseline_neighbors :]

        # --- losses -------------------------------------------------------
        l_like = _mean_loss(likelihood_loss(meas, gt), meas.valid & gt.valid)
        l_post = _mean_loss(posterior_loss(posterior, gt), posterior.valid & gt.valid)
        l_prior = _mean_loss(prior_loss(prior, gt), prior.valid & gt.valid) if prior is not None else math.nan
        l_full = full_loss(l_like, l_prior, l_post, cfg.loss_weights) if prior is not None else math.nan

        # --- pose ---------------------------------------------------------
        row = {
            "frame": t,
            "blurred": blurred,
            "trimmed_restart": TRIMMED_RESTART in fr.degradation_tags,
            "nis_rejection_rate": rejection,
            "_n_fused": n_fused,
            "loss_likelihood": l_like,
            "loss_prior": l_prior,
            "loss_posterior": l_post,
            "loss_full": l_full,
        }
        try:
            corrs = gather_correspondences(posterior, K, cfg.ransac.lambda_m)
            row["n_correspondences"] = len(corrs)
            est = ransac_pnp(corrs, K, cfg.ransac, sub_seed(cfg.seed, t, 2))
        except (TooFewCorrespondences, NoConsensus):
            est = None
            row.setdefault("n_correspondences", 0)
        if est is not None:
            m = pose_metrics([(est, fr.gt_pose)])
            row.update(
                pose_ok=True,
                translation_error_m=m.translation_errors[0],
                rotation_error_deg=m.rotation_errors[0],
                n_inliers=est.n_inliers,
                ransac_iterations=est.iterations_used,
            )
        else:
            row.update(pose_ok=False, translation_error_m=math.inf, rotation_error_deg=math.inf, n_inliers=0)

        ce = coordinate_errors(posterior, gt)
        me = coordinate_errors(meas, gt)
        row.update(
            coord_error_mean_m=float(ce.mean()) if len(ce) else math.nan,
            coord_error_std_m=float(ce.std()) if len(ce) else math.nan,
            _coord_count=len(ce),
            meas_error_mean_m=float(me.mean()) if len(me) else math.nan,
        )
        if flow is not None:
            ok = flow.valid & fr.gt_flow.valid
            if ok.any():
                row["flow_error_median_px"] = float(
                    np.median(np.linalg.norm(flow.offsets[ok] - fr.gt_flow.offsets[ok], axis=-1))
                )
        rows.append(row)
        posteriors.append(posterior)

        if out_dir is not None:
            if cfg.dump_diagnostics and diag is not None:
                (out_dir / "diagnostics").mkdir(exist_ok=True)
                write_diagnostics_csv(out_dir / "diagnostics" / f"frame_{t:05d}.csv", diag)
            (out_dir / "posteriors").mkdir(exist_ok=True)
            io.write_coord_map(out_dir / "posteriors" / f"frame_{t:05d}.kfsc", posterior)
            if cfg.write_flow_images and flow is not None:
                (out_dir / "flow").mkdir(exist_ok=True)
                write_flow_debug(flow, out_dir / "flow" / f"frame_{t:05d}")
        t_frames.append(time.perf_counter() - t0)

    report = RunReport(
        rows,
        mode,
        {k: v for k, v in cfg.to_dict().items() if k != "output_dir"},
        posteriors,
        {"render_s": t_render, "frames_s": float(sum(t_frames)), "per_frame_s": t_frames},
    )
    if out_dir is not None:
        report.write(out_dir)
        export_point_cloud(posteriors, cfg.ransac.lambda_m, out_dir / "cloud.ply")
    return report


def load_posteriors(run_dir) -> list:
    """Posterior maps saved by :func:`run_sequence` under ``run_dir``."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    stride = int(summary["config"]["stride"])
    return [io.read_coord_map(p, stride) for p in sorted((run_dir / "posteriors").glob("frame_*.kfsc"))]


def export_point_cloud(maps, lambda_m: float, path) -> int:
    """PLY of every valid cell with standard deviation at most ``lambda_m``."""
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one map")
    pts, var = [], []
    for m in maps:
        with np.errstate(invalid="ignore"):
            keep = m.valid & (np.sqrt(m.variance) <= lambda_m)
        pts.append(m.coords[keep])
        var.append(m.variance[keep])
    return io.write_ply(path, np.concatenate(pts), np.concatenate(var))


# ---------------------------------------------------------------------------
# experiment suites
# ---------------------------------------------------------------------------

SUITE_COLUMNS = ("variant",) + REPORT_COLUMNS


@dataclass
class SuiteReport:
    name: str
    runs: dict  # variant -> RunReport
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        rows = []
        for variant, rep in self.runs.items():
            rows += [{"variant": variant, **r} for r in rep.rows]
        return rows_to_csv(rows, SUITE_COLUMNS)

    def summary(self) -> dict:
        return {"suite": self.name, "variants": {k: r.summary() for k, r in self.runs.items()}, **self.extra}

    def cdf_csv(self) -> str:
        rows = []
        for variant, rep in self.runs.items():
            q = pose_error_quantiles(rep.translation_errors, rep.rotation_errors)
            for p, te, re in zip(q["q"], q["translation_m"], q["rotation_deg"]):
                rows.append({"variant": variant, "quantile": p, "translation_m": te, "rotation_deg": re})
        return rows_to_csv(rows, ("variant", "quantile", "translation_m", "rotation_deg"))

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv())
        (out / "cdf.csv").write_text(self.cdf_csv())
        (out / "summary.json").write_text(_json(self.summary()))
        (out / "timings.json").write_text(json.dumps({k: r.timings for k, r in self.runs.items()}, indent=2))
        return out


def _run_all(variants: dict) -> dict:
    runs = {}
    cache = {}
    for name, cfg in variants.items():
        key = (cfg.sequence, cfg.degradation, cfg.stride, cfg.seed)
        if key not in cache:
            cache[key] = build_frames(cfg)
        frames, K = cache[key]
        runs[name] = run_sequence(cfg.replace(output_dir=None), frames, K)
    return runs


def blur_degradation_factors(blurred: RunReport, clean: RunReport) -> float:
    """Median translation error of the whole blurred run divided by the median
    of the whole clean run."""
    if not blurred.column("blurred").astype(bool).any():
        raise ValueError("run contains no blurred frames")
    return float(np.median(blurred.translation_errors) / np.median(clean.translation_errors))


def blurred_frame_factor(blurred: RunReport, clean: RunReport) -> float:
    """Diagnostic: the same ratio restricted to the blurred frame indices."""
    idx = blurred.column("blurred").astype(bool)
    if not idx.any():
        raise ValueError("run contains no blurred frames")
    return float(np.median(blurred.translation_errors[idx]) / np.median(clean.translation_errors[idx]))


def trim_recovery(rep: RunReport, window: int = 5) -> dict:
    """Mean pose error of the ``window`` frames from the restart vs before it."""
    restart = np.flatnonzero(rep.column("trimmed_restart").astype(bool))
    if not len(restart):
        raise ValueError("run contains no trimmed restart")
    q = int(restart[0])
    te = rep.translation_errors
    pre = float(np.mean(te[1:q]))
    post = float(np.mean(te[q : q + window]))
    rej = rep.column("nis_rejection_rate")
    return {
        "restart_frame": q,
        "pre_trim_mean_m": pre,
        "post_trim_mean_m": post,
        "ratio": post / pre,
        "rejection_at_restart": None if math.isnan(rej[q]) else float(rej[q]),
        "rejection_after_restart": None if q + 1 >= len(rej) or math.isnan(rej[q + 1]) else float(rej[q + 1]),
    }


def _suite_fusion_ablation(base: PipelineConfig):
    variants = {m: base.replace(fusion_mode=m) for m in FUSION_MODES}
    runs = _run_all(variants)
    extra = {"mean_coord_error_m": {k: r.mean_coordinate_error(1) for k, r in runs.items()}}
    return runs, extra


def _suite_motion_blur(base: PipelineConfig):
    blur = dataclasses.replace(base.degradation, blur_kernel_px=30, blur_every_n=10)
    clean = dataclasses.replace(base.degradation, blur_kernel_px=0)
    variants = {}
    for mode in ("kalman", "measurement_only"):
        variants[f"{mode}/clean"] = base.replace(fusion_mode=mode, degradation=clean)
        variants[f"{mode}/blur"] = base.replace(fusion_mode=mode, degradation=blur)
    runs = _run_all(variants)
    modes = ("kalman", "measurement_only")
    factors = {m: blur_degradation_factors(runs[f"{m}/blur"], runs[f"{m}/clean"]) for m in modes}
    on_blurred = {m: blurred_frame_factor(runs[f"{m}/blur"], runs[f"{m}/clean"]) for m in modes}
    blurred_frames = [int(i) for i in np.flatnonzero(runs["kalman/blur"].column("blurred").astype(bool))]
    return runs, {"degradation_factor": factors, "blurred_frame_factor": on_blurred, "blurred_frames": blurred_frames}


DEFAULT_TRIM = (40, 54)


def _suite_tracking_loss(base: PipelineConfig):
    deg = base.degradation
    if deg.trim_range is None:
        deg = dataclasses.replace(deg, trim_range=DEFAULT_TRIM)
    alpha = base.nis_alpha if base.nis_alpha is not None else DEFAULT_NIS_ALPHA
    # the occlusion penalty is a second way of discarding a broken prior;
    # switching it off in both arms isolates the effect of the NIS gate
    process = dataclasses.replace(base.process, occlusion_penalty=0.0)
    common = dict(fusion_mode="kalman", degradation=deg, process=process, nis_action="reset")
    variants = {
        "gated": base.replace(nis_alpha=alpha, **common),
        "ungated": base.replace(nis_alpha=None, **common),
    }
    runs = _run_all(variants)
    return runs, {"recovery": {k: trim_recovery(r) for k, r in runs.items()}}


CALIBRATION_FRAMES = 140


def calibration_config(base: PipelineConfig) -> PipelineConfig:
    """Static camera, exact transition, honest Gaussian noise: the setting in
    which the innovation test statistic is exactly chi-square distributed."""
    seq = dataclasses.replace(base.sequence, trajectory="static", dynamic=False, n_frames=max(base.sequence.n_frames, CALIBRATION_FRAMES), path=None)
    oracle = dataclasses.replace(base.oracle, outlier_ratio=0.0, reported_sigma_mode="honest", misreport_factor=1.0)
    process = dataclasses.replace(base.process, base_w2=0.0, flow_gain=0.0)
    return base.replace(
        sequence=seq,
        oracle=oracle,
        process=process,
        degradation=DegradationConfig(),
        flow_source="ground_truth",
        fusion_mode="kalman",
        nis_alpha=base.nis_alpha if base.nis_alpha is not None else DEFAULT_NIS_ALPHA,
    )


def _suite_calibration(base: PipelineConfig):
    honest = calibration_config(base)
    over = honest.replace(oracle=MeasurementOracleConfig.misreported(0.25, outlier_ratio=0.0))
    variants = {
        "honest": honest,
        "honest/monitor": honest.replace(nis_action="monitor"),
        "overconfident": over,
    }
    runs = _run_all(variants)
    extra = {}
    for k, r in runs.items():
        rates = r.column("nis_rejection_rate")[1:]
        counts = r.column("_n_fused")[1:]
        extra[k] = {"rejection_rate": float(np.sum(rates * counts) / np.sum(counts)), "pixels": int(np.sum(counts))}
    return runs, {"calibration": extra}


SUITES = {
    "fusion_ablation": _suite_fusion_ablation,
    "motion_blur": _suite_motion_blur,
    "tracking_loss": _suite_tracking_loss,
    "calibration": _suite_calibration,
}


def run_experiment_suite(name: str, base_cfg: PipelineConfig | None = None, seed: int | None = None) -> SuiteReport:
    if name not in SUITES:
        raise UnknownSuite(f"unknown suite {name!r}; available: {sorted(SUITES)}")
    base = base_cfg or PipelineConfig()
    if seed is not None:
        base = base.replace(seed=seed)
    runs, extra = SUITES[name](base)
    report = SuiteReport(name, runs, extra)
    if base.output_dir:
        report.write(Path(base.output_dir))
    return report
