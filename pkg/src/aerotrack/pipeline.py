"""End-to-end reconstruction: detections in, metric trajectories out.

Per frame, in order: recalibrate the camera from tracked reference points,
gate and associate detections, fit each associated detection, then run the
track's EKF predict/update and fold the fit into its shape estimate.
Per-detection failures are recorded and skipped; the run continues.
"""

import logging
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from ._io import atomic_write_text, dumps, dumps_lines
from .analytics import IncidentRule, write_trajectories
from .camera import (
    ReferencePointSet,
    back_project_to_ground,
    load_calibration,
    load_reference_tracks,
    recalibrate,
)
from .evaluation import score
from .exceptions import AerotrackError, ConfigError, ParseError
from .keypoints import load_detections
from .model_fitting import FitConfig, fit_vehicle
from .semantic_map import load_map
from .shape_prior import ShapePrior
from .state_estimation import NoiseConfig, TrackFilter, export_trajectory
from .tracking import CONFIRMED, AssociationConfig, Tracker

log = logging.getLogger(__name__)

PATH_KEYS = ("detections", "reference_tracks", "calibration", "map", "prior", "output_dir")
REQUIRED_PATHS = ("detections", "calibration", "prior", "output_dir")


def _sub_config(cls, values, section):
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass
class PipelineConfig:
    """Paths and module settings for one reconstruction run.

    Relative paths resolve against ``base_dir`` (the config file's folder
    when loaded from disk).
    """

    detections: str
    calibration: str
    prior: str
    output_dir: str
    reference_tracks: str = None
    map: str = None
    frame_rate: float = None
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    incident_rules: list = field(default_factory=list)
    base_dir: str = "."

    def __post_init__(self):
        for key in REQUIRED_PATHS:
            if not getattr(self, key):
                raise ConfigError(f"missing required path {key!r}")
        if self.frame_rate is not None and not self.frame_rate > 0:
            raise ConfigError("frame_rate must be positive")
        self.fit = replace(self.fit, seed=int(self.seed))

    def path(self, key):
        value = getattr(self, key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def check_paths(self):
        for key in PATH_KEYS:
            if key == "output_dir":
                continue
            p = self.path(key)
            if p is not None and not p.exists():
                raise ConfigError(f"{key}: {p} does not exist")

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise ConfigError("pipeline config must be a mapping")
        known = {"paths", "frame_rate", "seed", "fit", "association", "noise", "incident_rules"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        paths = dict(d.get("paths") or {})
        bad = set(paths) - set(PATH_KEYS)
        if bad:
            raise ConfigError(f"paths: unknown keys {sorted(bad)}")
        missing = [k for k in REQUIRED_PATHS if k not in paths]
        if missing:
            raise ConfigError(f"paths: missing {missing}")
        rules = [_sub_config(IncidentRule, r, "incident_rules") for r in d.get("incident_rules") or []]
        return cls(
            **{k: paths.get(k) for k in PATH_KEYS},
            frame_rate=None if d.get("frame_rate") is None else float(d["frame_rate"]),
            seed=int(d.get("seed", 0)),
            fit=_sub_config(FitConfig, d.get("fit"), "fit"),
            association=_sub_config(AssociationConfig, d.get("association"), "association"),
            noise=_sub_config(NoiseConfig, d.get("noise"), "noise"),
            incident_rules=rules,
            base_dir=str(base_dir),
        )

    def to_dict(self):
        fit = asdict(self.fit)
        fit.pop("seed")
        return {
            "paths": {k: getattr(self, k) for k in PATH_KEYS if getattr(self, k) is not None},
            "frame_rate": self.frame_rate,
            "seed": self.seed,
            "fit": fit,
            "association": asdict(self.association),
            "noise": asdict(self.noise),
            "incident_rules": [asdict(r) for r in self.incident_rules],
        }


def load_pipeline_config(path):
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return PipelineConfig.from_dict(d, base_dir=path.parent)


@dataclass
class ReconstructResult:
    records: list
    diagnostics: list
    poses: dict
    tracker: object = field(repr=False, default=None)
    outputs: dict = field(default_factory=dict)


def build_reference_set(calibration, anchor_pose, point_ids, tracks):
    """Reference points with world coordinates.

    Points annotated in the calibration use their map coordinates; the rest
    are back-projected from their anchor-frame pixels with the anchor pose.
    Points with neither are dropped.
    """
    corr = {c["point_id"]: c for c in calibration.correspondences}
    n = len(point_ids)
    anchor_px, anchor_ok = tracks.get(calibration.anchor_frame, (np.zeros((n, 2)), np.zeros(n, dtype=bool)))
    keep, world = [], []
    for i, pid in enumerate(point_ids):
        if pid in corr:
            m = corr[pid]["map"]
            world.append((m[0] * calibration.map_scale, m[1] * calibration.map_scale))
        elif anchor_ok[i]:
            world.append(tuple(back_project_to_ground(anchor_pose, calibration.intrinsics, anchor_px[i])))
        else:
            continue
        keep.append(i)
    keep = np.asarray(keep, dtype=int)
    w = np.asarray(world, dtype=float).reshape(-1, 2)
    return ReferencePointSet(
        [point_ids[i] for i in keep],
        anchor_px[keep],
        np.column_stack([w, np.zeros(len(w))]),
        {f: (px[keep], ok[keep]) for f, (px, ok) in tracks.items()},
    )


def _pose_record(frame_index, pose):
    d = {"frame_index": int(frame_index)}
    d.update(pose.to_dict())
    return d


def run_reconstruct(config, write=True):
    """Reconstruct trajectories for one detection file.

    Returns a :class:`ReconstructResult`; with ``write`` the trajectory,
    pose, diagnostics and summary files are written atomically to the
    output directory.
    """
    config.check_paths()
    calib = load_calibration(config.path("calibration"))
    intr = calib.intrinsics
    anchor_pose = calib.solve_anchor_pose()
    reference = None
    if config.reference_tracks is not None:
        ids, tracks = load_reference_tracks(config.path("reference_tracks"))
        reference = build_reference_set(calib, anchor_pose, ids, tracks)
    frames = load_detections(config.path("detections"), config.frame_rate, intr.image_size)
    semantic_map = load_map(config.path("map")) if config.map is not None else None
    try:
        prior = ShapePrior.load(config.path("prior"))
    except (OSError, KeyError, ValueError) as exc:
        raise ParseError(f"{config.path('prior')}: invalid prior file ({exc})") from exc

    tracker = Tracker(config.association, semantic_map)
    diagnostics = [
        {
            "event": "start",
            "n_frames": len(frames),
            "n_detections": sum(len(fr) for fr in frames),
            "anchor_rms_px": anchor_pose.rms_error,
        }
    ]
    poses = {}
    prev_pose = anchor_pose
    for frame in frames:
        f, ts = frame.frame_index, frame.timestamp
        if reference is None:
            pose = anchor_pose
        else:
            pose = recalibrate(reference, f, intr, prev_pose, calib.reprojection_threshold)
            if not pose.degraded:
                prev_pose = pose
        poses[f] = pose
        n_gated = len(tracker.gated)
        matches = tracker.step(frame, pose, intr)
        diagnostics.append(
            {
                "event": "frame",
                "frame_index": f,
                "timestamp": ts,
                "n_detections": len(frame),
                "n_gated": len(tracker.gated) - n_gated,
                "n_matched": len(matches),
                "pose_rms_px": pose.rms_error,
                "pose_degraded": pose.degraded,
            }
        )
        for track, det in sorted(matches, key=lambda m: m[0].track_id):
            record = track.history[-1]
            if track.filter is None:
                track.filter = TrackFilter(prior, config.noise)
            prev_heading = track.filter.state.psi if track.filter.state is not None else None
            try:
                fit = fit_vehicle(det, prior, pose, intr, cfg=config.fit, prev_heading=prev_heading)
            except AerotrackError as exc:
                record.error = f"{type(exc).__name__}: {exc}"
                diagnostics.append(
                    {
                        "event": "fit_failed",
                        "frame_index": f,
                        "track_id": track.track_id,
                        "detection_id": det.detection_id,
                        "error": record.error,
                    }
                )
                fit = None
            else:
                record.fit = fit
                diagnostics.append(
                    {
                        "event": "fit",
                        "frame_index": f,
                        "track_id": track.track_id,
                        "detection_id": det.detection_id,
                        "n_visible": fit.n_visible,
                        **fit.diagnostics(),
                    }
                )
            if fit is not None or track.filter.state is not None:
                record.ekf = track.filter.step(ts, fit)
        for track in tracker.tracks:
            last = track.history[-1] if track.history else None
            if (
                track.state == CONFIRMED
                and last is not None
                and last.frame_index == f
                and last.detection_id is None
                and track.filter is not None
                and track.filter.state is not None
            ):
                last.ekf = track.filter.step(ts, None)

    confirmed = tracker.finish()
    records = []
    for track in confirmed:
        if track.filter is None or track.filter.state is None:
            continue
        records.extend(export_trajectory(track, prior))
    records.sort(key=lambda r: (r["track_id"], r["frame_index"]))
    diagnostics.append(
        {
            "event": "finish",
            "n_tracks_confirmed": len(confirmed),
            "n_records": len(records),
            "n_gated": len(tracker.gated),
            "n_fit_failures": sum(1 for d in diagnostics if d["event"] == "fit_failed"),
        }
    )
    result = ReconstructResult(records, diagnostics, poses, tracker)
    if write:
        result.outputs = write_outputs(config, result)
    return result


def write_outputs(config, result):
    out = config.path("output_dir")
    paths = {
        "trajectories": out / "trajectories.jsonl",
        "poses": out / "poses.jsonl",
        "diagnostics": out / "diagnostics.jsonl",
        "summary": out / "summary.json",
    }
    write_trajectories(result.records, paths["trajectories"])
    atomic_write_text(paths["poses"], dumps_lines(_pose_record(f, p) for f, p in sorted(result.poses.items())))
    atomic_write_text(paths["diagnostics"], dumps_lines(result.diagnostics))
    summary = dict(result.diagnostics[-1])
    summary.pop("event")
    summary["config"] = config.to_dict()
    atomic_write_text(paths["summary"], dumps(summary) + "\n")
    return {k: str(v) for k, v in paths.items()}


# ------------------------------------------------------------------ suite


def scorecard_row(name, report, runtime):
    s = report.summary()
    e = s["errors"]
    return {
        "scenario": name,
        "status": "ok",
        "n_objects": s["n_objects"],
        "mota": s["mota"],
        "false_positives": s["false_positives"],
        "false_negatives": s["false_negatives"],
        "id_switches": s["id_switches"],
        "mostly_tracked": s["mostly_tracked"],
        "mostly_lost": s["mostly_lost"],
        "position_mean_m": e["position"]["mean"],
        "position_median_m": e["position"]["median"],
        "longitudinal_mean_m": e["longitudinal"]["mean"],
        "lateral_mean_m": e["lateral"]["mean"],
        "heading_mean_deg": e["heading_deg"]["mean"],
        "length_mean_m": e["length"]["mean"],
        "width_mean_m": e["width"]["mean"],
        "height_mean_m": e["height"]["mean"],
        "speed_mean_mps": e["speed"]["mean"],
        "runtime_s": runtime,
    }


def run_scenario(spec, workdir, gate=2.0):
    """Generate, reconstruct and score one scenario inside ``workdir``.

    Returns ``(report, result, scene)``.
    """
    from .synth import generate

    scene = generate(spec)
    paths = scene.write(workdir)
    config = load_pipeline_config(paths["pipeline"])
    result = run_reconstruct(config)
    return score(scene.truth, result.records, gate), result, scene


def run_scenario_suite(specs, workdir=None, gate=2.0):
    """Score every scenario; a failing scenario yields an error row and the suite continues."""
    from .synth import scenario_from_dict_or_path

    rows = []
    for i, item in enumerate(specs):
        name = getattr(item, "name", None) or str(item)
        t0 = time.perf_counter()
        try:
            spec = scenario_from_dict_or_path(item)
            name = spec.name
            with tempfile.TemporaryDirectory(dir=workdir) as tmp:
                report, _, _ = run_scenario(spec, Path(tmp) / f"{i:03d}", gate)
            rows.append(scorecard_row(name, report, time.perf_counter() - t0))
        except Exception as exc:  # isolate scenario failures
            log.warning("scenario %s failed: %s", name, exc)
            rows.append({"scenario": name, "status": "error", "error": f"{type(exc).__name__}: {exc}"})
    return rows


def write_scorecard(rows, path):
    atomic_write_text(path, dumps(rows) + "\n")
