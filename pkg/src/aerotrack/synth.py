"""Synthetic aerial scenes with exact ground truth.

A scenario scripts vehicles through piecewise-constant ``(speed, steering)``
setpoints, integrates the kinematic bicycle model at a fine time step,
films the scene with a slowly drifting downward-looking camera and emits
the same files a real deployment would provide: keypoint detections,
reference-point tracks, an anchor-frame calibration, a map and a prior.

The default camera flies at 120 m with intrinsics chosen for a ground
sampling distance of 3.5 cm/px (focal length 120 / 0.035 = 3429 px on a
3840 x 2160 sensor). At that scale 2 px of keypoint noise is about 7 cm on
the ground.
"""

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ._io import atomic_write_text, dumps
from .camera import (
    CalibrationConfig,
    CameraIntrinsics,
    CameraPose,
    back_project_to_ground,
    save_calibration,
    save_reference_tracks,
)
from .exceptions import ConfigError, ParseError
from .fleet import CATEGORIES, save_models, synthetic_fleet
from .keypoints import DETECTABLE, N_KEYPOINTS, FrameDetections, KeypointDetection, save_detections
from .semantic_map import FIXTURES, load_fixture
from .shape_prior import prior_from_fleet
from .state_estimation import bicycle_derivatives

VISIBILITY_ANGLE = np.deg2rad(100.0)
DEFAULT_ALTITUDE = 120.0
DEFAULT_GSD = 0.035
DEFAULT_IMAGE_SIZE = (3840, 2160)


def slot_normals():
    """Outward unit normal of every keypoint slot in the body frame."""
    n = np.zeros((N_KEYPOINTS, 3))
    quad_sign = [(-1, 1), (-1, -1), (1, 1), (1, -1)]  # (forward, left) per quad slot

    def quad(first, fn):
        for i, (sx, sy) in enumerate(quad_sign):
            n[first + i] = fn(sx, sy)

    quad(0, lambda sx, sy: (0.2 * sx, 0.2 * sy, 1.0))  # roof
    quad(4, lambda sx, sy: (0.8 * sx, 0.3 * sy, 1.0))  # windshields
    quad(8, lambda sx, sy: (sx, 0.6 * sy, 0.1))  # lights
    quad(12, lambda sx, sy: (sx, 0.6 * sy, 0.0))  # bumpers
    quad(16, lambda sx, sy: (0.0, sy, 0.0))  # wheel centers
    quad(20, lambda sx, sy: (0.0, 0.0, -1.0))  # chassis bottom
    n[24], n[25] = (0.2, 1.0, 0.3), (0.2, -1.0, 0.3)  # mirrors
    n[26], n[27] = (0.0, 1.0, 0.4), (0.0, -1.0, 0.4)  # door windows
    quad(28, lambda sx, sy: (0.0, sy, -0.1))  # wheel-ground contacts
    n[32] = (1.0, 0.0, 0.3)  # logo
    return n / np.linalg.norm(n, axis=1)[:, None]


SLOT_NORMALS = slot_normals()


def steering_for_radius(radius, wheelbase, rear_fraction=0.5):
    """Steering angle whose steady-state path radius is ``radius`` (signed, left positive).

    Solves ``tan(delta) cos(beta) = wheelbase / radius`` with
    ``beta = atan(rear_fraction tan(delta))``.
    """
    kappa = wheelbase / radius
    s = 1.0 - (kappa * rear_fraction) ** 2
    if s <= 0:
        raise ConfigError(f"radius {radius} m is too tight for wheelbase {wheelbase} m")
    return float(np.arctan(kappa / np.sqrt(s)))


# ------------------------------------------------------------------ spec


@dataclass
class DriftProfile:
    """Camera drift: constant velocity, sinusoidal sway along x, slow yaw."""

    velocity: tuple = (0.0, 0.0, 0.0)  # m/s
    sway_amplitude: float = 0.0  # m
    sway_period: float = 10.0  # s
    yaw_rate: float = 0.0  # rad/s


@dataclass
class CameraSpec:
    altitude: float = DEFAULT_ALTITUDE
    gsd: float = DEFAULT_GSD
    image_size: tuple = DEFAULT_IMAGE_SIZE
    target: tuple = (0.0, 0.0)  # ground point on the optical axis at t = 0
    yaw: float = 0.0
    tilt: float = np.deg2rad(10.0)
    drift: DriftProfile = field(default_factory=DriftProfile)

    def intrinsics(self):
        return CameraIntrinsics.from_gsd(self.altitude, self.gsd, tuple(self.image_size))

    def initial_center(self):
        intr = self.intrinsics()
        probe = CameraPose.from_center((0.0, 0.0, self.altitude), self.yaw, self.tilt)
        hit = back_project_to_ground(probe, intr, intr.principal_point)
        return np.array([self.target[0] - hit[0], self.target[1] - hit[1], self.altitude])

    def pose_at(self, t, center0=None):
        c = self.initial_center() if center0 is None else center0
        d = self.drift
        c = c + np.asarray(d.velocity, dtype=float) * t
        c[0] += d.sway_amplitude * np.sin(2.0 * np.pi * t / d.sway_period)
        return CameraPose.from_center(c, self.yaw + d.yaw_rate * t, self.tilt)


@dataclass
class VehicleSpec:
    """One scripted vehicle.

    ``script`` rows are ``(time s, speed m/s, steering rad)``; each setpoint
    holds until the next. ``b`` of ``None`` draws the shape of a random
    fleet model of ``category``.
    """

    vehicle_id: int
    category: str
    start: tuple  # x, y, psi
    script: list
    b: np.ndarray = None

    def __post_init__(self):
        self.script = [tuple(float(v) for v in row) for row in self.script]
        if not self.script or self.script[0][0] > 0:
            raise ConfigError(f"vehicle {self.vehicle_id}: the script must start at t <= 0")
        times = [row[0] for row in self.script]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(f"vehicle {self.vehicle_id}: setpoint times must increase")
        for _, v, delta in self.script:
            if v < 0 or abs(delta) >= np.deg2rad(60.0):
                raise ConfigError(f"vehicle {self.vehicle_id}: speed must be >= 0 and |steering| < 60 deg")


@dataclass
class ScenarioSpec:
    name: str
    duration: float
    frame_rate: float
    vehicles: list
    camera: CameraSpec = field(default_factory=CameraSpec)
    pixel_sigma: float = 0.0
    reference_sigma: float = 0.0
    scene: str = "four_way_intersection"
    seed: int = 0
    n_reference_points: int = 16
    n_correspondences: int = 8
    fleet_size: int = 200
    fleet_seed: int = 0
    n_components: int = 5
    substeps: int = 10
    pipeline: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frame_rate > 0:
            raise ConfigError("frame_rate must be positive")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.camera.altitude > 0:
            raise ConfigError("camera altitude must be positive")
        if self.pixel_sigma < 0 or self.reference_sigma < 0:
            raise ConfigError("noise levels must be non-negative")
        if self.scene not in FIXTURES:
            raise ConfigError(f"unknown scene {self.scene!r}; choose from {sorted(FIXTURES)}")
        if not 4 <= self.n_correspondences <= self.n_reference_points:
            raise ConfigError("need 4 <= n_correspondences <= n_reference_points")
        ids = [v.vehicle_id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ConfigError("vehicle ids must be unique")

    @property
    def n_frames(self):
        return int(round(self.duration * self.frame_rate))

    def to_dict(self):
        cam = self.camera
        return {
            "name": self.name,
            "duration": self.duration,
            "frame_rate": self.frame_rate,
            "seed": self.seed,
            "scene": self.scene,
            "noise": {"pixel_sigma": self.pixel_sigma, "reference_sigma": self.reference_sigma},
            "camera": {
                "altitude": cam.altitude,
                "gsd": cam.gsd,
                "image_size": list(cam.image_size),
                "target": list(cam.target),
                "yaw_deg": math.degrees(cam.yaw),
                "tilt_deg": math.degrees(cam.tilt),
                "drift": {
                    "velocity": list(cam.drift.velocity),
                    "sway_amplitude": cam.drift.sway_amplitude,
                    "sway_period": cam.drift.sway_period,
                    "yaw_rate_deg": math.degrees(cam.drift.yaw_rate),
                },
            },
            "reference": {"n_points": self.n_reference_points, "n_correspondences": self.n_correspondences},
            "fleet": {"size": self.fleet_size, "seed": self.fleet_seed, "n_components": self.n_components},
            "substeps": self.substeps,
            "vehicles": [
                {
                    "vehicle_id": v.vehicle_id,
                    "category": v.category,
                    "start": [v.start[0], v.start[1], math.degrees(v.start[2])],
                    "script": [[t, s, math.degrees(d)] for t, s, d in v.script],
                    **({"b": [float(x) for x in v.b]} if v.b is not None else {}),
                }
                for v in self.vehicles
            ],
            "pipeline": dict(self.pipeline),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            c = d.get("camera", {})
            dr = c.get("drift", {})
            camera = CameraSpec(
                altitude=float(c.get("altitude", DEFAULT_ALTITUDE)),
                gsd=float(c.get("gsd", DEFAULT_GSD)),
                image_size=tuple(int(v) for v in c.get("image_size", DEFAULT_IMAGE_SIZE)),
                target=tuple(float(v) for v in c.get("target", (0.0, 0.0))),
                yaw=math.radians(float(c.get("yaw_deg", 0.0))),
                tilt=math.radians(float(c.get("tilt_deg", 10.0))),
                drift=DriftProfile(
                    velocity=tuple(float(v) for v in dr.get("velocity", (0.0, 0.0, 0.0))),
                    sway_amplitude=float(dr.get("sway_amplitude", 0.0)),
                    sway_period=float(dr.get("sway_period", 10.0)),
                    yaw_rate=math.radians(float(dr.get("yaw_rate_deg", 0.0))),
                ),
            )
            vehicles = [
                VehicleSpec(
                    int(v["vehicle_id"]),
                    str(v["category"]),
                    (float(v["start"][0]), float(v["start"][1]), math.radians(float(v["start"][2]))),
                    [(float(t), float(s), math.radians(float(a))) for t, s, a in v["script"]],
                    None if v.get("b") is None else np.asarray(v["b"], dtype=float),
                )
                for v in d.get("vehicles", [])
            ]
            noise = d.get("noise", {})
            ref = d.get("reference", {})
            fleet = d.get("fleet", {})
            return cls(
                name=str(d["name"]),
                duration=float(d["duration"]),
                frame_rate=float(d["frame_rate"]),
                vehicles=vehicles,
                camera=camera,
                pixel_sigma=float(noise.get("pixel_sigma", 0.0)),
                reference_sigma=float(noise.get("reference_sigma", 0.0)),
                scene=str(d.get("scene", "four_way_intersection")),
                seed=int(d.get("seed", 0)),
                n_reference_points=int(ref.get("n_points", 16)),
                n_correspondences=int(ref.get("n_correspondences", 8)),
                fleet_size=int(fleet.get("size", 200)),
                fleet_seed=int(fleet.get("seed", 0)),
                n_components=int(fleet.get("n_components", 5)),
                substeps=int(d.get("substeps", 10)),
                pipeline=dict(d.get("pipeline") or {}),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"invalid scenario spec ({exc!r})") from exc


def load_scenario(path):
    try:
        d = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(d, dict):
        raise ParseError(f"{path}: expected a mapping")
    return ScenarioSpec.from_dict(d)


def save_scenario(spec, path):
    atomic_write_text(path, yaml.safe_dump(spec.to_dict(), sort_keys=False))


# ------------------------------------------------------------- dynamics


def _rk4(state3, v, delta, h, wheelbase):
    def f(s):
        return bicycle_derivatives((s[0], s[1], s[2], v, delta), wheelbase)

    k1 = f(state3)
    k2 = f(state3 + 0.5 * h * k1)
    k3 = f(state3 + 0.5 * h * k2)
    k4 = f(state3 + h * k3)
    return state3 + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_script(start, script, wheelbase, times, max_step):
    """States ``(x, y, psi, v, delta)`` at ``times`` under a held-setpoint script.

    Integration restarts at every setpoint change so steps never straddle a
    discontinuity; within a piece RK4 steps are at most ``max_step``.
    """
    times = np.asarray(times, dtype=float)
    changes = [row[0] for row in script[1:]]
    marks = sorted(set(changes) | set(times.tolist()) | {0.0})
    s = np.array(start, dtype=float)
    t = 0.0
    out = {}

    def active(at):
        row = script[0]
        for r in script:
            if r[0] <= at:
                row = r
        return row[1], row[2]

    for m in marks:
        if m < 0:
            continue
        v, delta = active(t)
        span = m - t
        if span > 0:
            n = max(1, int(math.ceil(span / max_step - 1e-9)))
            h = span / n
            for _ in range(n):
                s = _rk4(s, v, delta, h, wheelbase)
            t = m
        out[m] = s.copy()
    res = np.empty((len(times), 5))
    for i, ti in enumerate(times):
        v, delta = active(ti)
        res[i, :3] = out[float(ti)]
        res[i, 3:] = (v, delta)
    return res


# ----------------------------------------------------------- generation


@dataclass
class GroundTruth:
    """Exact per-frame scene state.

    ``vehicles[vid]`` holds ``category, b, length, width, height, wheelbase``
    and per-frame arrays ``x, y, psi, v, delta`` over all frames;
    ``detected[vid]`` flags the frames in which the vehicle was emitted as
    a detection, and ``detection_ids[vid]`` its detection id there (-1
    otherwise).
    """

    frame_indices: np.ndarray
    timestamps: np.ndarray
    camera_poses: list
    vehicles: dict
    detected: dict
    detection_ids: dict

    def object_frames(self):
        """``{frame: [dict(id, x, y, psi, v, length, width, height)]}`` of detected vehicles."""
        out = {int(f): [] for f in self.frame_indices}
        for vid, veh in self.vehicles.items():
            for i, f in enumerate(self.frame_indices):
                if self.detected[vid][i]:
                    out[int(f)].append(
                        {
                            "id": vid,
                            "x": float(veh["x"][i]),
                            "y": float(veh["y"][i]),
                            "psi": float(veh["psi"][i]),
                            "v": float(veh["v"][i]),
                            "length": veh["length"],
                            "width": veh["width"],
                            "height": veh["height"],
                        }
                    )
        return out

    def trajectories(self, detected_only=True):
        from .analytics import Trajectory

        out = []
        for vid in sorted(self.vehicles):
            veh = self.vehicles[vid]
            m = self.detected[vid] if detected_only else np.ones(len(self.frame_indices), dtype=bool)
            if not m.any():
                continue
            out.append(
                Trajectory(
                    vid, veh["category"], self.timestamps[m], veh["x"][m], veh["y"][m], veh["psi"][m],
                    veh["v"][m], veh["length"], veh["width"], veh["height"], self.frame_indices[m],
                )
            )
        return out

    def to_dict(self):
        return {
            "frame_indices": self.frame_indices.tolist(),
            "timestamps": self.timestamps.tolist(),
            "camera_poses": [p.to_dict() for p in self.camera_poses],
            "vehicles": [
                {
                    "vehicle_id": vid,
                    **{
                        k: (val.tolist() if isinstance(val, np.ndarray) else val)
                        for k, val in self.vehicles[vid].items()
                    },
                    "detected": self.detected[vid].astype(int).tolist(),
                    "detection_ids": self.detection_ids[vid].tolist(),
                }
                for vid in sorted(self.vehicles)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        vehicles, detected, det_ids = {}, {}, {}
        for v in d["vehicles"]:
            vid = int(v["vehicle_id"])
            vehicles[vid] = {
                "category": v["category"],
                "b": np.asarray(v["b"], dtype=float),
                "length": float(v["length"]),
                "width": float(v["width"]),
                "height": float(v["height"]),
                "wheelbase": float(v["wheelbase"]),
                **{k: np.asarray(v[k], dtype=float) for k in ("x", "y", "psi", "v", "delta")},
            }
            detected[vid] = np.asarray(v["detected"], dtype=bool)
            det_ids[vid] = np.asarray(v["detection_ids"], dtype=int)
        return cls(
            np.asarray(d["frame_indices"], dtype=int),
            np.asarray(d["timestamps"], dtype=float),
            [CameraPose.from_dict(p) for p in d["camera_poses"]],
            vehicles,
            detected,
            det_ids,
        )

    def save(self, path):
        atomic_write_text(path, dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        import json

        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: invalid ground-truth file ({exc})") from exc


@dataclass
class SynthScene:
    """Everything :func:`generate` produces, in memory."""

    spec: ScenarioSpec
    intrinsics: CameraIntrinsics
    calibration: CalibrationConfig
    reference_ids: list
    reference_tracks: dict
    frames: list
    semantic_map: object
    models: list
    prior: object
    truth: GroundTruth

    def write(self, outdir):
        """Write all artifacts plus a ready-to-run pipeline config; returns their paths."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "scenario": out / "scenario.yaml",
            "detections": out / "detections.jsonl",
            "reference_tracks": out / "reference_tracks.jsonl",
            "calibration": out / "calibration.yaml",
            "map": out / "map.geojson",
            "models": out / "models.json",
            "prior": out / "prior.npz",
            "ground_truth": out / "ground_truth.json",
            "pipeline": out / "pipeline.yaml",
        }
        save_scenario(self.spec, paths["scenario"])
        save_detections(self.frames, paths["detections"])
        save_reference_tracks(self.reference_ids, self.reference_tracks, paths["reference_tracks"])
        save_calibration(self.calibration, paths["calibration"])
        self.semantic_map.save(paths["map"])
        save_models(self.models, paths["models"])
        self.prior.save(paths["prior"])
        self.truth.save(paths["ground_truth"])
        pipeline = {
            "paths": {
                "detections": "detections.jsonl",
                "reference_tracks": "reference_tracks.jsonl",
                "calibration": "calibration.yaml",
                "map": "map.geojson",
                "prior": "prior.npz",
                "output_dir": "output",
            },
            "frame_rate": self.spec.frame_rate,
            "seed": self.spec.seed,
        }
        for section, values in self.spec.pipeline.items():
            pipeline[section] = dict(values)
        atomic_write_text(paths["pipeline"], yaml.safe_dump(pipeline, sort_keys=False))
        return {k: str(v) for k, v in paths.items()}


def _inside(px, size, margin=0.0):
    w, h = size
    return (px[..., 0] >= margin) & (px[..., 0] <= w - margin) & (px[..., 1] >= margin) & (px[..., 1] <= h - margin)


def _project_all(pose, intr, pts):
    Xc = pts @ pose.rotation.T + pose.translation
    z = Xc[:, 2]
    uv = Xc[:, :2] / z[:, None] * (intr.focal_length_x, intr.focal_length_y) + intr.principal_point
    return uv, z


def generate(spec, seed=None):
    """Build a :class:`SynthScene` from ``spec`` (deterministic given the seed)."""
    seed = spec.seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    intr = spec.camera.intrinsics()
    size = intr.image_size
    models = synthetic_fleet(spec.fleet_size, spec.fleet_seed)
    prior = default_prior(spec.fleet_size, spec.fleet_seed, spec.n_components)
    semantic_map = load_fixture(spec.scene)

    # vehicle shapes
    shapes = {}
    for veh in spec.vehicles:
        if veh.b is not None:
            b = np.asarray(veh.b, dtype=float)
            if b.shape != (prior.k,):
                raise ConfigError(f"vehicle {veh.vehicle_id}: b must have {prior.k} values")
        else:
            pool = [m for m in models if m.category == veh.category]
            if not pool:
                raise ConfigError(f"vehicle {veh.vehicle_id}: no fleet models of category {veh.category!r}")
            b = prior.transform(pool[int(rng.integers(len(pool)))].shape_vector[None, :])[0]
        shapes[veh.vehicle_id] = b

    n = spec.n_frames
    frame_idx = np.arange(n)
    times = frame_idx / spec.frame_rate
    center0 = spec.camera.initial_center()
    poses = [spec.camera.pose_at(t, center0) for t in times]

    # reference points: random anchor-frame pixels back-projected to the ground
    w, h = size
    anchor_px = np.column_stack(
        [rng.uniform(0.1 * w, 0.9 * w, spec.n_reference_points), rng.uniform(0.1 * h, 0.9 * h, spec.n_reference_points)]
    )
    ref_world = back_project_to_ground(poses[0], intr, anchor_px)
    ref_world3 = np.column_stack([ref_world, np.zeros(len(ref_world))])
    ref_ids = [f"R{i:02d}" for i in range(spec.n_reference_points)]
    ref_tracks = {}
    for f, pose in zip(frame_idx, poses):
        uv, z = _project_all(pose, intr, ref_world3)
        if spec.reference_sigma > 0:
            uv = uv + rng.normal(0.0, spec.reference_sigma, uv.shape)
        ref_tracks[int(f)] = (uv, (z > 0) & _inside(uv, size))
    calib = CalibrationConfig(
        intr,
        [
            {"point_id": ref_ids[i], "map": [float(ref_world[i, 0]), float(ref_world[i, 1])], "image": [float(v) for v in ref_tracks[0][0][i]]}
            for i in range(spec.n_correspondences)
        ],
        map_scale=1.0,
        anchor_frame=0,
    )

    # vehicle motion and detections
    vehicles, detected, det_ids = {}, {}, {}
    body = {}
    for veh in spec.vehicles:
        b = shapes[veh.vehicle_id]
        L, W, H = prior.dimensions(b)
        wb = prior.wheelbase(b)
        states = integrate_script(veh.start, veh.script, wb, times, 1.0 / (spec.frame_rate * spec.substeps))
        vehicles[veh.vehicle_id] = {
            "category": veh.category,
            "b": b,
            "length": L,
            "width": W,
            "height": H,
            "wheelbase": wb,
            "x": states[:, 0],
            "y": states[:, 1],
            "psi": states[:, 2],
            "v": states[:, 3],
            "delta": states[:, 4],
        }
        detected[veh.vehicle_id] = np.zeros(n, dtype=bool)
        det_ids[veh.vehicle_id] = np.full(n, -1, dtype=int)
        body[veh.vehicle_id] = prior.generate(b)

    frames = []
    cos_vis = np.cos(VISIBILITY_ANGLE)
    for i, (f, t, pose) in enumerate(zip(frame_idx, times, poses)):
        dets = []
        for veh in spec.vehicles:
            vid = veh.vehicle_id
            st = vehicles[vid]
            c, s = np.cos(st["psi"][i]), np.sin(st["psi"][i])
            Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            P = body[vid] @ Rz.T + (st["x"][i], st["y"][i], 0.0)
            uv, z = _project_all(pose, intr, P)
            if np.any(z <= 0) or not np.all(_inside(uv, size)):
                continue  # leaves the field of view
            to_cam = pose.center - P
            to_cam /= np.linalg.norm(to_cam, axis=1)[:, None]
            facing = np.einsum("ij,ij->i", SLOT_NORMALS @ Rz.T, to_cam) >= cos_vis
            vis = DETECTABLE & facing
            bbox = np.concatenate([uv.min(axis=0), uv.max(axis=0)])
            if spec.pixel_sigma > 0:
                uv = uv + rng.normal(0.0, spec.pixel_sigma, uv.shape)
                bbox = bbox + rng.normal(0.0, spec.pixel_sigma, 4)
            kp = np.where(vis[:, None], uv, 0.0)
            det_id = len(dets)
            dets.append(
                KeypointDetection(int(f), det_id, bbox, kp, vis.astype(int), veh.category, 0.9, 1.0)
            )
            detected[vid][i] = True
            det_ids[vid][i] = det_id
        frames.append(FrameDetections(int(f), float(t), dets))

    truth = GroundTruth(frame_idx, times, poses, vehicles, detected, det_ids)
    return SynthScene(spec, intr, calib, ref_ids, ref_tracks, frames, semantic_map, models, prior, truth)


# --------------------------------------------------------------- scenes


def _lane_offset(i):
    return (i - 0.5) * 3.5


def _straight(vid, category, start, psi, speed):
    return VehicleSpec(vid, category, (start[0], start[1], psi), [(0.0, speed, 0.0)])


@functools.lru_cache(maxsize=4)
def default_prior(fleet_size=200, fleet_seed=0, n_components=5):
    """The prior :func:`generate` builds for the default fleet settings."""
    return prior_from_fleet(synthetic_fleet(fleet_size, fleet_seed), k=n_components)


def _right_turn(vid, category, start, psi, approach_speed, turn_speed, dist_to_turn, radius):
    """Approach, slow down, turn right through 90 degrees, then go straight.

    The shape is pinned to the category template so the wheelbase, and with
    it the steering angle for ``radius``, is known when the script is built.
    The onset of the turn is shifted once so that the slip angle's sideways
    offset does not push the exit path off the intended lane.
    """
    prior = default_prior()
    b = prior.templates_[category].copy()
    wheelbase = prior.wheelbase(b)
    delta = -steering_for_radius(radius, wheelbase)
    turn_time = (np.pi / 2.0) * radius / turn_speed
    u = np.array([np.cos(psi), np.sin(psi)])

    def script(dist):
        slow_at = max(dist - 10.0, 0.0) / approach_speed
        turn_at = slow_at + (dist - approach_speed * slow_at) / turn_speed
        return [
            (0.0, approach_speed, 0.0),
            (slow_at, turn_speed, 0.0),
            (turn_at, turn_speed, delta),
            (turn_at + turn_time, turn_speed, 0.0),
            (turn_at + turn_time + 1.0, approach_speed, 0.0),
        ]

    rows = script(dist_to_turn)
    t_end = rows[3][0]
    end = integrate_script((start[0], start[1], psi), rows, wheelbase, [t_end], 0.01)[0]
    along = (end[:2] - np.asarray(start)) @ u
    rows = script(dist_to_turn - (along - dist_to_turn - radius))
    return VehicleSpec(vid, category, (start[0], start[1], psi), rows, b)


def intersection_scenario(pixel_sigma=0.0, seed=0, duration=10.0, frame_rate=30.0, name=None, pipeline=None):
    """Ten vehicles through the four-way intersection: through traffic and two right turns."""
    E, W = 0.0, np.pi
    vs = [
        _straight(1, "sedan", (-70.0, -_lane_offset(1)), E, 12.0),
        _straight(2, "suv", (-62.0, -_lane_offset(2)), E, 11.0),
        _straight(3, "hatchback", (-92.0, -_lane_offset(1)), E, 12.0),
        _straight(4, "van", (70.0, _lane_offset(1)), W, 12.0),
        _straight(5, "pickup", (65.0, _lane_offset(2)), W, 10.0),
        _right_turn(6, "sedan", (45.0, _lane_offset(3)), W, 10.0, 4.0, 45.0 - 13.25, 4.5),
        _right_turn(7, "hatchback", (-48.0, -_lane_offset(3)), E, 10.0, 4.0, 48.0 - 13.25, 4.5),
        _straight(8, "suv", (92.0, _lane_offset(1)), W, 12.0),
        _straight(9, "sedan", (-85.0, -_lane_offset(2)), E, 11.0),
        _straight(10, "van", (85.0, _lane_offset(3)), W, 11.0),
    ]
    return ScenarioSpec(
        name or f"intersection-10-sigma{pixel_sigma:g}",
        duration,
        frame_rate,
        vs,
        CameraSpec(drift=DriftProfile(velocity=(0.3, -0.2, 0.0), sway_amplitude=0.5, sway_period=8.0, yaw_rate=np.deg2rad(0.2))),
        pixel_sigma=pixel_sigma,
        reference_sigma=0.3 * pixel_sigma,
        seed=seed,
        pipeline=dict(pipeline or {}),
    )


def crossing_scenario(pixel_sigma=0.0, seed=0, gap=0.6, pipeline=None):
    """A southbound and an eastbound vehicle pass the same junction ``gap`` seconds apart."""
    S, E = -np.pi / 2.0, 0.0
    a = _straight(1, "sedan", (-_lane_offset(2), 35.0), S, 10.0)
    t_conflict = (35.0 + _lane_offset(2)) / 10.0
    b = _straight(2, "suv", (-_lane_offset(2) - 10.0 * (t_conflict + gap), -_lane_offset(2)), E, 10.0)
    return ScenarioSpec(
        f"crossing-sigma{pixel_sigma:g}",
        8.0,
        30.0,
        [a, b],
        CameraSpec(),
        pixel_sigma=pixel_sigma,
        reference_sigma=0.3 * pixel_sigma,
        seed=seed,
        pipeline=dict(pipeline or {}),
    )


def single_vehicle_scenario(seed, pixel_sigma=2.0, duration=2.0, frame_rate=30.0, pipeline=None):
    """One vehicle of random type, lane, speed and gentle steering in view."""
    rng = np.random.default_rng(seed)
    category = str(rng.choice(CATEGORIES))
    eastbound = bool(rng.integers(2))
    lane = int(rng.integers(1, 4))
    speed = float(rng.uniform(5.0, 15.0))
    x0 = float(rng.uniform(-45.0, 15.0))
    y = -_lane_offset(lane) if eastbound else _lane_offset(lane)
    psi = 0.0 if eastbound else np.pi
    if not eastbound:
        x0 = -x0
    steer = float(rng.uniform(-0.02, 0.02))
    v = VehicleSpec(1, category, (x0, y, psi), [(0.0, speed, steer)])
    return ScenarioSpec(
        f"single-{seed}",
        duration,
        frame_rate,
        [v],
        CameraSpec(),
        pixel_sigma=pixel_sigma,
        reference_sigma=0.3 * pixel_sigma,
        seed=seed,
        pipeline=dict(pipeline or {}),
    )


def scenario_from_dict_or_path(obj):
    if isinstance(obj, ScenarioSpec):
        return obj
    if isinstance(obj, dict):
        return ScenarioSpec.from_dict(obj)
    return load_scenario(obj)


__all__ = [
    "CameraSpec",
    "DriftProfile",
    "GroundTruth",
    "ScenarioSpec",
    "SynthScene",
    "VehicleSpec",
    "crossing_scenario",
    "generate",
    "integrate_script",
    "intersection_scenario",
    "load_scenario",
    "save_scenario",
    "single_vehicle_scenario",
    "slot_normals",
    "steering_for_radius",
]
