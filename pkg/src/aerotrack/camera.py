"""Pinhole camera model, planar PnP, per-frame recalibration and ground back-projection.

World frame: metric ground plane ``z = 0`` with ``z`` up. Camera frame:
``x`` right, ``y`` down, ``z`` along the optical axis. A pose maps world to
camera coordinates, ``X_cam = R @ X_world + t``.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ._io import atomic_write_text, dumps, read_lines
from ._validation import as_float_array, check_positive, check_rotation
from .exceptions import (
    ConfigError,
    DegenerateConfigurationError,
    NoIntersectionError,
    ParseError,
    PreconditionError,
    ProjectionError,
    SolverError,
)
from .optim import levenberg_marquardt

# Camera looking straight down: image right = world east, image down = world south.
NADIR_ROTATION = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_length_x: float
    focal_length_y: float
    principal_point: tuple
    image_size: tuple

    def __post_init__(self):
        check_positive(self.focal_length_x, "focal_length_x")
        check_positive(self.focal_length_y, "focal_length_y")
        cx, cy = (float(c) for c in self.principal_point)
        w, h = (float(s) for s in self.image_size)
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ConfigError("principal point must lie inside the image")
        object.__setattr__(self, "principal_point", (cx, cy))
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def K(self):
        cx, cy = self.principal_point
        return np.array(
            [[self.focal_length_x, 0.0, cx], [0.0, self.focal_length_y, cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_gsd(cls, altitude, gsd, image_size=(3840, 2160)):
        """Square-pixel intrinsics giving ``gsd`` meters/pixel at nadir from ``altitude``."""
        f = altitude / gsd
        w, h = image_size
        return cls(f, f, (w / 2.0, h / 2.0), (w, h))

    def to_dict(self):
        return {
            "focal_length_x": self.focal_length_x,
            "focal_length_y": self.focal_length_y,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["focal_length_x"]),
            float(d["focal_length_y"]),
            tuple(d["principal_point"]),
            tuple(d["image_size"]),
        )


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform.

    ``rms_error`` carries the reprojection RMS (pixels) of the solve that
    produced the pose; ``degraded`` marks a pose carried forward because
    recalibration was not possible for the frame.
    """

    rotation: np.ndarray
    translation: np.ndarray
    rms_error: float = None
    degraded: bool = False

    def __post_init__(self):
        R = check_rotation(self.rotation, atol=1e-6)
        t = as_float_array(self.translation, (3,), "translation")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if self.center[2] <= 0:
            raise ConfigError("camera center must be above the ground plane")

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    @classmethod
    def from_center(cls, center, yaw=0.0, tilt=0.0, roll=0.0):
        """Pose of a camera at ``center`` looking down.

        ``tilt`` pitches the optical axis away from nadir toward the direction
        given by ``yaw`` (radians, counter-clockwise from world +x rotated so
        that ``yaw = 0`` keeps image-up = world +y).
        """
        c, s = np.cos(yaw), np.sin(yaw)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        ct, st = np.cos(tilt), np.sin(tilt)
        Rx = np.array([[1.0, 0.0, 0.0], [0.0, ct, -st], [0.0, st, ct]])
        cr, sr = np.cos(roll), np.sin(roll)
        Rr = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
        R = Rr @ Rx @ NADIR_ROTATION @ Rz.T
        center = np.asarray(center, dtype=float)
        return cls(R, -R @ center)

    def to_dict(self):
        d = {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}
        if self.rms_error is not None:
            d["rms_error"] = float(self.rms_error)
        d["degraded"] = bool(self.degraded)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["rotation"], dtype=float),
            np.array(d["translation"], dtype=float),
            d.get("rms_error"),
            bool(d.get("degraded", False)),
        )


@dataclass(frozen=True)
class GroundCorrespondence:
    map_point: tuple
    image_point: tuple

    def __post_init__(self):
        mp = np.asarray(self.map_point, dtype=float)
        if mp.shape == (3,) and abs(mp[2]) > 1e-12:
            raise ConfigError("ground correspondences must lie on z = 0")
        object.__setattr__(self, "map_point", (float(mp[0]), float(mp[1]), 0.0))
        object.__setattr__(self, "image_point", tuple(float(v) for v in self.image_point))


def project(pose, intrinsics, world_point):
    """Project world point(s) to pixels.

    Accepts a single point ``(3,)`` or an array ``(N, 3)`` and returns
    ``(2,)`` or ``(N, 2)`` accordingly.
    """
    X = np.asarray(world_point, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    Xc = X @ pose.rotation.T + pose.translation
    depth = Xc[:, 2]
    if np.any(depth <= 0):
        raise ProjectionError("point behind camera")
    uv = np.empty((len(X), 2))
    cx, cy = intrinsics.principal_point
    uv[:, 0] = intrinsics.focal_length_x * Xc[:, 0] / depth + cx
    uv[:, 1] = intrinsics.focal_length_y * Xc[:, 1] / depth + cy
    return uv[0] if single else uv


def pixel_rays(pose, intrinsics, pixel):
    """World-frame viewing ray directions (unnormalized) through pixel(s)."""
    p = np.atleast_2d(np.asarray(pixel, dtype=float))
    cx, cy = intrinsics.principal_point
    d_cam = np.column_stack(
        [
            (p[:, 0] - cx) / intrinsics.focal_length_x,
            (p[:, 1] - cy) / intrinsics.focal_length_y,
            np.ones(len(p)),
        ]
    )
    return d_cam @ pose.rotation


def back_project_to_ground(pose, intrinsics, pixel):
    """Intersect the viewing ray through ``pixel`` with the plane ``z = 0``.

    Returns ``(2,)`` for a single pixel or ``(N, 2)`` for an array.
    """
    single = np.asarray(pixel).ndim == 1
    d = pixel_rays(pose, intrinsics, pixel)
    C = pose.center
    with np.errstate(divide="ignore", invalid="ignore"):
        s = -C[2] / d[:, 2]
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise NoIntersectionError("viewing ray does not reach the ground in front of the camera")
    g = C[:2] + s[:, None] * d[:, :2]
    return g[0] if single else g


# --------------------------------------------------------------------------- PnP


def _rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        return np.eye(3) + K
    k = w / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def _nearest_rotation(M):
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


def _normalizing_transform(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def estimate_homography(src, dst):
    """Normalized DLT homography mapping ``src`` (N, 2) to ``dst`` (N, 2)."""
    T1 = _normalizing_transform(src)
    T2 = _normalizing_transform(dst)
    a = (np.column_stack([src, np.ones(len(src))])) @ T1.T
    b = (np.column_stack([dst, np.ones(len(dst))])) @ T2.T
    rows = []
    for (x, y, w), (u, v, q) in zip(a, b):
        rows.append([0, 0, 0, -q * x, -q * y, -q * w, v * x, v * y, v * w])
        rows.append([q * x, q * y, q * w, 0, 0, 0, -u * x, -u * y, -u * w])
    _, _, Vt = np.linalg.svd(np.asarray(rows))
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(T2) @ Hn @ T1
    return H / np.linalg.norm(H)


def _split_correspondences(correspondences):
    if isinstance(correspondences, tuple) and len(correspondences) == 2:
        world, image = correspondences
        world = np.asarray(world, dtype=float)
        image = np.asarray(image, dtype=float)
    else:
        correspondences = list(correspondences)
        world = np.array([c.map_point for c in correspondences], dtype=float).reshape(-1, 3)
        image = np.array([c.image_point for c in correspondences], dtype=float).reshape(-1, 2)
    if world.ndim == 2 and world.shape[1] == 3:
        if np.any(np.abs(world[:, 2]) > 1e-9):
            raise ConfigError("ground correspondences must lie on z = 0")
        world = world[:, :2]
    return world, image


def reprojection_errors(pose, intrinsics, world_xy, image):
    world = np.column_stack([world_xy, np.zeros(len(world_xy))])
    return np.linalg.norm(project(pose, intrinsics, world) - image, axis=1)


def solve_pnp(correspondences, intrinsics, max_iter=100, tol=1e-12):
    """Camera pose from coplanar ground correspondences.

    Parameters
    ----------
    correspondences : iterable of GroundCorrespondence, or tuple (world, image)
        At least four non-collinear ground points with their pixels.
    intrinsics : CameraIntrinsics

    Returns
    -------
    CameraPose
        Pose minimizing the summed squared reprojection error, with
        ``rms_error`` set.
    """
    world, image = _split_correspondences(correspondences)
    n = len(world)
    if n < 4:
        raise PreconditionError(f"PnP needs at least 4 correspondences, got {n}")
    centered = world - world.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 1e-9 or sv[1] / sv[0] < 1e-6:
        raise DegenerateConfigurationError("ground points are collinear or coincident")

    H = estimate_homography(world, image)
    M = np.linalg.inv(intrinsics.K) @ H
    scale = 2.0 / (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1]))
    M = M * scale
    # the ground must be in front of the camera
    if M[2, 2] < 0:
        M = -M
    r1, r2, t = M[:, 0], M[:, 1], M[:, 2]
    R0 = _nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    t0 = t

    world3 = np.column_stack([world, np.zeros(n)])

    def residuals(params):
        R = _rodrigues(params[:3]) @ R0
        Xc = world3 @ R.T + params[3:]
        z = Xc[:, 2]
        cx, cy = intrinsics.principal_point
        u = intrinsics.focal_length_x * Xc[:, 0] / z + cx
        v = intrinsics.focal_length_y * Xc[:, 1] / z + cy
        return np.concatenate([u - image[:, 0], v - image[:, 1]])

    def fun(params):
        r = residuals(params)
        J = np.empty((len(r), 6))
        for i in range(6):
            h = 1e-7 * max(1.0, abs(params[i]))
            e = np.zeros(6)
            e[i] = h
            J[:, i] = (residuals(params + e) - residuals(params - e)) / (2 * h)
        return r, J

    res = levenberg_marquardt(fun, np.concatenate([np.zeros(3), t0]), max_iter=max_iter, xtol=tol)
    if not res.converged:
        raise SolverError(f"PnP refinement did not converge in {res.iterations} iterations", res.iterations)
    R = _nearest_rotation(_rodrigues(res.x[:3]) @ R0)
    rms = float(np.sqrt(2.0 * res.cost / n))
    return CameraPose(R, res.x[3:], rms_error=rms)


# ----------------------------------------------------------------- recalibration


@dataclass
class ReferencePointSet:
    """Ground reference points tracked through the video.

    ``tracks`` maps frame index to ``(pixels (N, 2), valid (N,))`` aligned
    with ``point_ids``.
    """

    point_ids: list
    anchor_pixels: np.ndarray
    world_points: np.ndarray
    tracks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.anchor_pixels = as_float_array(self.anchor_pixels, (None, 2), "anchor_pixels")
        self.world_points = as_float_array(self.world_points, (len(self.point_ids), 3), "world_points")
        if np.any(np.abs(self.world_points[:, 2]) > 1e-9):
            raise ConfigError("reference world points must lie on z = 0")
        if len(set(self.point_ids)) != len(self.point_ids):
            raise ConfigError("reference point ids must be unique")

    @classmethod
    def from_anchor(cls, point_ids, anchor_pixels, anchor_pose, intrinsics, tracks=None):
        """Assign world coordinates by back-projecting anchor-frame pixels."""
        g = back_project_to_ground(anchor_pose, intrinsics, np.asarray(anchor_pixels, dtype=float))
        g = np.atleast_2d(g)
        world = np.column_stack([g, np.zeros(len(g))])
        return cls(list(point_ids), anchor_pixels, world, dict(tracks or {}))

    def observations(self, frame_index):
        if frame_index not in self.tracks:
            n = len(self.point_ids)
            return np.zeros((n, 2)), np.zeros(n, dtype=bool)
        return self.tracks[frame_index]


def recalibrate(reference, frame_index, intrinsics, previous=None, reprojection_threshold=3.0):
    """Camera pose for one frame from tracked reference points.

    While the worst reprojection error exceeds ``reprojection_threshold``
    pixels, that point is dropped and the pose re-solved, down to four
    points. With fewer than four usable points the ``previous`` pose is
    returned with ``degraded=True``; without a previous pose this is an
    error.
    """
    pixels, valid = reference.observations(frame_index)
    valid = np.asarray(valid, dtype=bool)
    if valid.sum() < 4:
        if previous is None:
            raise PreconditionError(
                f"frame {frame_index}: {int(valid.sum())} valid reference points, need 4"
            )
        return replace(previous, degraded=True)
    world = reference.world_points[valid, :2]
    image = np.asarray(pixels, dtype=float)[valid]
    keep = np.ones(len(world), dtype=bool)
    try:
        pose = solve_pnp((world, image), intrinsics)
        while keep.sum() > 4:
            err = np.where(keep, reprojection_errors(pose, intrinsics, world, image), -np.inf)
            worst = int(np.argmax(err))
            if err[worst] <= reprojection_threshold:
                break
            keep[worst] = False
            pose = solve_pnp((world[keep], image[keep]), intrinsics)
    except (DegenerateConfigurationError, SolverError):
        if previous is None:
            raise
        return replace(previous, degraded=True)
    return pose


def recalibrate_sequence(reference, frames, intrinsics, reprojection_threshold=3.0):
    """Poses for ``frames`` in order, carrying the last good pose forward on failure."""
    poses = {}
    prev = None
    for f in sorted(frames):
        pose = recalibrate(reference, f, intrinsics, prev, reprojection_threshold)
        poses[f] = pose
        if not pose.degraded:
            prev = pose
    return poses


# ------------------------------------------------------------------------- files


@dataclass
class CalibrationConfig:
    """Anchor-frame calibration: intrinsics plus annotated map correspondences.

    Map coordinates are stored in map units and converted with ``map_scale``
    (meters per map unit).
    """

    intrinsics: CameraIntrinsics
    correspondences: list
    map_scale: float = 1.0
    anchor_frame: int = 0
    reprojection_threshold: float = 3.0

    def __post_init__(self):
        check_positive(self.map_scale, "map_scale")
        check_positive(self.reprojection_threshold, "reprojection_threshold")

    def ground_correspondences(self):
        return [
            GroundCorrespondence((c["map"][0] * self.map_scale, c["map"][1] * self.map_scale, 0.0), c["image"])
            for c in self.correspondences
        ]

    def solve_anchor_pose(self):
        return solve_pnp(self.ground_correspondences(), self.intrinsics)

    def to_dict(self):
        return {
            "intrinsics": self.intrinsics.to_dict(),
            "map_scale": self.map_scale,
            "anchor_frame": self.anchor_frame,
            "reprojection_threshold": self.reprojection_threshold,
            "correspondences": [
                {"point_id": c["point_id"], "map": list(c["map"]), "image": list(c["image"])}
                for c in self.correspondences
            ],
        }


def load_calibration(path):
    try:
        d = yaml.safe_load(Path(path).read_text())
        return CalibrationConfig(
            CameraIntrinsics.from_dict(d["intrinsics"]),
            [
                {"point_id": c["point_id"], "map": [float(v) for v in c["map"]], "image": [float(v) for v in c["image"]]}
                for c in d.get("correspondences", [])
            ],
            float(d.get("map_scale", 1.0)),
            int(d.get("anchor_frame", 0)),
            float(d.get("reprojection_threshold", 3.0)),
        )
    except (KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise ParseError(f"{path}: invalid calibration file ({exc})") from exc


def save_calibration(config, path):
    atomic_write_text(path, yaml.safe_dump(config.to_dict(), sort_keys=False))


def load_reference_tracks(path):
    """Read a reference-point track file.

    One JSON object per line:
    ``{"frame_index": int, "points": [{"point_id", "u", "v", "valid"}, ...]}``.
    Returns ``(point_ids, {frame: (pixels, valid)})`` with point ids in
    first-seen order.
    """
    import json

    raw = {}
    ids = []
    for lineno, line in read_lines(path):
        try:
            rec = json.loads(line)
            f = int(rec["frame_index"])
            pts = {}
            for p in rec["points"]:
                pid = p["point_id"]
                pts[pid] = (float(p["u"]), float(p["v"]), bool(p["valid"]))
                if pid not in ids:
                    ids.append(pid)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: malformed reference record ({exc})") from exc
        raw[f] = pts
    index = {pid: i for i, pid in enumerate(ids)}
    tracks = {}
    for f, pts in raw.items():
        px = np.zeros((len(ids), 2))
        valid = np.zeros(len(ids), dtype=bool)
        for pid, (u, v, ok) in pts.items():
            px[index[pid]] = (u, v)
            valid[index[pid]] = ok
        tracks[f] = (px, valid)
    return ids, tracks


def save_reference_tracks(point_ids, tracks, path):
    lines = []
    for f in sorted(tracks):
        px, valid = tracks[f]
        lines.append(
            dumps(
                {
                    "frame_index": int(f),
                    "points": [
                        {"point_id": pid, "u": float(px[i, 0]), "v": float(px[i, 1]), "valid": bool(valid[i])}
                        for i, pid in enumerate(point_ids)
                    ],
                }
            )
            + "\n"
        )
    atomic_write_text(path, "".join(lines))
