"""Shared builders for the test suite: rendered detections and simple trajectories."""

import numpy as np

from aerotrack.analytics import Trajectory
from aerotrack.camera import CameraIntrinsics, CameraPose, project
from aerotrack.keypoints import DETECTABLE, KeypointDetection
from aerotrack.synth import SLOT_NORMALS, VISIBILITY_ANGLE

ALTITUDE = 120.0
GSD = 0.035


def default_intrinsics():
    return CameraIntrinsics.from_gsd(ALTITUDE, GSD)


def oblique_pose(center=(0.0, -20.0, ALTITUDE), yaw=0.0, tilt=np.deg2rad(10.0)):
    return CameraPose.from_center(center, yaw, tilt)


def posed_keypoints(prior, b, x, y, psi):
    c, s = np.cos(psi), np.sin(psi)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return prior.generate(b) @ Rz.T + (x, y, 0.0), Rz


def render_detection(prior, pose, intr, x, y, psi, b, sigma=0.0, rng=None, frame_index=0, detection_id=0, visible=None):
    """Project a posed shape into a detection with the self-occlusion visibility model."""
    P, Rz = posed_keypoints(prior, b, x, y, psi)
    uv = project(pose, intr, P)
    if visible is None:
        to_cam = pose.center - P
        to_cam /= np.linalg.norm(to_cam, axis=1)[:, None]
        facing = np.einsum("ij,ij->i", SLOT_NORMALS @ Rz.T, to_cam) >= np.cos(VISIBILITY_ANGLE)
        visible = DETECTABLE & facing
    bbox = np.concatenate([uv.min(axis=0), uv.max(axis=0)])
    if sigma > 0:
        uv = uv + rng.normal(0.0, sigma, uv.shape)
    kp = np.where(np.asarray(visible)[:, None], uv, 0.0)
    return KeypointDetection(frame_index, detection_id, bbox, kp, np.asarray(visible, dtype=int), "unknown", 0.0, 1.0)


def straight_trajectory(track_id, t, x0, y0, psi, v, length=4.5, width=1.8, height=1.5, vehicle_type="sedan"):
    """Constant-speed straight-line trajectory sampled at times ``t``."""
    t = np.asarray(t, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), t.shape)
    s = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])
    return Trajectory(
        track_id, vehicle_type, t, x0 + s * np.cos(psi), y0 + s * np.sin(psi), np.full(len(t), psi), v,
        length, width, height,
    )


def path_trajectory(track_id, points, speed, dt=0.1, length=4.5, width=1.8, vehicle_type="sedan"):
    """Trajectory following a polyline at constant speed, heading along each leg."""
    pts = np.asarray(points, dtype=float)
    legs = np.diff(pts, axis=0)
    lens = np.linalg.norm(legs, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    s = np.arange(0.0, cum[-1] + 1e-9, speed * dt)
    i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(legs) - 1)
    w = (s - cum[i]) / lens[i]
    xy = pts[i] + w[:, None] * legs[i]
    psi = np.arctan2(legs[i, 1], legs[i, 0])
    t = s / speed
    return Trajectory(track_id, vehicle_type, t, xy[:, 0], xy[:, 1], psi, np.full(len(t), speed), length, width, 1.5)
