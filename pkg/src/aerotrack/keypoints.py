"""The 33-slot vehicle keypoint schema and per-frame detection files.

Within every four-point group the slot order is rear-left, rear-right,
front-left, front-right; within every two-point group it is left, right.
The body frame has ``x`` forward, ``y`` left and ``z`` up.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, dumps, read_lines
from .exceptions import ParseError, ValidationError

N_KEYPOINTS = 33

# (first id, last id, detectable, description)
KEYPOINT_GROUPS = (
    (0, 3, True, "corners of roof top"),
    (4, 7, True, "corners of front and rear windshields"),
    (8, 11, True, "centers of front and rear lights"),
    (12, 15, False, "corners of front and rear bumpers"),
    (16, 19, False, "centers of wheels"),
    (20, 23, False, "corners of chassis bottom surface"),
    (24, 25, True, "outermost corners of side mirrors"),
    (26, 27, False, "corners of the front door windows"),
    (28, 31, True, "wheel-ground contact points"),
    (32, 32, True, "center of the brand logo in the front"),
)

DETECTABLE = np.zeros(N_KEYPOINTS, dtype=bool)
for _lo, _hi, _det, _ in KEYPOINT_GROUPS:
    DETECTABLE[_lo : _hi + 1] = _det
DETECTABLE_IDS = np.flatnonzero(DETECTABLE)

QUAD_GROUPS = tuple(tuple(range(lo, hi + 1)) for lo, hi, _, _ in KEYPOINT_GROUPS if hi - lo == 3)
PAIR_GROUPS = tuple((lo, hi) for lo, hi, _, _ in KEYPOINT_GROUPS if hi - lo == 1)

# left/right mirror pairs
SYMMETRIC_PAIRS = tuple(
    [(q[0], q[1]) for q in QUAD_GROUPS] + [(q[2], q[3]) for q in QUAD_GROUPS] + list(PAIR_GROUPS)
)

# (rear point, front point) for every detectable four-point group
FORWARD_PAIRS = ((0, 2), (1, 3), (4, 6), (5, 7), (8, 10), (9, 11), (28, 30), (29, 31))

WHEEL_CENTERS = (16, 17, 18, 19)
WHEEL_CONTACTS = (28, 29, 30, 31)

KEYPOINT_NAMES = []
for _lo, _hi, _, _desc in KEYPOINT_GROUPS:
    if _hi - _lo == 3:
        KEYPOINT_NAMES += [f"{_desc}: {c}" for c in ("rear-left", "rear-right", "front-left", "front-right")]
    elif _hi - _lo == 1:
        KEYPOINT_NAMES += [f"{_desc}: {c}" for c in ("left", "right")]
    else:
        KEYPOINT_NAMES.append(_desc)
KEYPOINT_NAMES = tuple(KEYPOINT_NAMES)


@dataclass(frozen=True)
class KeypointSchema:
    """Read-only view of the keypoint definitions."""

    names: tuple = KEYPOINT_NAMES
    detectable: tuple = tuple(bool(d) for d in DETECTABLE)
    symmetric_pairs: tuple = SYMMETRIC_PAIRS
    quad_groups: tuple = QUAD_GROUPS
    forward_pairs: tuple = FORWARD_PAIRS

    @property
    def n_slots(self):
        return len(self.names)

    @property
    def n_detectable(self):
        return sum(self.detectable)


SCHEMA = KeypointSchema()


@dataclass
class KeypointDetection:
    """One detected vehicle in one frame.

    ``keypoints`` is a ``(33, 2)`` pixel array and ``visibility`` a ``(33,)``
    array of 0/1 flags. ``bbox`` is ``(u_min, v_min, u_max, v_max)``.
    """

    frame_index: int
    detection_id: int
    bbox: np.ndarray
    keypoints: np.ndarray
    visibility: np.ndarray
    category: str = "unknown"
    category_confidence: float = 0.0
    score: float = 1.0

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=float).reshape(4)
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(N_KEYPOINTS, 2)
        self.visibility = np.asarray(self.visibility, dtype=np.int8).reshape(N_KEYPOINTS)

    @property
    def visible(self):
        return self.visibility.astype(bool)

    @property
    def n_visible(self):
        return int(self.visibility.sum())

    @property
    def bbox_center(self):
        return np.array([(self.bbox[0] + self.bbox[2]) / 2.0, (self.bbox[1] + self.bbox[3]) / 2.0])

    def validate(self, image_size=None):
        where = f"frame {self.frame_index}, detection {self.detection_id}"
        if not np.all(np.isin(self.visibility, (0, 1))):
            raise ValidationError(f"{where}: visibility must be 0 or 1")
        bad = np.flatnonzero(self.visible & ~DETECTABLE)
        if bad.size:
            raise ValidationError(f"{where}: visibility set on non-detectable slot(s) {bad.tolist()}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"{where}: score {self.score} outside [0, 1]")
        if not 0.0 <= self.category_confidence <= 1.0:
            raise ValidationError(f"{where}: category confidence outside [0, 1]")
        if not np.all(np.isfinite(self.bbox)) or self.bbox[2] < self.bbox[0] or self.bbox[3] < self.bbox[1]:
            raise ValidationError(f"{where}: invalid bounding box")
        vis = self.keypoints[self.visible]
        if not np.all(np.isfinite(vis)):
            raise ValidationError(f"{where}: non-finite visible keypoint")
        if image_size is not None and len(vis):
            w, h = image_size
            lo = np.array([-0.1 * w, -0.1 * h])
            hi = np.array([1.1 * w, 1.1 * h])
            if np.any(vis < lo) or np.any(vis > hi):
                raise ValidationError(f"{where}: visible keypoint outside the image bounds")

    def to_dict(self):
        return {
            "detection_id": int(self.detection_id),
            "bbox": [float(v) for v in self.bbox],
            "category": {"label": self.category, "confidence": float(self.category_confidence)},
            "score": float(self.score),
            "keypoints": [
                [float(u), float(v), int(a)] for (u, v), a in zip(self.keypoints, self.visibility)
            ],
        }


@dataclass
class FrameDetections:
    frame_index: int
    timestamp: float
    detections: list = field(default_factory=list)

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def to_dict(self):
        return {
            "frame_index": int(self.frame_index),
            "timestamp": float(self.timestamp),
            "detections": [d.to_dict() for d in self.detections],
        }


def _parse_detection(frame_index, raw):
    kps = raw["keypoints"]
    if len(kps) != N_KEYPOINTS:
        raise ValueError(f"expected {N_KEYPOINTS} keypoints, got {len(kps)}")
    arr = np.array([[float(k[0]), float(k[1])] for k in kps])
    vis = []
    for k in kps:
        a = k[2]
        if a not in (0, 1) or isinstance(a, bool):
            raise ValueError(f"visibility must be 0 or 1, got {a!r}")
        vis.append(int(a))
    bbox = [float(v) for v in raw["bbox"]]
    if len(bbox) != 4:
        raise ValueError("bbox must have 4 values")
    cat = raw.get("category") or {}
    if not isinstance(cat, dict):
        raise ValueError("category must be an object with a label")
    return KeypointDetection(
        frame_index=frame_index,
        detection_id=int(raw["detection_id"]),
        bbox=bbox,
        keypoints=arr,
        visibility=vis,
        category=str(cat.get("label", "unknown")),
        category_confidence=float(cat.get("confidence", 0.0)),
        score=float(raw.get("score", 1.0)),
    )


def parse_frame(record, frame_rate=None, image_size=None):
    """Build a validated :class:`FrameDetections` from a decoded JSON object."""
    f = record.get("frame_index")
    if not isinstance(f, int) or isinstance(f, bool) or f < 0:
        raise ParseError(f"record without a valid frame_index (got {f!r})")
    ts = record.get("timestamp")
    if ts is None:
        if frame_rate is None:
            raise ParseError(f"frame {f}: no timestamp and no frame rate configured")
        ts = f / float(frame_rate)
    else:
        try:
            if isinstance(ts, bool) or not np.isfinite(float(ts)) or isinstance(ts, str):
                raise ValueError
        except (TypeError, ValueError, OverflowError):
            raise ParseError(f"frame {f}: timestamp must be a finite number (got {ts!r})") from None
    raw_dets = record.get("detections", [])
    if not isinstance(raw_dets, list):
        raise ParseError(f"frame {f}: detections must be a list")
    dets = []
    for i, raw in enumerate(raw_dets):
        try:
            det = _parse_detection(f, raw)
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            did = raw.get("detection_id", f"#{i}") if isinstance(raw, dict) else f"#{i}"
            raise ParseError(f"frame {f}, detection {did}: {exc}") from exc
        det.validate(image_size)
        dets.append(det)
    ids = [d.detection_id for d in dets]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"frame {f}: duplicate detection ids")
    return FrameDetections(f, float(ts), dets)


def load_detections(path, frame_rate=None, image_size=None):
    """Read a line-delimited detection file.

    Parameters
    ----------
    path : path-like
        One JSON object per line, one line per frame.
    frame_rate : float, optional
        Used to derive timestamps for frames that omit them.
    image_size : (int, int), optional
        When given, visible keypoints are checked against the image bounds
        inflated by 10%.

    Returns
    -------
    list of FrameDetections
        Sorted by frame index, with strictly increasing timestamps.
    """
    frames = []
    for lineno, line in read_lines(path):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if not isinstance(rec, dict):
            raise ParseError(f"{path}:{lineno}: expected an object")
        frames.append(parse_frame(rec, frame_rate, image_size))
    frames.sort(key=lambda fr: fr.frame_index)
    for a, b in zip(frames, frames[1:]):
        if b.frame_index == a.frame_index:
            raise ValidationError(f"duplicate frame {a.frame_index}")
        if not b.timestamp > a.timestamp:
            raise ValidationError(f"timestamps not increasing at frame {b.frame_index}")
    return frames


def save_detections(frames, path):
    atomic_write_text(path, "".join(dumps(fr.to_dict()) + "\n" for fr in frames))


def schema_path():
    return Path(__file__).with_name("data") / "detections.schema.json"


def forward_direction_vectors(detection):
    """Pixel-space vectors from rear to front for every fully visible forward pair."""
    vis = detection.visible
    kp = detection.keypoints
    return [kp[front] - kp[rear] for rear, front in FORWARD_PAIRS if vis[rear] and vis[front]]
