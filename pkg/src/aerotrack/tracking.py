"""Tracking by detection: IoU association and track lifecycle."""

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import check_open_unit
from .camera import back_project_to_ground
from .exceptions import AerotrackError, ConfigError

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
LOST = "lost"
FINISHED = "finished"


def iou(box_a, box_b):
    """Intersection over union of two ``(u_min, v_min, u_max, v_max)`` boxes."""
    a = np.asarray(box_a, dtype=float)
    b = np.asarray(box_b, dtype=float)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def iou_matrix(boxes_a, boxes_b):
    A = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    B = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def greedy_matcher(scores, threshold):
    """Pairs ``(row, col)`` picked by descending score above ``threshold``.

    Rows are assumed ordered by ascending track id, so equal scores go to the
    lower track id (then the earlier detection).
    """
    rows, cols = np.nonzero(scores > threshold)
    order = sorted(zip(-scores[rows, cols], rows, cols))
    used_r, used_c, pairs = set(), set(), []
    for _, r, c in order:
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        pairs.append((int(r), int(c)))
    return sorted(pairs)


def optimal_matcher(scores, threshold):
    """Maximum-total-score assignment restricted to pairs above ``threshold``."""
    if scores.size == 0:
        return []
    cost = np.where(scores > threshold, -scores, 1e6)
    r, c = linear_sum_assignment(cost)
    return sorted((int(i), int(j)) for i, j in zip(r, c) if scores[i, j] > threshold)


@dataclass
class AssociationConfig:
    iou_threshold: float = 0.3
    max_misses: int = 10
    min_hits: int = 5
    map_gate: bool = True

    def __post_init__(self):
        check_open_unit(self.iou_threshold, "iou_threshold")
        if self.max_misses < 0 or self.min_hits < 1:
            raise ConfigError("max_misses must be >= 0 and min_hits >= 1")


@dataclass
class TrackRecord:
    frame_index: int
    timestamp: float
    detection_id: int = None
    bbox: np.ndarray = None
    fit: object = None
    ekf: object = None
    error: str = None


@dataclass
class Track:
    track_id: int
    state: str = TENTATIVE
    history: list = field(default_factory=list)
    hits: int = 0
    misses: int = 0
    category: str = "unknown"
    filter: object = None
    ever_confirmed: bool = False

    @property
    def confirmed(self):
        return self.ever_confirmed

    @property
    def active(self):
        return self.state in (TENTATIVE, CONFIRMED)

    @property
    def last_detection(self):
        for h in reversed(self.history):
            if h.bbox is not None:
                return h
        return None

    def predicted_box(self, frame_index):
        """Last box shifted by the box velocity of the two latest detections."""
        seen = [h for h in self.history if h.bbox is not None][-2:]
        last = seen[-1]
        if len(seen) < 2:
            return last.bbox
        vel = (last.bbox - seen[0].bbox) / max(last.frame_index - seen[0].frame_index, 1)
        return last.bbox + vel * (frame_index - last.frame_index)


def associate(tracks, frame, cfg=None, matcher=greedy_matcher):
    """Match active tracks to the detections of ``frame``.

    Returns
    -------
    matches : list of (Track, KeypointDetection)
    unmatched_detections : list of KeypointDetection
    unmatched_tracks : list of Track
    """
    cfg = cfg or AssociationConfig()
    tracks = sorted((t for t in tracks if t.active), key=lambda t: t.track_id)
    ids = [t.track_id for t in tracks]
    if len(ids) != len(set(ids)):
        raise AerotrackError("duplicate active track ids")
    dets = list(frame.detections if hasattr(frame, "detections") else frame)
    if not tracks or not dets:
        return [], dets, tracks
    boxes_t = np.array([t.predicted_box(frame.frame_index) for t in tracks])
    boxes_d = np.array([d.bbox for d in dets])
    pairs = matcher(iou_matrix(boxes_t, boxes_d), cfg.iou_threshold)
    mt = {r for r, _ in pairs}
    md = {c for _, c in pairs}
    matches = [(tracks[r], dets[c]) for r, c in pairs]
    return (
        matches,
        [d for j, d in enumerate(dets) if j not in md],
        [t for i, t in enumerate(tracks) if i not in mt],
    )


def on_traversable_ground(detection, pose, intrinsics, semantic_map):
    try:
        g = back_project_to_ground(pose, intrinsics, detection.bbox_center)
    except AerotrackError:
        return False
    return semantic_map.is_traversable(g)


class Tracker:
    """Frame-sequential track table (single writer)."""

    def __init__(self, cfg=None, semantic_map=None, matcher=greedy_matcher):
        self.cfg = cfg or AssociationConfig()
        self.semantic_map = semantic_map
        self.matcher = matcher
        self.tracks = []
        self.discarded = []
        self.gated = []
        self._next_id = 1

    @property
    def active_tracks(self):
        return [t for t in self.tracks if t.active]

    def step(self, frame, pose=None, intrinsics=None):
        """Process one frame; returns ``(track, detection)`` for every associated detection.

        Detections whose back-projected box center falls outside the
        traversable map area are dropped first (when a map, pose and
        intrinsics are available and gating is enabled).
        """
        dets = list(frame.detections)
        if self.cfg.map_gate and self.semantic_map is not None and pose is not None:
            kept = []
            for d in dets:
                if on_traversable_ground(d, pose, intrinsics, self.semantic_map):
                    kept.append(d)
                else:
                    self.gated.append((frame.frame_index, d.detection_id))
            dets = kept

        view = SimpleNamespace(frame_index=frame.frame_index, detections=dets)
        matches, new_dets, missed = associate(self.tracks, view, self.cfg, self.matcher)

        for track, det in matches:
            track.hits += 1
            track.misses = 0
            track.history.append(TrackRecord(frame.frame_index, frame.timestamp, det.detection_id, det.bbox))
            if track.state == TENTATIVE and track.hits >= self.cfg.min_hits:
                track.state = CONFIRMED
                track.ever_confirmed = True
        for track in missed:
            track.hits = 0
            track.misses += 1
            if track.state == TENTATIVE:
                track.state = FINISHED
                self.discarded.append(track)
            elif track.misses > self.cfg.max_misses:
                track.state = LOST
            else:
                track.history.append(TrackRecord(frame.frame_index, frame.timestamp))
        self.tracks = [t for t in self.tracks if not (t.state == FINISHED and not t.ever_confirmed)]
        for det in new_dets:
            track = Track(self._next_id, category=det.category)
            self._next_id += 1
            track.hits = 1
            track.history.append(TrackRecord(frame.frame_index, frame.timestamp, det.detection_id, det.bbox))
            if self.cfg.min_hits <= 1:
                track.state = CONFIRMED
                track.ever_confirmed = True
            self.tracks.append(track)
            matches.append((track, det))
        return matches

    def finish(self):
        """Close the sequence: every remaining track becomes finished."""
        for t in self.tracks:
            t.state = FINISHED
        return [t for t in self.tracks if t.ever_confirmed]

    def confirmed_tracks(self):
        return [t for t in self.tracks if t.ever_confirmed]


def step_tracks(tracker, frame, pose=None, intrinsics=None):
    return tracker.step(frame, pose, intrinsics)
