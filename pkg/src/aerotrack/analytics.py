"""Trajectory datasets and downstream traffic analytics.

Covers lane-pattern counting, per-lane speed statistics, time-to-collision,
post-encroachment time and rule-based incident search.
"""

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon

from ._io import atomic_write_text, dumps, read_lines
from ._validation import check_positive, wrap_angle
from .exceptions import ConfigError, ParseError, PreconditionError, QueryError, ValidationError
from .semantic_map import MapSegment, traverse_sequence

TRAJECTORY_FORMAT = "aerotrack-trajectories"
TRAJECTORY_VERSION = 1
TRAJECTORY_HEADER = {
    "format": TRAJECTORY_FORMAT,
    "version": TRAJECTORY_VERSION,
    "units": {
        "timestamp": "s",
        "x": "m",
        "y": "m",
        "psi": "rad",
        "v": "m/s",
        "length": "m",
        "width": "m",
        "height": "m",
    },
    "ground_frame": "local metric ground plane z=0; x east, y north; psi counter-clockwise from +x",
}
RECORD_FIELDS = ("track_id", "frame_index", "timestamp", "x", "y", "psi", "v", "length", "width", "height", "vehicle_type")


@dataclass
class Trajectory:
    track_id: int
    vehicle_type: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    length: np.ndarray
    width: np.ndarray
    height: np.ndarray
    frame_index: np.ndarray = None

    def __post_init__(self):
        for name in ("t", "x", "y", "psi", "v"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.t)
        for name in ("length", "width", "height"):
            val = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, np.full(n, float(val)) if val.ndim == 0 else val)
        if self.frame_index is None:
            self.frame_index = np.arange(n)
        self.frame_index = np.asarray(self.frame_index, dtype=int)
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValidationError(f"track {self.track_id}: timestamps must be strictly increasing")
        if np.any(self.v < 0):
            raise ValidationError(f"track {self.track_id}: speeds must be non-negative")

    def __len__(self):
        return len(self.t)

    @property
    def xy(self):
        return np.column_stack([self.x, self.y])

    def defined_at(self, t):
        return len(self.t) > 0 and self.t[0] <= t <= self.t[-1]

    def state_at(self, t):
        """Linear interpolation of position, heading, speed and size at time ``t``."""
        if not self.defined_at(t):
            raise PreconditionError(f"track {self.track_id} is not defined at t={t}")
        i = int(np.searchsorted(self.t, t, side="right") - 1)
        i = min(max(i, 0), len(self.t) - 1)
        if i == len(self.t) - 1 or self.t[i] == t:
            w, j = 0.0, i
        else:
            j = i + 1
            w = (t - self.t[i]) / (self.t[j] - self.t[i])

        def lerp(a):
            return float(a[i] + w * (a[j] - a[i]))

        dpsi = wrap_angle(self.psi[j] - self.psi[i])
        return {
            "t": float(t),
            "x": lerp(self.x),
            "y": lerp(self.y),
            "psi": float(wrap_angle(self.psi[i] + w * dpsi)),
            "v": lerp(self.v),
            "length": lerp(self.length),
            "width": lerp(self.width),
        }

    def footprint(self, t):
        s = self.state_at(t)
        return footprint_polygon(s["x"], s["y"], s["psi"], s["length"], s["width"])

    def translated(self, dx, dy):
        return Trajectory(
            self.track_id, self.vehicle_type, self.t, self.x + dx, self.y + dy, self.psi, self.v,
            self.length, self.width, self.height, self.frame_index,
        )

    def to_records(self):
        return [
            {
                "track_id": int(self.track_id),
                "frame_index": int(self.frame_index[i]),
                "timestamp": float(self.t[i]),
                "x": float(self.x[i]),
                "y": float(self.y[i]),
                "psi": float(self.psi[i]),
                "v": float(self.v[i]),
                "length": float(self.length[i]),
                "width": float(self.width[i]),
                "height": float(self.height[i]),
                "vehicle_type": str(self.vehicle_type),
            }
            for i in range(len(self.t))
        ]

    @classmethod
    def from_records(cls, records):
        records = sorted(records, key=lambda r: r["timestamp"])
        if not records:
            raise ValidationError("a trajectory needs at least one record")
        col = {k: [r[k] for r in records] for k in RECORD_FIELDS}
        return cls(
            int(col["track_id"][0]), str(col["vehicle_type"][-1]), col["timestamp"], col["x"], col["y"],
            col["psi"], col["v"], col["length"], col["width"], col["height"], col["frame_index"],
        )


def footprint_polygon(x, y, psi, length, width):
    c, s = np.cos(psi), np.sin(psi)
    hl, hw = length / 2.0, width / 2.0
    corners = np.array([(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)])
    R = np.array([[c, -s], [s, c]])
    return Polygon(corners @ R.T + (x, y))


def dataset_from_records(records):
    by_track = defaultdict(list)
    for r in records:
        by_track[int(r["track_id"])].append(r)
    return [Trajectory.from_records(by_track[k]) for k in sorted(by_track)]


def write_trajectories(dataset_or_records, path):
    """Write a trajectory file: a header line then one record per line."""
    items = list(dataset_or_records)
    if items and isinstance(items[0], Trajectory):
        records = [r for traj in items for r in traj.to_records()]
    else:
        records = items
    records = sorted(records, key=lambda r: (r["track_id"], r["frame_index"]))
    lines = [dumps(TRAJECTORY_HEADER)] + [dumps({k: r[k] for k in RECORD_FIELDS}) for r in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_trajectories(path):
    """Read a trajectory file into a list of :class:`Trajectory` sorted by track id."""
    records = []
    header = None
    for lineno, line in read_lines(path):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if header is None:
            if rec.get("format") != TRAJECTORY_FORMAT:
                raise ParseError(f"{path}: missing trajectory header")
            if rec.get("version") != TRAJECTORY_VERSION:
                raise ParseError(f"{path}: unsupported version {rec.get('version')}")
            header = rec
            continue
        missing = [k for k in RECORD_FIELDS if k not in rec]
        if missing:
            raise ParseError(f"{path}:{lineno}: missing fields {missing}")
        records.append(rec)
    return dataset_from_records(records)


# --------------------------------------------------------------- counting


@dataclass
class CountQuery:
    """Ordered segment predicates plus grouping.

    Each pattern element is a segment id or a collection of ids (any of
    which matches). ``group_by`` keys and ``split_by`` are drawn from
    ``"entry"`` (segment matched by the first predicate), ``"exit"`` (by the
    last) and ``"type"`` (vehicle type). Percentages are computed over
    ``split_by`` values within each group.
    """

    pattern: list
    group_by: tuple = ()
    split_by: str = None

    def __post_init__(self):
        if not self.pattern:
            raise ConfigError("a count pattern must not be empty")
        self.pattern = [frozenset([p]) if isinstance(p, str) else frozenset(p) for p in self.pattern]
        keys = set(self.group_by) | ({self.split_by} if self.split_by else set())
        bad = keys - {"entry", "exit", "type"}
        if bad:
            raise ConfigError(f"unknown grouping keys {sorted(bad)}")


@dataclass
class CountResult:
    counts: dict = field(default_factory=dict)  # group -> split -> count
    percentages: dict = field(default_factory=dict)
    matched: int = 0
    total: int = 0

    def rows(self):
        out = []
        for g in sorted(self.counts, key=str):
            for s in sorted(self.counts[g], key=str):
                out.append((g, s, self.counts[g][s], self.percentages[g][s]))
        return out


def match_pattern(sequence, pattern):
    """Leftmost positions in ``sequence`` matching ``pattern`` as a subsequence, or ``None``."""
    pos = []
    i = 0
    for pred in pattern:
        while i < len(sequence) and sequence[i] not in pred:
            i += 1
        if i == len(sequence):
            return None
        pos.append(i)
        i += 1
    return pos


def count_patterns(dataset, semantic_map, query):
    """Count trajectories whose segment sequence contains the query pattern."""
    for pred in query.pattern:
        unknown = [p for p in pred if p not in semantic_map]
        if unknown:
            raise QueryError(f"unknown segment id(s) in pattern: {sorted(unknown)}")
    res = CountResult(total=len(dataset))
    for traj in dataset:
        seq = traverse_sequence(semantic_map, traj)
        pos = match_pattern(seq, query.pattern)
        if pos is None:
            continue
        attrs = {"entry": seq[pos[0]], "exit": seq[pos[-1]], "type": traj.vehicle_type}
        g = tuple(attrs[k] for k in query.group_by)
        s = attrs[query.split_by] if query.split_by else "all"
        res.counts.setdefault(g, {}).setdefault(s, 0)
        res.counts[g][s] += 1
        res.matched += 1
    for g, splits in res.counts.items():
        n = sum(splits.values())
        res.percentages[g] = {s: 100.0 * c / n for s, c in splits.items()}
    return res


# -------------------------------------------------------------------- TTC


def bumper_gap(lead_state, follow_state, direction):
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    d = np.array([lead_state["x"] - follow_state["x"], lead_state["y"] - follow_state["y"]])
    return float(d @ u) - (lead_state["length"] + follow_state["length"]) / 2.0


def ttc(lead, follow, t, direction=None):
    """Time to collision of ``follow`` into ``lead`` at time ``t``.

    The gap is bumper to bumper along ``direction`` (default: the
    follower's heading). Returns ``None`` when the follower is not closing
    in, and ``0.0`` when the footprints already overlap along the lane.
    """
    a = lead.state_at(t)
    b = follow.state_at(t)
    if direction is None:
        direction = (np.cos(b["psi"]), np.sin(b["psi"]))
    gap = bumper_gap(a, b, direction)
    if gap <= 0:
        return 0.0
    closing = b["v"] - a["v"]
    if closing <= 0:
        return None
    return gap / closing


def ttc_series(lead, follow, times=None, direction=None):
    """``(t, ttc, collision)`` over the common time span (default: follower samples)."""
    lo, hi = max(lead.t[0], follow.t[0]), min(lead.t[-1], follow.t[-1])
    if times is None:
        times = follow.t[(follow.t >= lo) & (follow.t <= hi)]
    out = []
    for t in times:
        a, b = lead.state_at(t), follow.state_at(t)
        d = direction if direction is not None else (np.cos(b["psi"]), np.sin(b["psi"]))
        collision = bumper_gap(a, b, d) <= 0
        out.append((float(t), ttc(lead, follow, t, d), collision))
    return out


def adjacent_pairs(dataset, semantic_map, t, horizon=50.0):
    """Leader/follower pairs sharing a directed lane segment at time ``t``.

    Each follower is paired with the nearest vehicle ahead of it along the
    lane direction within ``horizon`` meters. Returns
    ``(lead_id, follow_id, segment_id)`` tuples.
    """
    present = [tr for tr in dataset if tr.defined_at(t)]
    states = {tr.track_id: tr.state_at(t) for tr in present}
    lanes = {}
    for tid, s in states.items():
        sid = semantic_map.locate((s["x"], s["y"]))
        if sid is not None and semantic_map[sid].direction is not None:
            lanes[tid] = sid
    pairs = []
    for f, sid in sorted(lanes.items()):
        u = np.asarray(semantic_map[sid].direction)
        best = None
        for l_id, lsid in lanes.items():
            if l_id == f or lsid != sid:
                continue
            ahead = (states[l_id]["x"] - states[f]["x"]) * u[0] + (states[l_id]["y"] - states[f]["y"]) * u[1]
            if 0 < ahead <= horizon and (best is None or ahead < best[0]):
                best = (ahead, l_id)
        if best is not None:
            pairs.append((best[1], f, sid))
    return pairs


# -------------------------------------------------------------------- PET


def _zone_geometry(zone):
    if isinstance(zone, MapSegment):
        return zone.geometry
    if isinstance(zone, shapely.Geometry):
        return zone
    return Polygon(np.asarray(zone, dtype=float))


def _refine(traj, zone, t0, t1, inside_at_t0, resolution):
    """Bisect the occupancy switch in ``(t0, t1]`` to ``resolution`` seconds."""
    while t1 - t0 > resolution:
        tm = 0.5 * (t0 + t1)
        if traj.footprint(tm).intersects(zone) == inside_at_t0:
            t0 = tm
        else:
            t1 = tm
    return t1


def occupancy_intervals(traj, zone, resolution=1e-3):
    """Intervals ``[(enter, exit), ...]`` during which the footprint overlaps ``zone``.

    ``enter`` is ``None`` if the trajectory starts inside; ``exit`` is
    ``None`` if it ends inside.
    """
    geom = _zone_geometry(zone)
    shapely.prepare(geom)
    occ = [traj.footprint(t).intersects(geom) for t in traj.t]
    out = []
    start = None
    open_ = bool(occ and occ[0])
    for i in range(1, len(occ)):
        if occ[i] != occ[i - 1]:
            ts = float(_refine(traj, geom, traj.t[i - 1], traj.t[i], occ[i - 1], resolution))
            if occ[i]:
                start, open_ = ts, True
            else:
                out.append((start, ts))
                open_ = False
    if open_:
        out.append((start, None))
    return out


def pet_detail(first, second, zone, resolution=1e-3):
    """PET with diagnostics: ``{"pet", "first_exit", "second_entry", "conflict"}``."""
    a = occupancy_intervals(first, zone, resolution)
    b = occupancy_intervals(second, zone, resolution)
    out = {"pet": None, "first_exit": None, "second_entry": None, "conflict": False}
    if not a or not b:
        return out
    first_exit = a[-1][1]
    second_entry = b[0][0]
    out["first_exit"], out["second_entry"] = first_exit, second_entry
    if first_exit is None or second_entry is None:
        out["conflict"] = first_exit is None and second_entry is None
        return out
    if second_entry < first_exit:
        # overlapping occupancy is a conflict; entering before the first vehicle is the reverse order
        first_entry = a[0][0]
        out["conflict"] = first_entry is None or second_entry >= first_entry
        return out
    out["pet"] = second_entry - first_exit
    return out


def pet(first, second, zone, resolution=1e-3):
    """Post-encroachment time: ``second`` first entering minus ``first`` last leaving."""
    return pet_detail(first, second, zone, resolution)["pet"]


# --------------------------------------------------------------- incidents

INCIDENT_KINDS = ("area-violation", "pet-below-threshold", "acceleration-above-threshold", "speed-above-limit")


@dataclass
class IncidentRule:
    kind: str
    zone: str = None
    threshold: float = None
    smoothing_window: int = 5

    def __post_init__(self):
        if self.kind not in INCIDENT_KINDS:
            raise ConfigError(f"unknown incident kind {self.kind!r}")
        if self.threshold is not None:
            self.threshold = check_positive(self.threshold, f"{self.kind} threshold")
        if self.kind in ("area-violation", "pet-below-threshold") and self.zone is None:
            raise ConfigError(f"{self.kind} requires a zone")
        if self.kind in ("pet-below-threshold", "acceleration-above-threshold") and self.threshold is None:
            raise ConfigError(f"{self.kind} requires a threshold")
        if self.smoothing_window < 1:
            raise ConfigError("smoothing_window must be >= 1")


@dataclass
class Incident:
    kind: str
    track_ids: tuple
    t_start: float
    t_end: float
    peak: float
    zone: str = None

    def to_dict(self):
        return {
            "kind": self.kind,
            "track_ids": list(self.track_ids),
            "t_start": self.t_start,
            "t_end": self.t_end,
            "peak": self.peak,
            "zone": self.zone,
        }


def _spans(mask):
    """Index ranges ``[i, j]`` of consecutive ``True`` runs."""
    out = []
    start = None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        elif not m and start is not None:
            out.append((start, i - 1))
            start = None
    if start is not None:
        out.append((start, len(mask) - 1))
    return out


def smoothed(values, window):
    """Centered moving average with the window shrinking at the ends."""
    v = np.asarray(values, dtype=float)
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(len(v))
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, len(v))
    return (c[hi] - c[lo]) / (hi - lo)


def acceleration(traj, window=5):
    """Central-difference acceleration of the smoothed speed."""
    if len(traj) < 2:
        return np.zeros(len(traj))
    return np.gradient(smoothed(traj.v, window), traj.t)


def _validate_rules(rules, semantic_map):
    for r in rules:
        if r.zone is not None and r.zone not in semantic_map:
            raise QueryError(f"rule {r.kind}: unknown zone {r.zone!r}")


def detect_incidents(dataset, semantic_map, rules):
    """One :class:`Incident` per contiguous rule violation, ordered by rule then track."""
    _validate_rules(rules, semantic_map)
    out = []
    for rule in rules:
        if rule.kind == "area-violation":
            zone = semantic_map[rule.zone].geometry
            shapely.prepare(zone)
            for tr in dataset:
                pts = shapely.points(tr.x, tr.y)
                inside = shapely.covers(zone, pts)
                depth = shapely.distance(zone.exterior, pts)
                for i, j in _spans(inside):
                    out.append(Incident(rule.kind, (tr.track_id,), float(tr.t[i]), float(tr.t[j]), float(depth[i : j + 1].max()), rule.zone))
        elif rule.kind == "acceleration-above-threshold":
            for tr in dataset:
                a = acceleration(tr, rule.smoothing_window)
                for i, j in _spans(np.abs(a) > rule.threshold):
                    k = i + int(np.argmax(np.abs(a[i : j + 1])))
                    out.append(Incident(rule.kind, (tr.track_id,), float(tr.t[i]), float(tr.t[j]), float(a[k])))
        elif rule.kind == "speed-above-limit":
            for tr in dataset:
                sids = semantic_map.locate_many(tr.xy)
                limits = np.full(len(tr), np.inf)
                for n, sid in enumerate(sids):
                    if rule.zone is not None and sid != rule.zone:
                        continue
                    if rule.threshold is not None:
                        limits[n] = rule.threshold if sid is not None or rule.zone is None else np.inf
                    elif sid is not None and semantic_map[sid].speed_limit is not None:
                        limits[n] = semantic_map[sid].speed_limit
                over = tr.v > limits
                for i, j in _spans(over):
                    out.append(Incident(rule.kind, (tr.track_id,), float(tr.t[i]), float(tr.t[j]), float(tr.v[i : j + 1].max()), rule.zone))
        elif rule.kind == "pet-below-threshold":
            zone = semantic_map[rule.zone]
            for ia, a in enumerate(dataset):
                for b in dataset[ia + 1 :]:
                    for first, second in ((a, b), (b, a)):
                        d = pet_detail(first, second, zone)
                        if d["pet"] is not None and d["pet"] < rule.threshold:
                            out.append(Incident(rule.kind, (first.track_id, second.track_id), d["first_exit"], d["second_entry"], d["pet"], rule.zone))
    return out


# ------------------------------------------------------------ speed stats


def speed_stats(dataset, semantic_map, segment_ids, percentiles=(15, 50, 85)):
    """Per-segment distribution of per-vehicle mean speeds inside the segment.

    Returns ``{segment_id: summary}``; the summary is empty when no vehicle
    visits the segment, and ``pct_above_limit`` is ``None`` when the segment
    has no speed limit.
    """
    for sid in segment_ids:
        if sid not in semantic_map:
            raise QueryError(f"unknown segment id {sid!r}")
    per_seg = {sid: [] for sid in segment_ids}
    for tr in dataset:
        sids = np.array(semantic_map.locate_many(tr.xy), dtype=object)
        for sid in segment_ids:
            m = sids == sid
            if m.any():
                per_seg[sid].append(float(tr.v[m].mean()))
    out = {}
    for sid in segment_ids:
        speeds = np.array(per_seg[sid])
        if len(speeds) == 0:
            out[sid] = {}
            continue
        limit = semantic_map[sid].speed_limit
        summary = {"n": int(len(speeds)), "mean": float(speeds.mean())}
        for p, val in zip(percentiles, np.percentile(speeds, percentiles)):
            summary[f"p{p}"] = float(val)
        summary["pct_above_limit"] = None if limit is None else float(100.0 * np.mean(speeds > limit))
        out[sid] = summary
    return out


# ----------------------------------------------------------------- output


def table_csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else v for v in r])
    return buf.getvalue()


def write_table(rows, header, path):
    atomic_write_text(path, table_csv(rows, header))
