"""Lane-level semantic map: typed polygon segments in a local metric frame.

Map files are GeoJSON feature collections of polygons. Coordinates are in
map units and converted to meters with the collection's ``scale`` member
(meters per map unit). Each feature's properties carry ``id``, ``type`` and
optionally ``direction`` (unit travel direction) and ``speed_limit`` (m/s).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import Polygon

from ._io import atomic_write_text
from ._validation import check_positive
from .exceptions import ConfigError, ParseError

SEGMENT_TYPES = (
    "driving_lane",
    "curb_area",
    "sidewalk",
    "crosswalk",
    "buffer_area",
    "non_traversable",
    "encroachment_zone",
)
DEFAULT_TRAVERSABLE = frozenset({"driving_lane", "curb_area", "crosswalk", "buffer_area", "encroachment_zone"})


@dataclass
class MapSegment:
    id: str
    polygon: np.ndarray  # (N, 2) exterior ring, meters
    type: str
    direction: tuple = None
    speed_limit: float = None
    holes: list = field(default_factory=list)

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=float).reshape(-1, 2)
        if len(self.polygon) > 1 and np.allclose(self.polygon[0], self.polygon[-1]):
            self.polygon = self.polygon[:-1]
        if len(self.polygon) < 3:
            raise ConfigError(f"segment {self.id}: a polygon needs at least 3 vertices")
        self.holes = [np.asarray(h, dtype=float).reshape(-1, 2) for h in self.holes]
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)
            self.direction = tuple(d / np.linalg.norm(d))
        if self.speed_limit is not None:
            self.speed_limit = check_positive(self.speed_limit, f"segment {self.id} speed_limit")

    @property
    def geometry(self):
        return Polygon(self.polygon, self.holes)

    @property
    def area(self):
        return float(self.geometry.area)


class SemanticMap:
    """Immutable collection of map segments with containment queries.

    Parameters
    ----------
    segments : list of MapSegment
    scale : float
        Meters per map unit of the source file (informational once loaded;
        segment coordinates are already metric).
    traversable : iterable of str
        Segment types on which vehicles are tracked.
    extra_types : iterable of str
        Additional segment types accepted beyond the built-in enumeration.
    """

    def __init__(self, segments, scale=1.0, traversable=DEFAULT_TRAVERSABLE, extra_types=()):
        self.scale = check_positive(scale, "scale")
        self.types = tuple(SEGMENT_TYPES) + tuple(extra_types)
        self.segments = list(segments)
        ids = [s.id for s in self.segments]
        if len(set(ids)) != len(ids):
            raise ConfigError("segment ids must be unique")
        for s in self.segments:
            if s.type not in self.types:
                raise ConfigError(f"segment {s.id}: unknown type {s.type!r}")
            if not s.geometry.is_valid:
                raise ConfigError(f"segment {s.id}: polygon is not simple")
        self.traversable = frozenset(traversable)
        self._by_id = {s.id: s for s in self.segments}
        self._geoms = np.array([s.geometry for s in self.segments], dtype=object)
        for g in self._geoms:
            shapely.prepare(g)
        self._areas = np.array([s.area for s in self.segments])
        # smallest area first, ties by id
        self._priority = sorted(range(len(self.segments)), key=lambda i: (self._areas[i], self.segments[i].id))

    def __len__(self):
        return len(self.segments)

    def __getitem__(self, segment_id):
        return self._by_id[segment_id]

    def __contains__(self, segment_id):
        return segment_id in self._by_id

    @property
    def ids(self):
        return [s.id for s in self.segments]

    def containing(self, points):
        """Boolean matrix ``(n_segments, n_points)``; boundaries count as inside."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        pts = shapely.points(P[:, 0], P[:, 1])
        return shapely.covers(self._geoms[:, None], pts[None, :])

    def locate_many(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.segments:
            return [None] * len(P)
        inside = self.containing(P)
        out = [None] * len(P)
        for i in reversed(self._priority):
            for j in np.flatnonzero(inside[i]):
                out[j] = self.segments[i].id
        return out

    def locate(self, point):
        """Id of the smallest segment containing ``point``, or ``None``."""
        return self.locate_many(np.asarray(point, dtype=float).reshape(1, 2))[0]

    def is_traversable(self, point):
        sid = self.locate(point)
        return sid is not None and self._by_id[sid].type in self.traversable

    def translated(self, offset):
        off = np.asarray(offset, dtype=float)
        return SemanticMap(
            [
                MapSegment(s.id, s.polygon + off, s.type, s.direction, s.speed_limit, [h + off for h in s.holes])
                for s in self.segments
            ],
            self.scale,
            self.traversable,
            self.types[len(SEGMENT_TYPES) :],
        )

    # ------------------------------------------------------------------ files

    def to_geojson(self):
        feats = []
        for s in self.segments:
            ring = (s.polygon / self.scale).tolist()
            ring.append(ring[0])
            rings = [ring] + [(h / self.scale).tolist() + [(h[0] / self.scale).tolist()] for h in s.holes]
            props = {"id": s.id, "type": s.type}
            if s.direction is not None:
                props["direction"] = list(s.direction)
            if s.speed_limit is not None:
                props["speed_limit"] = s.speed_limit
            feats.append({"type": "Feature", "geometry": {"type": "Polygon", "coordinates": rings}, "properties": props})
        return {
            "type": "FeatureCollection",
            "frame": "local metric ground plane, x east, y north",
            "scale": self.scale,
            "traversable": sorted(self.traversable),
            "features": feats,
        }

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_geojson(), indent=1) + "\n")


def load_map(path, extra_types=()):
    try:
        d = json.loads(Path(path).read_text())
        scale = float(d.get("scale", 1.0))
        segs = []
        for f in d["features"]:
            geom = f["geometry"]
            if geom["type"] != "Polygon":
                raise ValueError(f"unsupported geometry {geom['type']}")
            rings = [np.asarray(r, dtype=float) * scale for r in geom["coordinates"]]
            p = f["properties"]
            segs.append(
                MapSegment(
                    str(p["id"]),
                    rings[0],
                    p["type"],
                    p.get("direction"),
                    p.get("speed_limit"),
                    [r[:-1] if np.allclose(r[0], r[-1]) else r for r in rings[1:]],
                )
            )
        traversable = d.get("traversable", DEFAULT_TRAVERSABLE)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: invalid map file ({exc})") from exc
    return SemanticMap(segs, scale, traversable, extra_types)


def locate(semantic_map, point):
    return semantic_map.locate(point)


def traverse_sequence(semantic_map, trajectory):
    """Segments visited by a trajectory, consecutive repeats collapsed.

    ``trajectory`` is an ``(N, 2)`` array of positions or an object with
    ``x`` and ``y`` arrays. Samples outside every segment contribute ``None``
    entries so gaps stay visible.
    """
    if hasattr(trajectory, "x"):
        pts = np.column_stack([trajectory.x, trajectory.y])
    else:
        pts = np.asarray(trajectory, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return []
    seq = []
    for sid in semantic_map.locate_many(pts):
        if not seq or seq[-1] != sid:
            seq.append(sid)
    return seq


# ----------------------------------------------------------------- fixtures

LANE_WIDTH = 3.5


def _rect(a, right, s0, s1, l0, l1):
    """Rectangle spanning ``[s0, s1]`` along ``a`` and ``[l0, l1]`` along ``right``."""
    a = np.asarray(a, float)
    right = np.asarray(right, float)
    return np.array([a * s0 + right * l0, a * s1 + right * l0, a * s1 + right * l1, a * s0 + right * l1])


def four_way_intersection(lanes=3, arm_length=80.0, crosswalk=3.0, speed_limit=13.4):
    """Four arms of ``lanes`` lanes per direction meeting in a square junction.

    Ids: ``{N,E,S,W}_in_{i}`` (approach lanes, 1 = next to the median),
    ``{N,E,S,W}_out_{i}``, ``CW_{arm}``, ``junction``, ``SW_{corner}``
    (sidewalk corners) and ``BLD_{corner}`` (buildings).
    """
    half = lanes * LANE_WIDTH
    edge = half + crosswalk
    arms = {"N": (0.0, 1.0), "E": (1.0, 0.0), "S": (0.0, -1.0), "W": (-1.0, 0.0)}
    segs = [MapSegment("junction", [(-half, -half), (half, -half), (half, half), (-half, half)], "driving_lane")]
    for name, a in arms.items():
        a = np.array(a)
        r_in = np.array([-a[1], a[0]])  # right-hand side for traffic travelling -a
        r_out = -r_in
        for i in range(1, lanes + 1):
            lo, hi = (i - 1) * LANE_WIDTH, i * LANE_WIDTH
            segs.append(MapSegment(f"{name}_in_{i}", _rect(a, r_in, edge, arm_length, lo, hi), "driving_lane", tuple(-a), speed_limit))
            segs.append(MapSegment(f"{name}_out_{i}", _rect(a, r_out, edge, arm_length, lo, hi), "driving_lane", tuple(a), speed_limit))
        segs.append(MapSegment(f"CW_{name}", _rect(a, r_in, half, edge, -half, half), "crosswalk"))
    L = arm_length
    for cname, (sx, sy) in {"NE": (1, 1), "NW": (-1, 1), "SW": (-1, -1), "SE": (1, -1)}.items():
        ring = np.array([(half, half), (L, half), (L, edge), (edge, edge), (edge, L), (half, L)]) * (sx, sy)
        if sx * sy < 0:
            ring = ring[::-1]
        segs.append(MapSegment(f"SW_{cname}", ring, "sidewalk"))
        bld = np.array([(edge, edge), (L, edge), (L, L), (edge, L)]) * (sx, sy)
        if sx * sy < 0:
            bld = bld[::-1]
        segs.append(MapSegment(f"BLD_{cname}", bld, "non_traversable"))
    return SemanticMap(segs)


def highway_with_ramp(lanes=3, length=150.0, speed_limit=29.0, ramp_limit=20.0):
    """Divided highway along ``x`` with an eastbound exit ramp and a gore area.

    Ids: ``EB_{i}``/``WB_{i}`` (1 = next to the median), ``median``,
    ``EB_decel``, ``ramp_1``, ``ramp_2`` and ``gore`` (a buffer area that
    vehicles must not cross).
    """
    w = LANE_WIDTH
    m = 1.5
    segs = [MapSegment("median", [(-length, -m), (length, -m), (length, m), (-length, m)], "buffer_area")]
    for i in range(1, lanes + 1):
        lo, hi = m + (i - 1) * w, m + i * w
        segs.append(MapSegment(f"EB_{i}", [(-length, -hi), (length, -hi), (length, -lo), (-length, -lo)], "driving_lane", (1.0, 0.0), speed_limit))
        segs.append(MapSegment(f"WB_{i}", [(-length, lo), (length, lo), (length, hi), (-length, hi)], "driving_lane", (-1.0, 0.0), speed_limit))
    edge = m + lanes * w
    segs.append(MapSegment("EB_decel", [(-50.0, -edge - w), (0.0, -edge - w), (0.0, -edge), (-50.0, -edge)], "driving_lane", (1.0, 0.0), ramp_limit))
    drop = 8.0
    segs.append(MapSegment("gore", [(0.0, -edge), (60.0, -edge), (60.0, -edge - drop)], "buffer_area"))
    d = np.array([60.0, -drop])
    segs.append(MapSegment("ramp_1", [(0.0, -edge - w), (60.0, -edge - drop - w), (60.0, -edge - drop), (0.0, -edge)], "driving_lane", tuple(d / np.linalg.norm(d)), ramp_limit))
    y0 = -edge - drop
    segs.append(MapSegment("ramp_2", [(60.0, y0 - w), (length, y0 - w), (length, y0), (60.0, y0)], "driving_lane", (1.0, 0.0), ramp_limit))
    return SemanticMap(segs)


def roundabout(island=10.0, ring=18.0, arm_length=80.0, lane=4.0, n_arc=16):
    """Single-lane roundabout with four two-lane arms.

    Ids: ``island`` (non-traversable), ``ring_{NE,NW,SW,SE}`` (annular
    quarter sectors) and ``{N,E,S,W}_in`` / ``{N,E,S,W}_out``.
    """
    segs = []
    th = np.linspace(0, 2 * np.pi, 4 * n_arc, endpoint=False)
    segs.append(MapSegment("island", np.column_stack([island * np.cos(th), island * np.sin(th)]), "non_traversable"))
    for k, name in enumerate(("NE", "NW", "SW", "SE")):
        t = np.linspace(k * np.pi / 2, (k + 1) * np.pi / 2, n_arc + 1)
        outer = np.column_stack([ring * np.cos(t), ring * np.sin(t)])
        inner = np.column_stack([island * np.cos(t[::-1]), island * np.sin(t[::-1])])
        segs.append(MapSegment(f"ring_{name}", np.vstack([outer, inner]), "driving_lane"))
    start = np.sqrt(ring**2 - lane**2)
    for name, a in {"N": (0.0, 1.0), "E": (1.0, 0.0), "S": (0.0, -1.0), "W": (-1.0, 0.0)}.items():
        a = np.array(a)
        r_in = np.array([-a[1], a[0]])
        segs.append(MapSegment(f"{name}_in", _rect(a, r_in, start, arm_length, 0.0, lane), "driving_lane", tuple(-a)))
        segs.append(MapSegment(f"{name}_out", _rect(a, -r_in, start, arm_length, 0.0, lane), "driving_lane", tuple(a)))
    return SemanticMap(segs)


FIXTURES = {
    "four_way_intersection": four_way_intersection,
    "highway_with_ramp": highway_with_ramp,
    "roundabout": roundabout,
}


def fixture_path(name):
    return Path(__file__).with_name("data") / "maps" / f"{name}.geojson"


def load_fixture(name):
    return load_map(fixture_path(name))
