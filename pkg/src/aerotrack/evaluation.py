"""Tracking and localization error metrics against ground truth.

Objects are matched per frame by ground-plane center distance. A ground
truth object keeps its previous hypothesis when that hypothesis is still
present within the gate; the rest are assigned by minimum total distance.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import wrap_angle

MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2


def _frames_from_records(records, id_key="track_id"):
    out = {}
    for r in records:
        out.setdefault(int(r["frame_index"]), []).append(
            {
                "id": r[id_key],
                "x": float(r["x"]),
                "y": float(r["y"]),
                "psi": float(r.get("psi", 0.0)),
                "v": float(r.get("v", 0.0)),
                "length": float(r.get("length", np.nan)),
                "width": float(r.get("width", np.nan)),
                "height": float(r.get("height", np.nan)),
            }
        )
    return out


def as_object_frames(data, id_key="track_id"):
    """Normalize ground truth or reconstruction to ``{frame: [object dict]}``.

    Accepts a :class:`~aerotrack.synth.GroundTruth`, a mapping already in
    that form, a list of trajectory records or a list of trajectories.
    """
    if hasattr(data, "object_frames"):
        return data.object_frames()
    if isinstance(data, dict):
        return data
    data = list(data)
    if data and hasattr(data[0], "to_records"):
        data = [r for tr in data for r in tr.to_records()]
    return _frames_from_records(data, id_key)


@dataclass
class MotResult:
    n_objects: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    id_switches: int = 0
    mostly_tracked: int = 0
    mostly_lost: int = 0
    n_tracks: int = 0
    matches: list = field(default_factory=list, repr=False)  # (frame, gt, hyp)

    @property
    def mota(self):
        if self.n_objects == 0:
            return 1.0
        return 1.0 - (self.false_positives + self.false_negatives + self.id_switches) / self.n_objects


def mot_metrics(ground_truth, hypotheses, gate=2.0):
    """CLEAR-MOT style counts over frame-aligned object sets.

    ``gate`` is the largest center distance (meters) that may be matched.
    Returns a :class:`MotResult` whose ``matches`` list holds
    ``(frame, gt_object, hyp_object)`` triples.
    """
    gt = as_object_frames(ground_truth)
    hyp = as_object_frames(hypotheses)
    res = MotResult()
    last = {}
    seen = {}
    matched = {}
    for f in sorted(set(gt) | set(hyp)):
        G = gt.get(f, [])
        Hs = hyp.get(f, [])
        res.n_objects += len(G)
        pairs = []
        used_g, used_h = set(), set()
        hyp_index = {h["id"]: j for j, h in enumerate(Hs)}
        for i, g in enumerate(G):
            j = hyp_index.get(last.get(g["id"]))
            if j is not None and j not in used_h and np.hypot(g["x"] - Hs[j]["x"], g["y"] - Hs[j]["y"]) <= gate:
                pairs.append((i, j))
                used_g.add(i)
                used_h.add(j)
        rg = [i for i in range(len(G)) if i not in used_g]
        rh = [j for j in range(len(Hs)) if j not in used_h]
        if rg and rh:
            D = np.array([[np.hypot(G[i]["x"] - Hs[j]["x"], G[i]["y"] - Hs[j]["y"]) for j in rh] for i in rg])
            cost = np.where(D <= gate, D, 1e9)
            r, c = linear_sum_assignment(cost)
            pairs += [(rg[a], rh[b]) for a, b in zip(r, c) if D[a, b] <= gate]
        for i, j in pairs:
            gid, hid = G[i]["id"], Hs[j]["id"]
            if gid in last and last[gid] != hid:
                res.id_switches += 1
            last[gid] = hid
            matched[gid] = matched.get(gid, 0) + 1
            res.matches.append((f, G[i], Hs[j]))
        for g in G:
            seen[g["id"]] = seen.get(g["id"], 0) + 1
        res.false_negatives += len(G) - len(pairs)
        res.false_positives += len(Hs) - len(pairs)
    for gid, n in seen.items():
        ratio = matched.get(gid, 0) / n
        if ratio > MOSTLY_TRACKED:
            res.mostly_tracked += 1
        elif ratio < MOSTLY_LOST:
            res.mostly_lost += 1
    res.n_tracks = len({h["id"] for hs in hyp.values() for h in hs})
    return res


def pose_errors(matches):
    """Per-match errors; position split into the ground-truth vehicle frame.

    Returns a dict of arrays: ``longitudinal, lateral, position, heading_deg,
    length, width, height, speed`` (signed except ``position``).
    """
    keys = ("longitudinal", "lateral", "position", "heading_deg", "length", "width", "height", "speed")
    if not matches:
        return {k: np.zeros(0) for k in keys}
    g = {k: np.array([m[1][k] for m in matches]) for k in ("x", "y", "psi", "v", "length", "width", "height")}
    h = {k: np.array([m[2][k] for m in matches]) for k in ("x", "y", "psi", "v", "length", "width", "height")}
    dx, dy = h["x"] - g["x"], h["y"] - g["y"]
    c, s = np.cos(g["psi"]), np.sin(g["psi"])
    return {
        "longitudinal": dx * c + dy * s,
        "lateral": -dx * s + dy * c,
        "position": np.hypot(dx, dy),
        "heading_deg": np.degrees(wrap_angle(h["psi"] - g["psi"])),
        "length": h["length"] - g["length"],
        "width": h["width"] - g["width"],
        "height": h["height"] - g["height"],
        "speed": h["v"] - g["v"],
    }


def _summary(a):
    a = np.abs(np.asarray(a, dtype=float))
    if len(a) == 0:
        return {"mean": None, "median": None, "max": None}
    return {"mean": float(a.mean()), "median": float(np.median(a)), "max": float(a.max())}


@dataclass
class ScoreReport:
    mot: MotResult
    errors: dict
    per_vehicle: dict

    @property
    def mota(self):
        return self.mot.mota

    def summary(self):
        return {
            "n_objects": self.mot.n_objects,
            "mota": self.mot.mota,
            "false_positives": self.mot.false_positives,
            "false_negatives": self.mot.false_negatives,
            "id_switches": self.mot.id_switches,
            "mostly_tracked": self.mot.mostly_tracked,
            "mostly_lost": self.mot.mostly_lost,
            "n_tracks": self.mot.n_tracks,
            "errors": {k: _summary(v) for k, v in self.errors.items()},
        }

    def to_dict(self):
        d = self.summary()
        d["per_vehicle"] = {
            str(k): {name: _summary(v) for name, v in errs.items()} for k, errs in sorted(self.per_vehicle.items(), key=lambda kv: str(kv[0]))
        }
        return d


def score(ground_truth, reconstruction, gate=2.0):
    """Tracking metrics and pose/shape/speed errors of a reconstruction.

    Unmatched reconstructed objects count as false positives, unmatched
    ground-truth objects as false negatives.
    """
    mot = mot_metrics(ground_truth, reconstruction, gate)
    errors = pose_errors(mot.matches)
    per_vehicle = {}
    by_gt = {}
    for m in mot.matches:
        by_gt.setdefault(m[1]["id"], []).append(m)
    for gid, ms in by_gt.items():
        per_vehicle[gid] = pose_errors(ms)
    return ScoreReport(mot, errors, per_vehicle)
