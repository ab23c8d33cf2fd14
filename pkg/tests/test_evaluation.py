import numpy as np
import pytest

from aerotrack.evaluation import mot_metrics, pose_errors, score


def obj(oid, x, y, psi=0.0, v=10.0):
    return {"id": oid, "x": x, "y": y, "psi": psi, "v": v, "length": 4.5, "width": 1.8, "height": 1.5}


def test_identity_scores_perfectly(noiseless_intersection):
    _, _, scene = noiseless_intersection
    truth = scene.truth
    records = [r for tr in truth.trajectories() for r in tr.to_records()]
    report = score(truth, records)
    assert report.mota == 1.0 and report.mot.id_switches == 0
    assert report.mot.mostly_tracked == len(truth.vehicles)
    for name, errs in report.errors.items():
        assert np.all(np.abs(errs) < 1e-12), name


def test_hand_built_three_frames():
    gt = {0: [obj(1, 0, 0), obj(2, 10, 0)], 1: [obj(1, 1, 0), obj(2, 11, 0)], 2: [obj(1, 2, 0), obj(2, 12, 0)]}
    hyp = {
        0: [obj("A", 0.1, 0), obj("B", 10, 0.1)],
        1: [obj("A", 1.1, 0), obj("C", 50, 50)],  # 2 missed, C is a false positive
        2: [obj("D", 2, 0.2), obj("B", 12, 0)],  # 1 switches from A to D
    }
    res = mot_metrics(gt, hyp)
    assert (res.false_positives, res.false_negatives, res.id_switches) == (1, 1, 1)
    assert res.n_objects == 6
    assert res.mota == pytest.approx(1 - 3 / 6)
    assert res.n_tracks == 4


def test_previous_match_kept_within_gate():
    gt = {0: [obj(1, 0, 0)], 1: [obj(1, 1, 0)]}
    hyp = {0: [obj("A", 0.5, 0)], 1: [obj("A", 2.5, 0), obj("B", 1.0, 0)]}
    res = mot_metrics(gt, hyp)
    assert res.id_switches == 0 and res.false_positives == 1


def test_mostly_tracked_and_lost():
    gt = {f: [obj(1, f, 0), obj(2, f, 20)] for f in range(6)}
    hyp = {f: [obj("A", f, 0)] if f < 5 else [] for f in range(6)}
    hyp[0].append(obj("B", 0, 20))
    res = mot_metrics(gt, hyp)
    assert res.mostly_tracked == 1 and res.mostly_lost == 1


def test_pose_errors_in_vehicle_frame():
    g = obj(1, 0.0, 0.0, psi=np.pi / 2)
    h = obj("A", 0.3, 0.1, psi=np.pi / 2 + np.deg2rad(2))
    h["length"] = 4.6
    e = pose_errors([(0, g, h)])
    assert e["longitudinal"][0] == pytest.approx(0.1)
    assert e["lateral"][0] == pytest.approx(-0.3)
    assert e["position"][0] == pytest.approx(np.hypot(0.3, 0.1))
    assert e["heading_deg"][0] == pytest.approx(2.0)
    assert e["length"][0] == pytest.approx(0.1)
    assert pose_errors([])["position"].size == 0


def test_report_serialization():
    gt = {0: [obj(1, 0, 0)]}
    rep = score(gt, {0: [obj("A", 0.2, 0)]})
    d = rep.to_dict()
    assert d["mota"] == 1.0 and d["errors"]["position"]["mean"] == pytest.approx(0.2)
    assert d["per_vehicle"]["1"]["position"]["max"] == pytest.approx(0.2)
    assert score({0: []}, {0: []}).summary()["errors"]["position"]["mean"] is None
