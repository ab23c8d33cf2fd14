import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerotrack.camera import NADIR_ROTATION, CameraPose, project
from aerotrack.exceptions import ConfigError
from aerotrack.keypoints import FrameDetections, KeypointDetection
from aerotrack.pipeline import run_scenario
from aerotrack.semantic_map import four_way_intersection
from aerotrack.synth import crossing_scenario
from aerotrack.tracking import (
    CONFIRMED,
    LOST,
    TENTATIVE,
    AssociationConfig,
    Track,
    TrackRecord,
    Tracker,
    associate,
    greedy_matcher,
    iou,
    iou_matrix,
    optimal_matcher,
)


def det(box, det_id=0, frame=0):
    return KeypointDetection(frame, det_id, box, np.zeros((33, 2)), np.zeros(33))


def frame(index, boxes):
    return FrameDetections(index, index / 30.0, [det(b, i, index) for i, b in enumerate(boxes)])


def active_track(track_id, box, frame_index=0):
    t = Track(track_id, state=CONFIRMED, ever_confirmed=True, hits=5)
    t.history.append(TrackRecord(frame_index, frame_index / 30.0, 0, np.asarray(box, dtype=float)))
    return t


box_strategy = st.tuples(
    st.floats(0, 100), st.floats(0, 100), st.floats(0, 50), st.floats(0, 50)
).map(lambda b: (b[0], b[1], b[0] + b[2], b[1] + b[3]))


# --------------------------------------------------------------------- IoU


def test_iou_examples():
    assert iou((0, 0, 2, 3), (0, 0, 2, 3)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 1, 1), (0.5, 0, 1.5, 1)) == pytest.approx(1 / 3)
    assert iou((1, 1, 1, 1), (1, 1, 1, 1)) == 0.0


@settings(max_examples=300, deadline=None)
@given(a=box_strategy, b=box_strategy)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-15)
    assert iou_matrix([a], [b])[0, 0] == pytest.approx(v, abs=1e-12)
    if (a[2] - a[0]) * (a[3] - a[1]) > 0:
        assert iou(a, a) == pytest.approx(1.0)


# ------------------------------------------------------------- association


def test_single_match_and_threshold():
    t = active_track(1, (0, 0, 10, 10))
    m, ud, ut = associate([t], frame(1, [(0.5, 0, 10.5, 10)]))
    assert len(m) == 1 and m[0][0] is t and not ud and not ut
    m, ud, ut = associate([t], frame(1, [(8, 8, 18, 18)]))
    assert not m and len(ud) == 1 and ut == [t]


def test_greedy_prefers_higher_score_and_lower_id():
    scores = np.array([[0.9, 0.8], [0.85, 0.4]])
    assert greedy_matcher(scores, 0.3) == [(0, 0), (1, 1)]
    tied = np.array([[0.5, 0.0], [0.5, 0.0]])
    assert greedy_matcher(tied, 0.3) == [(0, 0)]
    # optimal assignment may trade the best pair for a larger total
    assert optimal_matcher(np.array([[0.9, 0.8], [0.8, 0.1]]), 0.3) == [(0, 1), (1, 0)]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_assignment_injective(n_t, n_d, seed):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(0, 1, (n_t, n_d))
    for matcher in (greedy_matcher, optimal_matcher):
        pairs = matcher(scores, 0.3)
        rows = [r for r, _ in pairs]
        cols = [c for _, c in pairs]
        assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
        assert all(scores[r, c] > 0.3 for r, c in pairs)


def test_config_validation():
    with pytest.raises(ConfigError):
        AssociationConfig(iou_threshold=1.0)
    with pytest.raises(ConfigError):
        AssociationConfig(min_hits=0)


# --------------------------------------------------------------- lifecycle


def moving_box(i):
    return (10.0 + 2 * i, 10.0, 60.0 + 2 * i, 40.0)


def test_confirmed_exactly_at_fifth_hit():
    tr = Tracker()
    for i in range(1, 6):
        tr.step(frame(i, [moving_box(i)]))
        (track,) = tr.tracks
        assert track.state == (CONFIRMED if i == 5 else TENTATIVE)


def test_tentative_track_with_four_hits_is_dropped():
    tr = Tracker()
    for i in range(4):
        tr.step(frame(i, [moving_box(i)]))
    tr.step(frame(4, []))
    assert tr.tracks == [] and len(tr.discarded) == 1
    for i in range(5, 30):
        tr.step(frame(i, [moving_box(i)]))
    confirmed = tr.finish()
    assert [t.track_id for t in confirmed] == [2]


def test_gap_keeps_track_id():
    tr = Tracker()
    for i in range(20):
        tr.step(frame(i, [] if i == 10 else [moving_box(i)]))
    (track,) = tr.tracks
    assert track.track_id == 1 and track.state == CONFIRMED
    idx = [h.frame_index for h in track.history]
    assert idx == list(range(20))
    assert track.history[10].detection_id is None


def test_track_lost_after_max_misses():
    tr = Tracker(AssociationConfig(max_misses=3))
    for i in range(6):
        tr.step(frame(i, [moving_box(i)]))
    for i in range(6, 10):
        tr.step(frame(i, []))
    assert tr.tracks[0].state == LOST


def test_map_gate_discards_detection_over_building(intrinsics):
    pose = CameraPose(NADIR_ROTATION, np.array([0.0, 0.0, 120.0]))
    semantic_map = four_way_intersection()

    def box_at(x, y):
        u, v = project(pose, intrinsics, [x, y, 0.0])
        return (u - 40, v - 20, u + 40, v + 20)

    tr = Tracker(semantic_map=semantic_map)
    matches = tr.step(frame(0, [box_at(40.0, 40.0), box_at(-5.0, -30.0)]), pose, intrinsics)
    assert tr.gated == [(0, 0)]
    assert [d.detection_id for _, d in matches] == [1]
    # without the gate both detections spawn tracks
    tr = Tracker(AssociationConfig(map_gate=False), semantic_map)
    assert len(tr.step(frame(0, [box_at(40.0, 40.0), box_at(-5.0, -30.0)]), pose, intrinsics)) == 2


def test_crossing_scene_without_identity_switches(tmp_path):
    report, result, scene = run_scenario(crossing_scenario(pixel_sigma=0.0), tmp_path)
    assert report.mot.id_switches == 0
    assert report.mot.mostly_tracked == len(scene.truth.vehicles)
    assert len({r["track_id"] for r in result.records}) == 2
