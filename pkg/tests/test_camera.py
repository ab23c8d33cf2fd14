import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerotrack.camera import (
    NADIR_ROTATION,
    CalibrationConfig,
    CameraIntrinsics,
    CameraPose,
    GroundCorrespondence,
    ReferencePointSet,
    back_project_to_ground,
    load_calibration,
    load_reference_tracks,
    project,
    recalibrate,
    recalibrate_sequence,
    save_calibration,
    save_reference_tracks,
    solve_pnp,
)
from aerotrack.exceptions import (
    ConfigError,
    DataError,
    DegenerateConfigurationError,
    NoIntersectionError,
    PreconditionError,
    ProjectionError,
)


def random_pose(rng, altitude=(80.0, 150.0)):
    center = (rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(*altitude))
    return CameraPose.from_center(center, rng.uniform(-np.pi, np.pi), np.deg2rad(rng.uniform(0, 25)), rng.uniform(-0.1, 0.1))


def ground_points_in_view(pose, intr, rng, n):
    w, h = intr.image_size
    px = np.column_stack([rng.uniform(0.05 * w, 0.95 * w, n), rng.uniform(0.05 * h, 0.95 * h, n)])
    return back_project_to_ground(pose, intr, px)


# ------------------------------------------------------------------ intrinsics


def test_intrinsics_validation():
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.0, 1000.0, (10, 10), (20, 20))
    with pytest.raises(ConfigError):
        CameraIntrinsics(1000.0, 1000.0, (30, 10), (20, 20))


def test_pose_validation():
    with pytest.raises(DataError):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.array([0.0, 0.0, 10.0]))  # reflection
    with pytest.raises(ConfigError):
        CameraPose.from_center((0.0, 0.0, -5.0))  # below ground


def test_gsd_intrinsics():
    intr = CameraIntrinsics.from_gsd(120.0, 0.035)
    assert intr.focal_length_x == pytest.approx(120.0 / 0.035)
    assert intr.principal_point == (1920.0, 1080.0)


# --------------------------------------------------------------------- project


def test_optical_axis_projects_to_principal_point(intrinsics):
    pose = CameraPose.from_center((3.0, -4.0, 100.0), yaw=0.4, tilt=0.3)
    axis = pose.rotation.T @ np.array([0.0, 0.0, 1.0])
    for depth in (1.0, 50.0, 400.0):
        uv = project(pose, intrinsics, pose.center + depth * axis)
        np.testing.assert_allclose(uv, intrinsics.principal_point, atol=1e-9)


def test_nadir_similar_triangles():
    intr = CameraIntrinsics(1000.0, 1000.0, (500.0, 400.0), (1000, 800))
    pose = CameraPose(NADIR_ROTATION, np.array([0.0, 0.0, 100.0]))
    np.testing.assert_allclose(project(pose, intr, [1.0, 0.0, 0.0]), (510.0, 400.0), atol=1e-12)


def test_project_matches_homogeneous_matrix(intrinsics, rng):
    for _ in range(20):
        pose = random_pose(rng)
        X = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0, 3)])
        P = intrinsics.K @ np.hstack([pose.rotation, pose.translation[:, None]])
        h = P @ np.append(X, 1.0)
        np.testing.assert_allclose(project(pose, intrinsics, X), h[:2] / h[2], rtol=1e-12, atol=1e-9)


def test_project_behind_camera(intrinsics):
    pose = CameraPose.from_center((0.0, 0.0, 100.0))
    with pytest.raises(ProjectionError):
        project(pose, intrinsics, [0.0, 0.0, 150.0])


# ---------------------------------------------------------------- back-project


def test_nadir_principal_point_beneath_camera(intrinsics):
    pose = CameraPose.from_center((12.0, -7.0, 100.0))
    np.testing.assert_allclose(back_project_to_ground(pose, intrinsics, intrinsics.principal_point), (12.0, -7.0), atol=1e-12)


def test_oblique_matches_line_plane_intersection(intrinsics, rng):
    pose = CameraPose.from_center((0.0, 0.0, 100.0), yaw=0.7, tilt=np.deg2rad(30.0))
    K_inv = np.linalg.inv(intrinsics.K)
    for _ in range(20):
        px = np.array([rng.uniform(0, 3840), rng.uniform(0, 2160)])
        # independent oracle: ray C + s d with d = R^T K^-1 [u v 1]; solve z = 0
        d = pose.rotation.T @ (K_inv @ np.append(px, 1.0))
        C = -pose.rotation.T @ pose.translation
        s = -C[2] / d[2]
        np.testing.assert_allclose(back_project_to_ground(pose, intrinsics, px), (C + s * d)[:2], atol=1e-9)


def test_back_project_above_horizon(intrinsics):
    pose = CameraPose.from_center((0.0, 0.0, 10.0), tilt=np.deg2rad(85.0))
    with pytest.raises(NoIntersectionError):
        back_project_to_ground(pose, intrinsics, (1920.0, 2160.0))


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(-60, 60),
    y=st.floats(-60, 60),
    yaw=st.floats(-np.pi, np.pi),
    tilt=st.floats(0, 0.5),
    h=st.floats(30, 200),
)
def test_round_trip_ground_point(x, y, yaw, tilt, h):
    intr = CameraIntrinsics.from_gsd(120.0, 0.035)
    pose = CameraPose.from_center((1.0, 2.0, h), yaw, tilt)
    px = project(pose, intr, [x, y, 0.0])
    np.testing.assert_allclose(back_project_to_ground(pose, intr, px), (x, y), atol=1e-9)
    np.testing.assert_allclose(project(pose, intr, [*back_project_to_ground(pose, intr, px), 0.0]), px, atol=1e-6)


# ------------------------------------------------------------------------ PnP


def test_pnp_noiseless_recovery(intrinsics, rng):
    for _ in range(10):
        pose = random_pose(rng)
        g = ground_points_in_view(pose, intrinsics, rng, 8)
        corr = [GroundCorrespondence((p[0], p[1], 0.0), project(pose, intrinsics, [p[0], p[1], 0.0])) for p in g]
        est = solve_pnp(corr, intrinsics)
        assert np.linalg.norm(est.rotation - pose.rotation) < 1e-6
        assert np.linalg.norm(est.translation - pose.translation) < 1e-4
        assert est.rms_error < 1e-6


def test_pnp_noisy_rms(intrinsics, rng):
    rms = []
    for _ in range(100):
        pose = random_pose(rng)
        g = ground_points_in_view(pose, intrinsics, rng, 8)
        px = project(pose, intrinsics, np.column_stack([g, np.zeros(8)])) + rng.normal(0, 0.5, (8, 2))
        rms.append(solve_pnp((g, px), intrinsics).rms_error)
    assert max(rms) <= 1.0


def test_pnp_needs_four_points(intrinsics):
    g = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(PreconditionError):
        solve_pnp((g, g), intrinsics)


def test_pnp_collinear(intrinsics):
    g = np.column_stack([np.arange(6.0), np.zeros(6)])
    with pytest.raises(DegenerateConfigurationError):
        solve_pnp((g, g * 10), intrinsics)


def test_pnp_adding_noiseless_point_keeps_rms(intrinsics, rng):
    pose = random_pose(rng)
    g = ground_points_in_view(pose, intrinsics, rng, 9)
    px = project(pose, intrinsics, np.column_stack([g, np.zeros(9)]))
    noisy = px.copy()
    noisy[:8] += rng.normal(0, 0.5, (8, 2))
    r8 = solve_pnp((g[:8], noisy[:8]), intrinsics).rms_error
    r9 = solve_pnp((g, noisy), intrinsics).rms_error
    assert r9 <= r8 + 1e-9


def test_correspondence_must_be_on_ground():
    with pytest.raises(ConfigError):
        GroundCorrespondence((1.0, 2.0, 0.5), (0.0, 0.0))


# -------------------------------------------------------------- recalibration


def make_reference(pose0, intr, rng, n=12):
    g = ground_points_in_view(pose0, intr, rng, n)
    world = np.column_stack([g, np.zeros(n)])
    return ReferencePointSet([f"P{i}" for i in range(n)], project(pose0, intr, world), world), world


def test_recalibrate_identical_points(intrinsics, rng):
    pose0 = random_pose(rng)
    ref, world = make_reference(pose0, intrinsics, rng)
    ref.tracks[0] = (project(pose0, intrinsics, world), np.ones(len(world), dtype=bool))
    est = recalibrate(ref, 0, intrinsics)
    assert np.linalg.norm(est.rotation - pose0.rotation) < 1e-6
    np.testing.assert_allclose(est.translation, pose0.translation, atol=1e-4)


def test_recalibrate_recovers_lateral_drift(intrinsics, rng):
    pose0 = CameraPose.from_center((0.0, 0.0, 120.0), 0.2, np.deg2rad(10))
    pose1 = CameraPose.from_center((1.0, 0.0, 120.0), 0.2, np.deg2rad(10))
    ref, world = make_reference(pose0, intrinsics, rng)
    ref.tracks[1] = (project(pose1, intrinsics, world), np.ones(len(world), dtype=bool))
    est = recalibrate(ref, 1, intrinsics, previous=pose0)
    assert not est.degraded
    assert np.linalg.norm(est.center - pose0.center) == pytest.approx(1.0, abs=1e-3)


def test_recalibrate_fallback_and_hard_error(intrinsics, rng):
    pose0 = random_pose(rng)
    ref, world = make_reference(pose0, intrinsics, rng)
    ref.tracks[3] = (project(pose0, intrinsics, world), np.zeros(len(world), dtype=bool))
    est = recalibrate(ref, 3, intrinsics, previous=pose0)
    assert est.degraded
    np.testing.assert_array_equal(est.rotation, pose0.rotation)
    with pytest.raises(PreconditionError):
        recalibrate(ref, 3, intrinsics, previous=None)


def test_recalibrate_drops_outliers(intrinsics, rng):
    pose0 = random_pose(rng)
    ref, world = make_reference(pose0, intrinsics, rng, n=12)
    px = project(pose0, intrinsics, world)
    px[0] += (40.0, -25.0)  # one badly tracked point
    ref.tracks[0] = (px, np.ones(len(world), dtype=bool))
    est = recalibrate(ref, 0, intrinsics)
    assert np.linalg.norm(est.rotation - pose0.rotation) < 1e-6


def test_recalibrate_sequence_carries_last_good_pose(intrinsics, rng):
    pose0 = random_pose(rng)
    ref, world = make_reference(pose0, intrinsics, rng)
    ok = np.ones(len(world), dtype=bool)
    px = project(pose0, intrinsics, world)
    ref.tracks = {0: (px, ok), 1: (px, ~ok), 2: (px, ok)}
    poses = recalibrate_sequence(ref, [0, 1, 2], intrinsics)
    assert [poses[f].degraded for f in (0, 1, 2)] == [False, True, False]


# ----------------------------------------------------------------------- files


def test_calibration_and_reference_files_round_trip(tmp_path, intrinsics, rng):
    pose0 = random_pose(rng)
    g = ground_points_in_view(pose0, intrinsics, rng, 8)
    px = project(pose0, intrinsics, np.column_stack([g, np.zeros(8)]))
    cfg = CalibrationConfig(
        intrinsics,
        [{"point_id": f"P{i}", "map": [float(g[i, 0]) / 0.5, float(g[i, 1]) / 0.5], "image": px[i].tolist()} for i in range(8)],
        map_scale=0.5,
    )
    save_calibration(cfg, tmp_path / "cal.yaml")
    loaded = load_calibration(tmp_path / "cal.yaml")
    assert loaded.to_dict() == cfg.to_dict()
    est = loaded.solve_anchor_pose()
    assert np.linalg.norm(est.rotation - pose0.rotation) < 1e-6

    ids = ["A", "B"]
    tracks = {0: (np.array([[1.5, 2.5], [3.0, 4.0]]), np.array([True, False]))}
    save_reference_tracks(ids, tracks, tmp_path / "ref.jsonl")
    ids2, tracks2 = load_reference_tracks(tmp_path / "ref.jsonl")
    assert ids2 == ids
    np.testing.assert_array_equal(tracks2[0][0], tracks[0][0])
    np.testing.assert_array_equal(tracks2[0][1], tracks[0][1])
