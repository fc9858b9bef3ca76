import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from dfpose.errors import NonPositiveDepth
from dfpose.geom import (
    CameraModel,
    Pose,
    axis_angle_matrix,
    backproject,
    compose,
    covering_radius_deg,
    load_obj,
    matrix_to_quat,
    project,
    project_points,
    quat_exp,
    quat_log,
    quat_to_matrix,
    rotation_geodesic_deg,
    sample_rotation_grid,
    sample_rotations_near,
    save_obj,
    slerp,
)
from dfpose.bench.meshes import bottle

unit_quats = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(lambda q: np.linalg.norm(q) > 0.1)


def random_pose(rng):
    q = Rotation.random(random_state=int(rng.integers(1 << 31))).as_quat()[[3, 0, 1, 2]]
    return Pose.from_quat(q, rng.normal(size=3))


# -- poses -------------------------------------------------------------------


def test_compose_identity(rng):
    P = random_pose(rng)
    out = compose(Pose.identity(), P)
    np.testing.assert_allclose(out.matrix, P.matrix, atol=1e-12)


def test_compose_inverse(rng):
    P = random_pose(rng)
    np.testing.assert_allclose((P @ P.inverse()).matrix, np.eye(4), atol=1e-12)


def test_compose_two_quarter_turns_matches_matrix_product():
    a = Pose(axis_angle_matrix([1, 0, 0], math.pi / 2), [0.1, 0, 0])
    b = Pose(axis_angle_matrix([0, 0, 1], math.pi / 2), [0, 0.2, 0])
    # z first, then x
    expected = a.matrix @ b.matrix
    np.testing.assert_allclose(compose(a, b).matrix, expected, atol=1e-12)
    Rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    Rx = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0.0]])
    np.testing.assert_allclose(compose(a, b).R, Rx @ Rz, atol=1e-12)


def test_pose_rejects_improper_rotation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.eye(3), [0, 0, np.nan])


def test_pose_is_immutable():
    P = Pose.identity()
    with pytest.raises(ValueError):
        P.t[0] = 1.0


@given(st.lists(unit_quats, min_size=2, max_size=30))
def test_long_composition_chain_stays_orthonormal(quats):
    P = Pose.identity()
    for q in quats:
        P = P @ Pose.from_quat(q, [0.01, 0, 0])
    assert np.abs(P.R @ P.R.T - np.eye(3)).max() < 1e-9


# -- camera ------------------------------------------------------------------


def test_project_optical_axis(camera):
    np.testing.assert_array_equal(project(camera, [0, 0, 0.5]), [320, 240])


def test_project_offset_point(camera):
    assert project(camera, [0.1, 0, 0.5])[0] == pytest.approx(440.0, abs=1e-12)


def test_backproject_principal_point(camera):
    np.testing.assert_array_equal(backproject(camera, (320, 240), 0.5), [0, 0, 0.5])


def test_backproject_offset_pixel(camera):
    assert backproject(camera, (440, 240), 0.5)[0] == pytest.approx(0.5 * 120 / 600, abs=1e-15)


def test_project_backproject_round_trip(camera, rng):
    pixels = rng.uniform([0, 0], [640, 480], size=(1000, 2))
    depths = rng.uniform(0.1, 5.0, size=1000)
    for px, z in zip(pixels, depths):
        np.testing.assert_allclose(project(camera, backproject(camera, px, z)), px, atol=1e-9)


def test_random_point_round_trip(camera, rng):
    for p in rng.uniform([-1, -1, 0.1], [1, 1, 3], size=(200, 3)):
        np.testing.assert_allclose(backproject(camera, project(camera, p), p[2]), p, atol=1e-9)


def test_project_points_matches_project(camera, rng):
    pts = rng.uniform([-1, -1, 0.1], [1, 1, 3], size=(50, 3))
    np.testing.assert_allclose(project_points(camera, pts), [project(camera, p) for p in pts])


@pytest.mark.parametrize("z", [0.0, -0.3])
def test_non_positive_depth(camera, z):
    with pytest.raises(NonPositiveDepth):
        project(camera, [0, 0, z])
    with pytest.raises(NonPositiveDepth):
        backproject(camera, (1, 1), z)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(0, 600, 320, 240, 640, 480)
    with pytest.raises(ValueError):
        CameraModel(600, 600, 700, 240, 640, 480)


# -- rotations ---------------------------------------------------------------


def test_registration_grid_has_252_rotations():
    assert sample_rotation_grid().count == 252


def test_level_zero_grid_is_identity():
    grid = sample_rotation_grid(0)
    assert grid.count == 1
    np.testing.assert_array_equal(grid.rotations[0], [1, 0, 0, 0])


def test_grid_rotations_are_distinct_unit_quaternions():
    q = sample_rotation_grid().rotations
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
    dots = np.abs(q @ q.T) - np.eye(len(q)) * 2
    assert dots.max() < 1 - 1e-6


def test_grid_covering_radius_bounds_random_rotations():
    grid = sample_rotation_grid()
    radius = covering_radius_deg(grid, n_samples=50000, seed=0)
    probes = Rotation.random(1000, random_state=99).as_quat()[:, [3, 0, 1, 2]]
    nearest = [min(rotation_geodesic_deg(p, g) for g in grid.rotations[np.argsort(-np.abs(grid.rotations @ p))[:1]]) for p in probes]
    assert max(nearest) <= radius


def test_sample_near_count():
    assert sample_rotations_near([1, 0, 0, 0], 20, seed=3).count == 20


def test_sample_near_single_is_center():
    c = quat_exp(np.array([0.2, -0.1, 0.4]))
    grid = sample_rotations_near(c, 1)
    np.testing.assert_allclose(grid.rotations, [c])


@given(unit_quats, st.integers(1, 40), st.floats(0.01, math.pi), st.integers(0, 1000))
def test_sample_near_within_max_angle(center, count, max_angle, seed):
    grid = sample_rotations_near(center, count, max_angle, seed)
    assert grid.count == count
    # independent oracle: matrix trace formula
    R0 = quat_to_matrix(center)
    for q in grid.rotations:
        c = (np.trace(R0.T @ quat_to_matrix(q)) - 1) / 2
        assert math.acos(np.clip(c, -1, 1)) <= max_angle + 1e-9


def test_sample_near_deterministic():
    a = sample_rotations_near([1, 0, 0, 0], 20, seed=5).rotations
    b = sample_rotations_near([1, 0, 0, 0], 20, seed=5).rotations
    np.testing.assert_array_equal(a, b)


def test_geodesic_self_is_zero(rng):
    q = quat_exp(rng.normal(size=3))
    assert rotation_geodesic_deg(q, q) == pytest.approx(0.0, abs=1e-9)


def test_geodesic_quarter_turn():
    q = matrix_to_quat(axis_angle_matrix([0, 0, 1], math.pi / 2))
    assert rotation_geodesic_deg(q, [1, 0, 0, 0]) == pytest.approx(90.0, abs=1e-12)


def test_geodesic_matches_trace_formula(rng):
    for _ in range(200):
        a, b = quat_exp(rng.normal(size=3)), quat_exp(rng.normal(size=3))
        Ra, Rb = quat_to_matrix(a), quat_to_matrix(b)
        expected = math.degrees(math.acos(np.clip((np.trace(Ra.T @ Rb) - 1) / 2, -1, 1)))
        assert rotation_geodesic_deg(a, b) == pytest.approx(expected, abs=1e-6)


@given(unit_quats)
def test_geodesic_sign_invariant(q):
    assert rotation_geodesic_deg(q, -np.asarray(q)) == pytest.approx(0.0, abs=1e-6)


@given(st.tuples(*[st.floats(-3, 3)] * 3))
def test_quat_log_inverts_exp(v):
    v = np.asarray(v)
    if np.linalg.norm(v) >= math.pi:
        v = v / np.linalg.norm(v) * 3.0
    np.testing.assert_allclose(quat_log(quat_exp(v)), v, atol=1e-9)


def test_slerp_endpoints_and_midpoint():
    a = np.array([1.0, 0, 0, 0])
    b = matrix_to_quat(axis_angle_matrix([0, 1, 0], math.radians(40)))
    assert rotation_geodesic_deg(slerp(a, b, 0.0), a) < 1e-9
    assert rotation_geodesic_deg(slerp(a, b, 1.0), b) < 1e-9
    assert rotation_geodesic_deg(slerp(a, b, 0.5), a) == pytest.approx(20.0, abs=1e-9)


# -- meshes ------------------------------------------------------------------


def test_obj_round_trip(tmp_path):
    mesh = bottle()
    path = tmp_path / "bottle.obj"
    save_obj(mesh, path)
    loaded = load_obj(path)
    np.testing.assert_allclose(loaded.vertices, mesh.vertices, rtol=1e-12)
    np.testing.assert_array_equal(loaded.faces, mesh.faces)
    assert loaded.diameter == pytest.approx(mesh.diameter, rel=1e-12)


def test_load_checked_in_obj():
    import os

    mesh = load_obj(os.path.join(os.path.dirname(__file__), "data", "bottle.obj"))
    assert len(mesh.faces) == len(bottle().faces)
    assert mesh.diameter == pytest.approx(bottle().diameter, rel=1e-6)


def test_load_obj_accepts_slash_tokens(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1/1 2/1/1 3/1/1\n")
    mesh = load_obj(path)
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])


def test_mesh_scale_multiplies_diameter():
    m = bottle()
    assert m.rescaled(3.0).diameter == pytest.approx(3 * m.diameter)
