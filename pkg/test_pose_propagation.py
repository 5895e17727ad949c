"""
Pose uncertainty propagation along planner edges.
"""
import math

import numpy as np
import pytest

from app.core.geometry import Point2
from app.core.pose import MotionNoise, PoseBelief, motion_jacobian, motion_map, propagate

Q = MotionNoise.from_std((0.1, 0.1, 0.0026))


def _initial() -> PoseBelief:
    return PoseBelief.from_std(10.0, 2.0, 0.0, (0.4, 0.1, 0.0))


def test_zero_length_edge_adds_noise_only():
    start = _initial()
    still = propagate(start, start.position, start.position, Q)
    np.testing.assert_allclose(still.covariance, start.covariance + Q.q)
    assert still.heading == start.heading

    silent = propagate(start, start.position, start.position, MotionNoise(np.zeros((3, 3))))
    np.testing.assert_array_equal(silent.covariance, start.covariance)


def test_straight_step_covariance():
    start = PoseBelief(np.zeros(3), np.diag([0.2, 0.3, 0.05]))
    moved = propagate(start, Point2(0, 0), Point2(1, 0), MotionNoise(np.zeros((3, 3))))
    expected = np.array([
        [0.2, 0.0, 0.0],
        [0.0, 0.3 + 0.05, 0.05],
        [0.0, 0.05, 0.05],
    ])
    np.testing.assert_allclose(moved.covariance, expected, atol=1e-15)


def test_mean_lands_on_edge_end_with_edge_heading():
    start = _initial()
    end = Point2(11.0, 3.0)
    moved = propagate(start, start.position, end, Q)
    assert moved.position == end
    assert moved.heading == pytest.approx(math.pi / 4)


def test_log_det_never_decreases_along_a_path():
    rng = np.random.default_rng(4)
    pose = _initial()
    pose = propagate(pose, pose.position, pose.position, Q)
    previous = pose.log_det()
    for _ in range(50):
        end = Point2(*(pose.position.as_array() + rng.uniform(-1, 1, size=2)))
        pose = propagate(pose, pose.position, end, Q)
        assert pose.log_det() >= previous - 1e-12
        np.testing.assert_array_equal(pose.covariance, pose.covariance.T)
        assert np.all(np.linalg.eigvalsh(pose.covariance) >= -1e-12)
        previous = pose.log_det()


def test_jacobian_matches_finite_differences():
    state = np.array([1.0, -2.0, 0.3])
    control = (1.0, 0.4)
    jac = motion_jacobian(state, control)
    h = 1e-6
    numeric = np.zeros((3, 3))
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        numeric[:, j] = (motion_map(state + step, control) - motion_map(state - step, control)) / (2 * h)
    np.testing.assert_allclose(jac, numeric, atol=1e-6)
    assert np.linalg.det(jac) == pytest.approx(1.0)


def test_propagation_ignores_sibling_order():
    start = _initial()
    a, b = Point2(11, 2), Point2(10, 3)
    first = propagate(start, start.position, a, Q)
    propagate(start, start.position, b, Q)
    again = propagate(start, start.position, a, Q)
    np.testing.assert_array_equal(first.covariance, again.covariance)


@pytest.mark.parametrize("covariance", [
    np.eye(2),
    np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    -np.eye(3),
])
def test_pose_belief_validation(covariance):
    with pytest.raises(ValueError):
        PoseBelief(np.zeros(3), covariance)


def test_motion_noise_must_be_diagonal_nonnegative():
    with pytest.raises(ValueError):
        MotionNoise(np.diag([0.1, -0.1, 0.0]))
    with pytest.raises(ValueError):
        MotionNoise(np.ones((3, 3)))
