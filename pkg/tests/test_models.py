import math

import numpy as np
import pytest

from stochastic_mtt.errors import DegenerateGeometryError, InvalidArgumentError
from stochastic_mtt.models import (
    GaussianDensity,
    ModelSwitchMatrix,
    SensorPose,
    build_az_el_range,
    build_cv_3d,
    build_linear_measurement,
    build_ncv_2d,
    build_range_bearing,
    build_turn_rate_2d,
    numerical_jacobian,
    default_switch_matrix,
    position_indices,
)


def test_ncv_transition_and_noise():
    dyn = build_ncv_2d(2.0, 0.5, 0.25)
    expected_F = np.array(
        [[1, 2, 0, 0], [0, 1, 0, 0], [0, 0, 1, 2], [0, 0, 0, 1]], dtype=float
    )
    np.testing.assert_array_equal(dyn.F, expected_F)
    np.testing.assert_allclose(dyn.Q[:2, :2], 0.5 * np.array([[8 / 3, 2], [2, 2]]))
    np.testing.assert_allclose(dyn.Q[2:, 2:], 0.25 * np.array([[8 / 3, 2], [2, 2]]))
    assert np.all(dyn.Q[:2, 2:] == 0)


def test_turn_rate_closed_form():
    omega = math.radians(20.0)
    dyn = build_turn_rate_2d(1.0, omega, 0.05, 0.05)
    s, c = math.sin(omega), math.cos(omega)
    assert dyn.F[0, 1] == pytest.approx(s / omega, abs=1e-12)
    assert dyn.F[2, 1] == pytest.approx((1 - c) / omega, abs=1e-12)
    assert dyn.F[1, 1] == pytest.approx(0.939693, abs=1e-6)
    assert dyn.F[3, 1] == pytest.approx(0.342020, abs=1e-6)
    assert dyn.F[1, 3] == pytest.approx(-0.342020, abs=1e-6)


def test_turn_rate_preserves_speed_without_noise():
    dyn = build_turn_rate_2d(1.0, math.radians(-20.0), 0.0, 0.0)
    x = np.array([0.0, 120.0, 0.0, -50.0])
    for _ in range(18):
        x = dyn.F @ x
    assert math.hypot(x[1], x[3]) == pytest.approx(130.0, rel=1e-12)


def test_zero_turn_rate_is_ncv():
    turn = build_turn_rate_2d(1.5, 0.0, 1.0, 2.0)
    ncv = build_ncv_2d(1.5, 1.0, 2.0)
    np.testing.assert_array_equal(turn.F, ncv.F)
    np.testing.assert_array_equal(turn.Q, ncv.Q)


def test_dynamics_rebuilt_for_other_gap():
    dyn = build_cv_3d(5.0, 10.0, 10.0, 5.0)
    assert dyn.at(5.0) is dyn
    longer = dyn.at(10.0)
    assert longer.F[0, 1] == 10.0
    assert longer.Q[0, 0] == pytest.approx(10.0 * 1000.0 / 3.0)
    assert longer.Q[4, 4] == pytest.approx(5.0 * 1000.0 / 3.0)


def test_invalid_dynamics_arguments():
    with pytest.raises(InvalidArgumentError):
        build_ncv_2d(0.0, 1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        build_ncv_2d(1.0, -1.0, 1.0)


def test_gaussian_density_rejects_indefinite_covariance():
    with pytest.raises(InvalidArgumentError):
        GaussianDensity(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    density = GaussianDensity([1.0, 2.0], [[2.0, 0.5], [0.5 + 1e-15, 1.0]])
    np.testing.assert_array_equal(density.cov, density.cov.T)


def test_position_indices():
    np.testing.assert_array_equal(position_indices(4), [0, 2])
    np.testing.assert_array_equal(position_indices(6), [0, 2, 4])
    with pytest.raises(InvalidArgumentError):
        position_indices(5)


def test_range_bearing_values_and_inverse():
    sensor = SensorPose(np.array([100.0, -200.0]), label="radar")
    model = build_range_bearing(sensor, np.diag([4.0, 1e-4]))
    x = np.array([3100.0, 5.0, 3800.0, -5.0])
    z = model.function(x)
    assert z[0] == pytest.approx(5000.0)
    assert z[1] == pytest.approx(math.atan2(4000.0, 3000.0))
    np.testing.assert_allclose(model.invert(z), [3100.0, 3800.0], atol=1e-9)


def test_range_bearing_south_wraps_bearing():
    model = build_range_bearing(SensorPose(np.zeros(2)), np.eye(2))
    z = model.function(np.array([-1000.0, 0.0, -1e-12, 0.0]))
    assert -math.pi < z[1] <= math.pi
    assert abs(abs(z[1]) - math.pi) < 1e-9


def test_analytic_jacobians_match_finite_differences():
    radar = build_range_bearing(SensorPose(np.zeros(2)), np.eye(2))
    x = np.array([7000.0, 30.0, -2500.0, 12.0])
    np.testing.assert_allclose(
        radar.jacobian_at(x),
        numerical_jacobian(radar.function, x, radar.angle_mask),
        rtol=1e-5,
        atol=1e-10,
    )
    site = SensorPose(np.array([1000.0, -3000.0, 20.0]))
    eb_r = build_az_el_range(site, np.eye(3))
    x3 = np.array([40000.0, 200.0, 25000.0, -80.0, 9000.0, 1.0])
    np.testing.assert_allclose(
        eb_r.jacobian_at(x3),
        numerical_jacobian(eb_r.function, x3, eb_r.angle_mask),
        rtol=1e-5,
        atol=1e-10,
    )


def test_elevation_at_zenith_and_nadir():
    model = build_az_el_range(SensorPose(np.zeros(3)), np.eye(3))
    above = model.function(np.array([0.0, 0.0, 0.0, 0.0, 5000.0, 0.0]))
    below = model.function(np.array([0.0, 0.0, 0.0, 0.0, -5000.0, 0.0]))
    assert above[0] == pytest.approx(math.pi / 2)
    assert above[1] == 0.0
    assert above[2] == pytest.approx(5000.0)
    assert below[0] == pytest.approx(-math.pi / 2)


def test_elevation_bearing_range_inverse():
    site = SensorPose(np.array([-2000.0, 500.0, 5000.0]), label="airborne")
    model = build_az_el_range(site, np.eye(3))
    x = np.array([60000.0, 0.0, -41000.0, 0.0, 10500.0, 0.0])
    np.testing.assert_allclose(model.invert(model.function(x)), x[[0, 2, 4]], atol=1e-6)


def test_degenerate_geometry():
    model = build_range_bearing(SensorPose(np.zeros(2)), np.eye(2))
    with pytest.raises(DegenerateGeometryError):
        model.function(np.zeros(4))
    with pytest.raises(DegenerateGeometryError):
        model.jacobian_at(np.zeros(4))


def test_linear_measurement():
    H = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
    model = build_linear_measurement(H, np.eye(2))
    x = np.array([3.0, 1.0, -4.0, 2.0])
    np.testing.assert_array_equal(model.function(x), [3.0, -4.0])
    np.testing.assert_array_equal(model.jacobian_at(x), H)
    assert not model.angle_mask.any()


def test_switch_matrix_rejects_bad_row():
    with pytest.raises(InvalidArgumentError, match="row 1"):
        ModelSwitchMatrix(np.array([[1.0, 0.0], [0.5, 0.4]]))
    with pytest.raises(InvalidArgumentError):
        ModelSwitchMatrix(np.array([[1.5, -0.5], [0.5, 0.5]]))


def test_switch_frequencies_follow_matrix_row():
    switch = default_switch_matrix()
    rng = np.random.default_rng(2024)
    draws = np.array([switch.draw(0, rng) for _ in range(100_000)])
    frequencies = np.bincount(draws, minlength=3) / draws.size
    np.testing.assert_allclose(frequencies, [0.7, 0.15, 0.15], atol=0.01)


def test_identity_switch_never_switches():
    switch = ModelSwitchMatrix(np.eye(3))
    rng = np.random.default_rng(1)
    mode = 0
    for _ in range(10_000):
        mode = switch.draw(mode, rng)
        assert mode == 0


def test_moving_sensor_pose():
    pose = SensorPose(np.array([0.0, 0.0, 5000.0]), velocity=np.array([100.0, 0.0, 0.0]))
    assert pose.is_moving
    np.testing.assert_array_equal(pose.at(10.0).position, [1000.0, 0.0, 5000.0])
    still = SensorPose(np.zeros(3))
    assert still.at(99.0) is still


def test_turn_direction_flips_cross_terms():
    omega = math.radians(20.0)
    left = build_turn_rate_2d(1.0, omega, 0.1, 0.1).F
    right = build_turn_rate_2d(1.0, -omega, 0.1, 0.1).F
    flipped = [(0, 3), (1, 3), (2, 1), (3, 1)]
    expected = left.copy()
    for i, j in flipped:
        assert left[i, j] != 0.0
        expected[i, j] = -left[i, j]
    np.testing.assert_allclose(right, expected, rtol=0.0, atol=1e-15)


@pytest.mark.parametrize("omega", [1e-10, -1e-10, 5e-9, -5e-9])
def test_turn_rate_is_continuous_at_zero(omega):
    straight = build_turn_rate_2d(1.0, 0.0, 0.1, 0.1).F
    turning = build_turn_rate_2d(1.0, omega, 0.1, 0.1).F
    assert np.max(np.abs(turning - straight)) < 1e-8
