import math

import numpy as np
import pytest

from workload_hsc import vehicle_dynamics as vd


def test_derivatives_at_straight_equilibrium(params):
    rates = vd.derivatives(vd.VehicleState(), params, 0.0)
    assert float(rates.x) == pytest.approx(params.forward_speed)
    for name in vd.STATE_FIELDS[1:]:
        assert float(rates[name]) == 0.0


def test_derivatives_rotate_velocity_with_yaw(params):
    rates = vd.derivatives(vd.VehicleState(yaw=math.pi / 2), params, 0.0)
    assert float(rates.x) == pytest.approx(0.0, abs=1e-12)
    assert float(rates.y) == pytest.approx(params.forward_speed)


def test_derivatives_reject_non_finite(params):
    with pytest.raises(ValueError, match="lateral_velocity"):
        vd.derivatives(vd.VehicleState(lateral_velocity=float("nan")), params, 0.0)
    with pytest.raises(ValueError, match="steering_rate"):
        vd.derivatives(vd.VehicleState(), params, float("inf"))


def test_step_on_equilibrium_advances_x_only(params):
    state = vd.step(vd.VehicleState(), 0.0, 0.01, params)
    assert float(state.x) == pytest.approx(params.forward_speed * 0.01, rel=1e-12)
    for name in vd.STATE_FIELDS[1:]:
        assert float(state[name]) == 0.0


@pytest.mark.parametrize("dt", [0.0, -0.01, 0.021])
def test_step_rejects_dt_out_of_range(params, dt):
    with pytest.raises(ValueError, match="dt"):
        vd.step(vd.VehicleState(), 0.0, dt, params)


def test_step_rejects_steering_outside_bound(params):
    with pytest.raises(ValueError, match="steering_angle"):
        vd.step(vd.VehicleState(steering_angle=0.6), 0.0, 0.01, params)


def test_rk4_step_agrees_with_ten_substeps(params):
    state = vd.VehicleState(yaw=0.01, lateral_velocity=0.01, yaw_rate=0.005, steering_angle=0.002)
    one = vd.step(state, 0.01, 0.01, params)
    fine = state
    for _ in range(10):
        fine = vd.step(fine, 0.01, 0.001, params)
    np.testing.assert_allclose(one.to_array(), fine.to_array(), rtol=0, atol=1e-8)


def test_rk4_error_shrinks_sixteenfold_per_halving(params):
    start = vd.VehicleState(yaw=0.1, lateral_velocity=0.2, yaw_rate=0.05, steering_angle=0.05)
    horizon, rate = 0.4, 0.1

    def integrate(dt):
        state = start
        for _ in range(int(round(horizon / dt))):
            state = vd.step(state, rate, dt, params)
        return state.to_array()

    reference = integrate(0.02 / 32)
    errors = [np.linalg.norm(integrate(dt) - reference) for dt in (0.02, 0.01, 0.005)]
    for coarse, fine in zip(errors, errors[1:]):
        assert 12.0 < coarse / fine < 20.0


def test_opposite_steering_rates_mirror_the_trajectory(params):
    left = right = vd.VehicleState()
    for _ in range(50):
        left = vd.step(left, 0.1, 0.02, params)
        right = vd.step(right, -0.1, 0.02, params)
    mirror = np.array([1, -1, -1, -1, -1, -1])
    np.testing.assert_allclose(left.to_array(), mirror * right.to_array(), atol=1e-12)


def test_straight_line_is_exact_without_steering(params):
    state = vd.VehicleState()
    for _ in range(500):
        state = vd.step(state, 0.0, 0.02, params)
    assert float(state.y) == 0.0
    assert float(state.x) == pytest.approx(10.0 * params.forward_speed, rel=1e-12)


def test_steady_state_matches_long_integration(params):
    delta = 0.05
    state = vd.VehicleState(steering_angle=delta)
    for _ in range(1500):
        state = vd.step(state, 0.0, 0.02, params)
    vy, r = vd.steady_state_cornering(params, delta)
    assert float(state.yaw_rate) == pytest.approx(r, rel=1e-6)
    assert float(state.lateral_velocity) == pytest.approx(vy, rel=1e-6, abs=1e-9)


def test_steering_for_radius_holds_the_circle(params):
    delta = vd.steering_for_radius(params, 60.0)
    _, r = vd.steady_state_cornering(params, delta)
    assert r == pytest.approx(params.forward_speed / 60.0, rel=1e-9)
    assert vd.steering_for_radius(params, -60.0) == pytest.approx(-delta)


def test_loads_split_evenly_without_lateral_acceleration(params):
    loads = vd.tire_vertical_loads(vd.VehicleState(), params)
    assert loads.rear_left == pytest.approx(params.static_rear_load / 2)
    assert loads.rear_right == pytest.approx(params.static_rear_load / 2)


def test_load_transfer_magnitude_and_sum(params):
    loads = vd.load_transfer(3.0, params)
    rear_share = params.dist_front / params.wheelbase
    transfer = params.mass * 3.0 * params.cg_height / params.track_width * rear_share
    assert loads.rear_right - loads.rear_left == pytest.approx(2 * transfer)
    # a left turn unloads the left wheel
    assert loads.rear_left < loads.rear_right
    for a_y in (-4.0, 0.5, 2.0):
        other = vd.load_transfer(a_y, params)
        assert other.rear_left + other.rear_right == pytest.approx(params.static_rear_load)


def test_params_from_config_validates():
    params = vd.VehicleParams.from_config({"mass": 2500})
    assert params.mass == 2500.0
    with pytest.raises(ValueError, match="mass"):
        vd.VehicleParams.from_config({"mass": -1})


def test_state_on_pose_with_radius_is_steady(params):
    state = vd.state_on_pose(1.0, 2.0, 0.3, params=params, radius=60.0)
    rates = vd.derivatives(state, params, 0.0)
    assert float(rates.lateral_velocity) == pytest.approx(0.0, abs=1e-9)
    assert float(rates.yaw_rate) == pytest.approx(0.0, abs=1e-9)
