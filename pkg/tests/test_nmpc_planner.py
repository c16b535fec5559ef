import dataclasses

import numpy as np
import pytest

from workload_hsc import vehicle_dynamics as vd
from workload_hsc.nmpc_planner import (CommandSeries, OcpConfig, RecedingHorizon, plan, receding_horizon, rollout,
                                       shifted_controls, trajectory_cost)
from workload_hsc.planner_worker import PlannerWorker


def test_config_derives_load_threshold(params):
    config = OcpConfig.from_config({}, params)
    assert config.load_threshold == pytest.approx(0.25 * params.static_rear_load / 2)
    assert config.load_scale == pytest.approx(0.1 * config.load_threshold)
    assert config.substeps * vd.MAX_STEP >= config.interval_length


@pytest.mark.parametrize("section", [{"execute_duration": 7.0}, {"intervals": 5}, {"weight_load": -1.0},
                                     {"latency": -0.1}])
def test_config_rejects_invalid_values(params, section):
    with pytest.raises(ValueError):
        OcpConfig.from_config(section, params)


def test_centerline_cost_is_the_saturated_load_baseline(params, straight):
    config = OcpConfig()
    controls = np.zeros(config.intervals)
    nodes = rollout(vd.VehicleState(), controls, config, params)
    cost = trajectory_cost(nodes, controls, config, straight, params)
    assert cost == pytest.approx(-2 * config.weight_load * config.horizon, abs=1e-6)


def test_zero_weights_give_zero_cost(params, straight):
    config = dataclasses.replace(OcpConfig(), weight_tracking=0.0, weight_steer_rate=0.0, weight_load=0.0)
    controls = 0.05 * np.sin(np.arange(config.intervals))
    nodes = rollout(vd.VehicleState(y=0.5), controls, config, params)
    assert trajectory_cost(nodes, controls, config, straight, params) == 0.0


def test_steer_rate_term_is_linear_in_its_weight(params, straight):
    controls = 0.05 * np.cos(np.arange(40))
    nodes = rollout(vd.VehicleState(), controls, OcpConfig(), params)

    def cost(weight):
        config = dataclasses.replace(OcpConfig(), weight_steer_rate=weight)
        return trajectory_cost(nodes, controls, config, straight, params)

    base = cost(0.0)
    assert cost(100.0) - base == pytest.approx(2 * (cost(50.0) - base), rel=1e-9)


def test_cost_accepts_a_list_of_node_states(params, straight):
    config = OcpConfig()
    controls = np.zeros(config.intervals)
    nodes = rollout(vd.VehicleState(), controls, config, params)
    states = [vd.VehicleState(**{k: float(nodes[k][i]) for k in vd.STATE_FIELDS})
              for i in range(config.intervals + 1)]
    assert trajectory_cost(states, controls, config, straight, params) == pytest.approx(
        trajectory_cost(nodes, controls, config, straight, params))


def test_cost_rejects_grid_mismatch(params, straight):
    config = OcpConfig()
    nodes = rollout(vd.VehicleState(), np.zeros(config.intervals), config, params)
    with pytest.raises(ValueError, match="controls"):
        trajectory_cost(nodes, np.zeros(config.intervals - 1), config, straight, params)
    short = rollout(vd.VehicleState(), np.zeros(20), dataclasses.replace(config, intervals=20), params)
    with pytest.raises(ValueError, match="node states"):
        trajectory_cost(short, np.zeros(20), config, straight, params)


def test_zero_control_is_optimal_on_the_centerline(params, straight):
    series = plan(vd.VehicleState(), straight, params, OcpConfig())
    assert series.converged
    assert np.max(np.abs(series.angles)) <= 1e-3
    assert len(series.samples) == 66
    assert series.span == pytest.approx(6.5)
    assert series.cost == pytest.approx(-2 * OcpConfig().weight_load * OcpConfig().horizon, abs=1e-6)


def test_plan_steers_back_toward_the_line(params, straight):
    state = vd.VehicleState(y=-1.0)
    series = plan(state, straight, params, OcpConfig())
    # right of the line: the first commands turn left
    assert series.angles[5] > 0
    assert np.all(np.diff(series.cost_history) <= 0)
    assert np.all(np.abs(series.angles) <= params.steering_bound)
    # consecutive 10 Hz samples respect the steering-rate bound
    assert np.all(np.abs(np.diff(series.angles)) <= params.steer_rate_bound * 0.1 + 1e-9)


def test_plan_is_deterministic(params, straight):
    state = vd.VehicleState(y=-0.5, yaw=0.02)
    first = plan(state, straight, params, OcpConfig())
    second = plan(state, straight, params, OcpConfig())
    np.testing.assert_array_equal(first.angles, second.angles)
    assert first.cost == second.cost


def test_plan_rejects_steering_outside_bound(params, straight):
    with pytest.raises(ValueError, match="steering_angle"):
        plan(vd.VehicleState(steering_angle=0.7), straight, params, OcpConfig())


def test_interpolation_between_samples():
    series = CommandSeries(start_time=1.0, offsets=np.array([0.0, 0.1, 0.2]), angles=np.array([0.0, 0.2, 0.1]))
    assert series.interpolate(1.05) == pytest.approx(0.1)
    assert series.interpolate(1.15) == pytest.approx(0.15)
    # past the end the last sample holds
    assert series.interpolate(5.0) == pytest.approx(0.1)


def test_shifted_controls_zero_pad(params):
    config = OcpConfig().resolved(params)
    series = CommandSeries(start_time=3.0, offsets=np.zeros(2), angles=np.zeros(2),
                           controls=np.arange(config.intervals, dtype=float))
    shifted = shifted_controls(series, 3.0 + 2 * config.interval_length, config)
    np.testing.assert_array_equal(shifted, np.concatenate([np.arange(2, config.intervals), [0.0, 0.0]]))
    assert shifted_controls(None, 0.0, config) is None


def _drive(horizon, until, state):
    for i in range(int(round(until * 100)) + 1):
        receding_horizon(horizon, i / 100, state)


def test_replans_every_execute_duration(params, straight):
    horizon = RecedingHorizon(straight, params, OcpConfig())
    _drive(horizon, 7.0, vd.VehicleState())
    replans = [e["time"] for e in horizon.events if e["type"] == "replan"]
    assert replans == pytest.approx([0.0, 3.0, 6.0])


def test_latency_delays_the_switch(params, straight):
    config = dataclasses.replace(OcpConfig(), latency=0.5)
    horizon = RecedingHorizon(straight, params, config)
    state = vd.VehicleState(steering_angle=0.01)
    receding_horizon(horizon, 0.0, state)
    # nothing active yet: the reference holds the measured angle
    assert horizon.reference(0.2) == pytest.approx(0.01)
    _drive(horizon, 4.0, state)
    active = [e["time"] for e in horizon.events if e["type"] == "plan_active"]
    assert active == pytest.approx([0.5, 3.5])


def test_receding_horizon_needs_a_state(params, straight):
    with pytest.raises(ValueError):
        receding_horizon(RecedingHorizon(straight, params, OcpConfig()), 0.0)


def test_worker_plans_off_thread(params, straight):
    worker = PlannerWorker(straight, params, OcpConfig())
    try:
        assert worker.submit(vd.VehicleState(), 1.5)
        series = worker.wait(timeout=120)
        assert series.start_time == 1.5
        assert series.converged
    finally:
        worker.close()
