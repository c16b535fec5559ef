"""Receding-horizon steering planner.

Single-shooting transcription of the path-tracking cost: piecewise-constant
steering rates over `intervals` equal intervals, states propagated by the RK4
plant, cost integrated with the trapezoid rule over the node states.
"""
import dataclasses
import functools
import logging
import math

import jax
import jax.numpy as jnp
import numpy as np

from workload_hsc import vehicle_dynamics as vd
from workload_hsc.optimizer import minimize_box
from workload_hsc.tracks import squared_distance
from workload_hsc.util import require

logger = logging.getLogger(__name__)

SAMPLE_RATE = 10.0


@dataclasses.dataclass(frozen=True)
class OcpConfig:
    horizon: float = 6.5
    intervals: int = 40
    weight_tracking: float = 10.0
    weight_steer_rate: float = 50.0
    weight_load: float = 100.0
    # None derives a = 0.25 * (static rear load / 2) and b = 0.1 * a from the vehicle
    load_threshold: float = None
    load_scale: float = None
    execute_duration: float = 3.0
    bound_penalty: float = 1e4
    max_iter: int = 200
    gtol: float = 1e-6
    latency: float = 0.0

    @classmethod
    def from_config(cls, section, params=None):
        defaults = cls()
        values = {f.name: section.get(f.name, getattr(defaults, f.name)) for f in dataclasses.fields(cls)}
        config = cls(**values)
        if params is not None:
            config = config.resolved(params)
        config.validate()
        return config

    def resolved(self, params):
        """Fill in the load threshold and scale from the vehicle's static rear load."""
        threshold = self.load_threshold
        if threshold is None:
            threshold = 0.25 * params.static_rear_load / 2
        scale = self.load_scale if self.load_scale is not None else 0.1 * threshold
        return dataclasses.replace(self, load_threshold=float(threshold), load_scale=float(scale))

    def validate(self):
        require(self.horizon > self.execute_duration > 0, "execute_duration", self.execute_duration,
                f"must satisfy horizon ({self.horizon}) > execute_duration > 0")
        require(int(self.intervals) == self.intervals and self.intervals >= 10, "intervals", self.intervals,
                "must be an integer >= 10")
        for name in ("weight_tracking", "weight_steer_rate", "weight_load", "bound_penalty"):
            value = getattr(self, name)
            require(value >= 0 and math.isfinite(value), name, value, "must be finite and >= 0")
        if self.load_scale is not None:
            require(self.load_scale > 0, "load_scale", self.load_scale, "must be > 0")
        require(self.latency >= 0, "latency", self.latency, "must be >= 0")

    @property
    def interval_length(self):
        return self.horizon / self.intervals

    @property
    def substeps(self):
        return max(1, math.ceil(self.interval_length / vd.MAX_STEP - 1e-9))

    def weights(self):
        return {
            "tracking": float(self.weight_tracking),
            "steer_rate": float(self.weight_steer_rate),
            "load": float(self.weight_load),
            "threshold": float(self.load_threshold),
            "scale": float(self.load_scale),
            "bound_penalty": float(self.bound_penalty),
        }


@dataclasses.dataclass(frozen=True)
class CommandSeries:
    start_time: float
    offsets: np.ndarray
    angles: np.ndarray
    converged: bool = True
    iterations: int = 0
    cost: float = 0.0
    controls: np.ndarray = None
    cost_history: tuple = ()

    @property
    def samples(self):
        return list(zip(self.offsets.tolist(), self.angles.tolist()))

    @property
    def span(self):
        return float(self.offsets[-1])

    def interpolate(self, clock):
        return float(np.interp(clock - self.start_time, self.offsets, self.angles))


def _running_cost(nodes, gammas, weights, params, geometry):
    points = jnp.stack([nodes.x, nodes.y], axis=1)
    e2 = jax.vmap(squared_distance, in_axes=(None, 0))(geometry, points)
    loads = vd._tire_loads(nodes, params)
    load_term = (jnp.tanh((weights["threshold"] - loads.rear_left) / weights["scale"])
                 + jnp.tanh((weights["threshold"] - loads.rear_right) / weights["scale"]))
    excess = jax.nn.relu(jnp.abs(nodes.steering_angle) - params.steering_bound)
    return (weights["tracking"] * e2 + weights["steer_rate"] * gammas ** 2
            + weights["load"] * load_term + weights["bound_penalty"] * excess ** 2)


def _trapezoid(values, h):
    return h * (jnp.sum(values) - 0.5 * (values[0] + values[-1]))


def _node_cost(nodes, controls, weights, params, geometry, h):
    """Cost over node states; controls may be node-valued (n + 1) or interval-valued (n)."""
    n_nodes = nodes.x.shape[0]
    if controls.shape[0] == n_nodes:
        return _trapezoid(_running_cost(nodes, controls, weights, params, geometry), h)
    running = _running_cost(nodes, jnp.zeros(n_nodes), weights, params, geometry)
    # piecewise-constant rates integrate exactly
    return _trapezoid(running, h) + weights["steer_rate"] * h * jnp.sum(controls ** 2)


@functools.lru_cache(maxsize=None)
def _transcription(intervals, substeps):
    def rollout(controls, state, params, h):
        state = jax.tree_util.tree_map(lambda v: jnp.asarray(v, dtype=jnp.float64), state)
        dt = h / substeps

        def interval(s, gamma):
            def sub(carry, _):
                return vd._rk4(carry, gamma, dt, params), None

            s, _ = jax.lax.scan(sub, s, None, length=substeps)
            return s, s

        _, nodes = jax.lax.scan(interval, state, controls)
        return jax.tree_util.tree_map(lambda first, rest: jnp.concatenate([first[None], rest]), state, nodes)

    def objective(controls, state, params, weights, geometry, h):
        nodes = rollout(controls, state, params, h)
        return _node_cost(nodes, controls, weights, params, geometry, h)

    return jax.jit(rollout), jax.jit(jax.value_and_grad(objective))


def _stack_states(states):
    if isinstance(states, vd.VehicleState):
        return jax.tree_util.tree_map(lambda v: jnp.asarray(v, dtype=jnp.float64), states)
    return jax.tree_util.tree_map(lambda *v: jnp.asarray(v, dtype=jnp.float64), *states)


def trajectory_cost(states, controls, config, track, params=None):
    """Transcription cost of a node-state trajectory.

    `states` is a list of VehicleState (or one VehicleState of stacked arrays) at
    the intervals + 1 node times; `controls` holds either one steering rate per
    interval or one per node.
    """
    if params is None:
        params = vd.VehicleParams()
    config = config.resolved(params)
    nodes = _stack_states(states)
    controls = jnp.asarray(controls, dtype=jnp.float64)
    n_nodes = int(nodes.x.shape[0])
    if n_nodes != config.intervals + 1:
        raise ValueError(f"expected {config.intervals + 1} node states, got {n_nodes}")
    if controls.shape not in ((config.intervals,), (config.intervals + 1,)):
        raise ValueError(f"expected {config.intervals} or {config.intervals + 1} controls, got {controls.shape}")
    return float(_node_cost(nodes, controls, config.weights(), params, track.geometry, config.interval_length))


def rollout(initial_state, controls, config, params=None):
    """Node states of the transcription grid under piecewise-constant steering rates."""
    if params is None:
        params = vd.VehicleParams()
    propagate, _ = _transcription(config.intervals, config.substeps)
    return propagate(jnp.asarray(controls, dtype=jnp.float64), initial_state, params, config.interval_length)


def plan(initial_state, track, params, config, start_time=0.0, warm_start=None):
    """Solve the horizon problem from `initial_state` and sample δ(t) at 10 Hz."""
    config = config.resolved(params)
    vd.check_state(initial_state, params)
    if abs(float(initial_state.steering_angle)) > params.steering_bound + 1e-9:
        raise ValueError(f"initial steering_angle={float(initial_state.steering_angle)!r} "
                         f"outside bound {params.steering_bound}")

    h = config.interval_length
    propagate, value_and_grad = _transcription(config.intervals, config.substeps)
    weights = config.weights()
    geometry = track.geometry

    def fun_and_grad(x):
        value, grad = value_and_grad(jnp.asarray(x), initial_state, params, weights, geometry, h)
        return float(value), np.asarray(grad)

    x0 = np.zeros(config.intervals) if warm_start is None else np.asarray(warm_start, dtype=float)
    bound = params.steer_rate_bound
    result = minimize_box(fun_and_grad, x0, -bound, bound, gtol=config.gtol, maxiter=config.max_iter)

    nodes = propagate(jnp.asarray(result.x), initial_state, params, h)
    node_times = h * np.arange(config.intervals + 1)
    offsets = np.arange(int(round(config.horizon * SAMPLE_RATE)) + 1) / SAMPLE_RATE
    angles = np.clip(np.interp(offsets, node_times, np.asarray(nodes.steering_angle)),
                     -params.steering_bound, params.steering_bound)

    if not result.converged:
        logger.warning(f"plan at t={start_time:.2f}s stopped after {result.iterations} iterations: {result.message}")
    return CommandSeries(start_time=float(start_time), offsets=offsets, angles=angles, converged=result.converged,
                         iterations=result.iterations, cost=result.cost, controls=result.x,
                         cost_history=result.cost_history)


def shifted_controls(series, clock, config):
    """Previous solution advanced to `clock`, zero-padded beyond its horizon."""
    if series is None or series.controls is None:
        return None
    shift = int(round((clock - series.start_time) / config.interval_length))
    shift = min(max(shift, 0), config.intervals)
    return np.concatenate([series.controls[shift:], np.zeros(shift)])


class RecedingHorizon:
    """Triggers a plan every `execute_duration` seconds and serves the active reference.

    With a modeled latency the new series is held back until trigger + latency.
    With a worker, plans run on another thread and take effect once they arrive;
    a trigger that finds the worker busy is skipped.
    """

    def __init__(self, track, params, config, worker=None):
        self.track = track
        self.params = params
        self.config = config.resolved(params)
        self.worker = worker
        self.active = None
        self.pending = None
        self.next_plan = 0.0
        self.hold_angle = None
        self.events = []

    def _activate(self, series, clock):
        self.active = series
        self.events.append({"type": "plan_active", "time": clock, "start_time": series.start_time})

    def _record(self, series):
        self.events.append({"type": "replan", "time": series.start_time, "iterations": series.iterations,
                            "converged": bool(series.converged), "cost": series.cost})

    def update(self, clock, state):
        """Advance to `clock`; returns the series planned at this tick, if any."""
        if self.hold_angle is None:
            self.hold_angle = float(state.steering_angle)

        if self.pending is not None and clock >= self.pending[1] - 1e-9:
            self._activate(self.pending[0], clock)
            self.pending = None

        if self.worker is not None:
            arrived = self.worker.poll()
            if arrived is not None:
                self._record(arrived)
                self._activate(arrived, clock)

        if clock < self.next_plan - 1e-9:
            return None
        self.next_plan += self.config.execute_duration

        warm = shifted_controls(self.pending[0] if self.pending else self.active, clock, self.config)
        if self.worker is not None:
            if not self.worker.submit(state, clock, warm):
                logger.warning(f"planner busy at t={clock:.2f}s, keeping the active series")
                self.events.append({"type": "plan_skipped", "time": clock})
            return None

        series = plan(state, self.track, self.params, self.config, start_time=clock, warm_start=warm)
        self._record(series)
        if self.config.latency > 0:
            self.pending = (series, clock + self.config.latency)
        else:
            self._activate(series, clock)
        return series

    def reference(self, clock):
        if self.active is None:
            return 0.0 if self.hold_angle is None else self.hold_angle
        return self.active.interpolate(clock)


def receding_horizon(planner_state, clock, vehicle_state=None):
    """Functional entry point over a RecedingHorizon; returns a newly planned series or None."""
    if vehicle_state is None:
        raise ValueError("receding_horizon needs the current vehicle state to plan from")
    return planner_state.update(clock, vehicle_state)
