"""Planar single-track vehicle at fixed forward speed.

Linear tires, states (x, y, yaw, v_y, r, delta) with the steering rate as the
control input. The same jitted kernels drive the simulated plant and the
planner's prediction model.
"""
import chex
import jax
import jax.numpy as jnp
import numpy as np

from workload_hsc.util import require

MAX_STEP = 0.02
FIFTEEN_MPH = 6.7056

STATE_FIELDS = ("x", "y", "yaw", "lateral_velocity", "yaw_rate", "steering_angle")


@chex.dataclass(frozen=True)
class VehicleParams:
    mass: float = 3000.0
    yaw_inertia: float = 4500.0
    dist_front: float = 1.6
    dist_rear: float = 1.8
    cornering_stiffness_front: float = 60000.0
    cornering_stiffness_rear: float = 60000.0
    cg_height: float = 0.9
    track_width: float = 1.8
    forward_speed: float = FIFTEEN_MPH
    gravity: float = 9.81
    steering_bound: float = 0.5
    steer_rate_bound: float = 0.5

    @classmethod
    def from_config(cls, section):
        defaults = cls()
        params = cls(**{k: float(section.get(k, defaults[k])) for k in defaults.keys()})
        params.validate()
        return params

    def validate(self):
        for key in self.keys():
            value = float(self[key])
            require(np.isfinite(value) and value > 0, key, value, "must be finite and > 0")

    @property
    def wheelbase(self):
        return self.dist_front + self.dist_rear

    @property
    def static_rear_load(self):
        return self.mass * self.gravity * self.dist_front / self.wheelbase


@chex.dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    lateral_velocity: float = 0.0
    yaw_rate: float = 0.0
    steering_angle: float = 0.0

    def to_array(self):
        return np.array([float(self[k]) for k in STATE_FIELDS])


# time derivative of every state field
VehicleStateDerivative = VehicleState


@chex.dataclass(frozen=True)
class TireLoads:
    rear_left: float
    rear_right: float


def _derivatives(state, params, steering_rate):
    u = params.forward_speed
    vy = state.lateral_velocity
    r = state.yaw_rate

    slip_front = state.steering_angle - (vy + params.dist_front * r) / u
    slip_rear = -(vy - params.dist_rear * r) / u
    force_front = params.cornering_stiffness_front * slip_front
    force_rear = params.cornering_stiffness_rear * slip_rear

    return VehicleState(
        x=u * jnp.cos(state.yaw) - vy * jnp.sin(state.yaw),
        y=u * jnp.sin(state.yaw) + vy * jnp.cos(state.yaw),
        yaw=r,
        lateral_velocity=(force_front + force_rear) / params.mass - u * r,
        yaw_rate=(params.dist_front * force_front - params.dist_rear * force_rear) / params.yaw_inertia,
        steering_angle=jnp.zeros_like(state.steering_angle) + steering_rate,
    )


def _rk4(state, steering_rate, dt, params):
    def axpy(s, k, h):
        return jax.tree_util.tree_map(lambda a, b: a + h * b, s, k)

    k1 = _derivatives(state, params, steering_rate)
    k2 = _derivatives(axpy(state, k1, dt / 2), params, steering_rate)
    k3 = _derivatives(axpy(state, k2, dt / 2), params, steering_rate)
    k4 = _derivatives(axpy(state, k3, dt), params, steering_rate)

    return jax.tree_util.tree_map(lambda s, a, b, c, d: s + dt / 6 * (a + 2 * b + 2 * c + d),
                                  state, k1, k2, k3, k4)


def _lateral_acceleration(state, params):
    rates = _derivatives(state, params, 0.0)
    return rates.lateral_velocity + params.forward_speed * state.yaw_rate


def _loads_from_lateral_acceleration(a_y, params):
    rear_share = params.dist_front / params.wheelbase
    static = params.mass * params.gravity * rear_share
    # positive a_y is a left turn, which unloads the left wheel
    transfer = params.mass * a_y * params.cg_height / params.track_width * rear_share
    return TireLoads(rear_left=static / 2 - transfer, rear_right=static / 2 + transfer)


def _tire_loads(state, params):
    return _loads_from_lateral_acceleration(_lateral_acceleration(state, params), params)


_derivatives_jit = jax.jit(_derivatives)
_rk4_jit = jax.jit(_rk4)
_tire_loads_jit = jax.jit(_tire_loads)


def check_state(state, params):
    for key in STATE_FIELDS:
        value = float(state[key])
        if not np.isfinite(value):
            raise ValueError(f"non-finite vehicle state field {key}={value!r}")
    delta = float(state.steering_angle)
    if abs(delta) > params.steering_bound + 1e-9:
        raise ValueError(f"steering_angle={delta!r} outside bound {params.steering_bound}")


def derivatives(state, params, steering_rate):
    check_state(state, params)
    if not np.isfinite(steering_rate):
        raise ValueError(f"non-finite steering_rate={steering_rate!r}")
    return _derivatives_jit(state, params, float(steering_rate))


def step(state, steering_rate, dt, params=None):
    """One fourth-order Runge-Kutta step of length dt (0 < dt <= 0.02 s)."""
    if params is None:
        params = VehicleParams()
    if not 0 < dt <= MAX_STEP:
        raise ValueError(f"dt={dt!r} outside (0, {MAX_STEP}]")
    check_state(state, params)
    if not np.isfinite(steering_rate):
        raise ValueError(f"non-finite steering_rate={steering_rate!r}")
    return _rk4_jit(state, float(steering_rate), float(dt), params)


def tire_vertical_loads(state, params):
    check_state(state, params)
    loads = _tire_loads_jit(state, params)
    return TireLoads(rear_left=float(loads.rear_left), rear_right=float(loads.rear_right))


def load_transfer(a_y, params):
    """Rear-axle loads for a given lateral acceleration."""
    loads = _loads_from_lateral_acceleration(float(a_y), params)
    return TireLoads(rear_left=float(loads.rear_left), rear_right=float(loads.rear_right))


def steady_state_cornering(params, steering_angle):
    """Steady (lateral_velocity, yaw_rate) at a fixed steering angle."""
    u = params.forward_speed
    cf, cr = params.cornering_stiffness_front, params.cornering_stiffness_rear
    af, ar = params.dist_front, params.dist_rear
    # rows: lateral force balance, yaw moment balance
    a = np.array([
        [-(cf + cr) / u, -(cf * af - cr * ar) / u - params.mass * u],
        [-(af * cf - ar * cr) / u, -(af * af * cf + ar * ar * cr) / u],
    ])
    b = -np.array([cf, af * cf]) * steering_angle
    vy, r = np.linalg.solve(a, b)
    return float(vy), float(r)


def steering_for_radius(params, radius):
    """Steady steering angle that holds a circle of the given (signed) radius."""
    _, r_per_rad = steady_state_cornering(params, 1.0)
    return params.forward_speed / radius / r_per_rad


def state_on_pose(x, y, yaw, params=None, radius=None):
    """Pose with zero lateral states, or the steady cornering states for `radius`."""
    if radius is None:
        return VehicleState(x=float(x), y=float(y), yaw=float(yaw))
    if params is None:
        params = VehicleParams()
    delta = steering_for_radius(params, radius)
    vy, r = steady_state_cornering(params, delta)
    return VehicleState(x=float(x), y=float(y), yaw=float(yaw), lateral_velocity=vy, yaw_rate=r,
                        steering_angle=delta)


def initial_state_on_track(track, params=None, radius=None):
    x, y, yaw = track.start_pose()
    return state_on_pose(x, y, yaw, params=params, radius=radius)
