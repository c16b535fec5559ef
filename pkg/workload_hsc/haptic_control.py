"""Torque-level shared control: PID autonomy torque, assistance level, blending,
steering-wheel dynamics and the moving-average conditioning of w_t and e_t."""
import collections
import dataclasses
import math

import numpy as np

from workload_hsc.util import require

MODERATE_WORKLOAD = 50.0


@dataclasses.dataclass(frozen=True)
class HapticConfig:
    kp: float = 40.0
    ki: float = 40.0
    kd: float = 1.5
    output_limit: float = 10.0
    # rad·s; ki * integral_limit caps the integral share of the torque at 2 N·m
    integral_limit: float = 0.05
    wheel_inertia: float = 0.08
    wheel_damping: float = 1.2
    wheel_stiffness: float = 4.0
    torque_max: float = 10.0
    clamp_beta: bool = False
    assistance_rate: float = 10.0
    filter_window: float = 1.0

    @classmethod
    def from_config(cls, section):
        defaults = cls()
        config = cls(**{f.name: section.get(f.name, getattr(defaults, f.name)) for f in dataclasses.fields(cls)})
        config.validate()
        return config

    def validate(self):
        for name in ("kp", "ki", "kd", "wheel_damping", "wheel_stiffness"):
            require(getattr(self, name) >= 0, name, getattr(self, name), "must be >= 0")
        for name in ("output_limit", "integral_limit", "wheel_inertia", "torque_max",
                     "assistance_rate", "filter_window"):
            require(getattr(self, name) > 0, name, getattr(self, name), "must be > 0")

    def pid(self, hold_angle=0.0):
        """PID whose integral alone holds the wheel at `hold_angle` against the centering spring."""
        integral = self.wheel_stiffness * hold_angle / self.ki if self.ki > 0 else 0.0
        integral = min(max(integral, -self.integral_limit), self.integral_limit)
        return PidState(kp=self.kp, ki=self.ki, kd=self.kd, output_limit=self.output_limit,
                        integral_limit=self.integral_limit, integral=integral)

    def wheel(self, params, angle=0.0):
        """Wheel at `angle`, stopped at the vehicle's steering bound."""
        return SteeringWheelState(angle=angle, inertia=self.wheel_inertia, damping=self.wheel_damping,
                                  stiffness=self.wheel_stiffness, bound=params.steering_bound)


@dataclasses.dataclass(frozen=True)
class AssistanceInputs:
    workload: float
    eyes_on_road: float
    normalized_torque: float

    def __post_init__(self):
        # estimator outputs are clamped, never rejected
        object.__setattr__(self, "workload", float(np.clip(self.workload, 0.0, 100.0)))
        object.__setattr__(self, "eyes_on_road", float(np.clip(self.eyes_on_road, 0.0, 1.0)))
        object.__setattr__(self, "normalized_torque", float(np.clip(self.normalized_torque, 0.0, 1.0)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def base_assistance(workload, normalized_torque):
    """β̄: high when over- or underloaded, dropping with the operator's own torque."""
    d = (np.asarray(workload, dtype=float) - MODERATE_WORKLOAD) / MODERATE_WORKLOAD
    tau = np.asarray(normalized_torque, dtype=float)
    floor = 0.9 * _sigmoid(0.3 * (MODERATE_WORKLOAD * np.abs(d) - 25.0)) + 0.1
    q = (72.0 * tau - 36.6 - 15.0 * d ** 2) / (5.9 - 2.5 * d ** 2)
    return 1.0 - (1.0 - floor) * _sigmoid(q)


def assistance_increment(workload, eyes_on_road):
    w = np.asarray(workload, dtype=float)
    e = np.asarray(eyes_on_road, dtype=float)
    return 0.1 * np.power(0.1 * np.abs(w - MODERATE_WORKLOAD) + 5.0, 1.0 - e) - 0.1


def assistance_level(inputs, clamp=False, adaptive=True):
    if not adaptive:
        return 1.0
    beta = float(base_assistance(inputs.workload, inputs.normalized_torque)
                 + assistance_increment(inputs.workload, inputs.eyes_on_road))
    if clamp:
        beta = min(max(beta, 0.0), 1.0)
    return beta


@dataclasses.dataclass(frozen=True)
class PidState:
    kp: float
    ki: float
    kd: float
    output_limit: float
    integral_limit: float
    integral: float = 0.0
    previous_error: float = None


def autonomy_torque(pid, reference_angle, measured_angle, dt):
    """PID on the steering-angle error; returns (τ_a, next PidState)."""
    if not dt > 0:
        raise ValueError(f"dt={dt!r} must be > 0")
    error = reference_angle - measured_angle
    previous = error if pid.previous_error is None else pid.previous_error

    integral = pid.integral + 0.5 * (error + previous) * dt
    integral = min(max(integral, -pid.integral_limit), pid.integral_limit)
    derivative = (error - previous) / dt

    torque = pid.kp * error + pid.ki * integral + pid.kd * derivative
    torque = min(max(torque, -pid.output_limit), pid.output_limit)
    return torque, dataclasses.replace(pid, integral=integral, previous_error=error)


def blend(human_torque, autonomy_torque, beta):
    return human_torque + beta * autonomy_torque


@dataclasses.dataclass(frozen=True)
class SteeringWheelState:
    angle: float = 0.0
    rate: float = 0.0
    inertia: float = 0.08
    damping: float = 1.2
    stiffness: float = 4.0
    bound: float = 0.5


def wheel_step(wheel, torque, dt):
    if not 0 < dt <= 0.02:
        raise ValueError(f"dt={dt!r} outside (0, 0.02]")
    accel = (torque - wheel.damping * wheel.rate - wheel.stiffness * wheel.angle) / wheel.inertia
    rate = wheel.rate + accel * dt
    angle = wheel.angle + rate * dt
    if abs(angle) > wheel.bound:
        angle = math.copysign(wheel.bound, angle)
        rate = 0.0
    return dataclasses.replace(wheel, angle=angle, rate=rate)


def normalize_torque(human_torque, torque_max):
    if not torque_max > 0:
        raise ValueError(f"torque_max={torque_max!r} must be > 0")
    return min(abs(human_torque) / torque_max, 1.0)


def moving_average_downsample(times, values, window=1.0, out_rate=10.0):
    """Trailing-window mean of (times, values) sampled at t0 + k / out_rate.

    Each output averages the inputs in (T - window, T]; an empty window
    repeats the previous output, starting from the first sample.
    """
    if not window > 0:
        raise ValueError(f"window={window!r} must be > 0")
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0:
        return np.empty(0), np.empty(0)
    if np.any(np.diff(times) < 0):
        raise ValueError("timestamps must be non-decreasing")

    n_out = int(math.floor((times[-1] - times[0]) * out_rate + 1e-9)) + 1
    out_times = times[0] + np.arange(n_out) / out_rate
    hi = np.searchsorted(times, out_times + 1e-9, side="right")
    lo = np.searchsorted(times, out_times - window + 1e-9, side="right")

    out = np.empty(n_out)
    previous = values[0]
    for k in range(n_out):
        if hi[k] > lo[k]:
            previous = float(np.mean(values[lo[k]:hi[k]]))
        out[k] = previous
    return out_times, out


class MovingAverage(object):
    """Online form of `moving_average_downsample` with the same window rule."""

    def __init__(self, window=1.0):
        self.window = window
        self.samples = collections.deque()
        self.previous = None

    def push(self, clock, value):
        self.samples.append((clock, value))

    def value(self, clock):
        while self.samples and self.samples[0][0] <= clock - self.window + 1e-9:
            self.samples.popleft()
        if self.samples:
            self.previous = sum(v for _, v in self.samples) / len(self.samples)
        elif self.previous is None:
            return math.nan
        return self.previous
