"""Closed-loop scenario runner.

One fixed 100 Hz clock drives every component. Per tick t = i / 100:

  1. receding-horizon replan (every execute_duration) and δ_ref lookup
  2. surveillance stream: credit dwell, score stimuli whose deadline passed
  3. operator attention update
  4. gaze sample whenever the 30 Hz schedule ticks over
  5. operator torque τ_h from the true-centerline errors
  6. every 10th tick: classify the last 4 s of gaze, filter w_t and e_t, update β
  7. PID autonomy torque τ_a against δ_ref, measured on the wheel angle
  8. τ_c = τ_h + β τ_a and one steering-wheel step to δ_c
  9. plant step with its steering angle set to δ_c
"""
import collections
import dataclasses
import enum
import json
import logging
import math
import os

import jax
import jax.numpy as jnp
import numpy as np
from tqdm import tqdm

from workload_hsc import haptic_control as hc
from workload_hsc import vehicle_dynamics as vd
from workload_hsc.nmpc_planner import OcpConfig, RecedingHorizon
from workload_hsc.operator_model import Focus, Operator, OperatorConfig, gaze_due, validate_schedule, wrap_angle
from workload_hsc.planner_worker import PlannerWorker
from workload_hsc.tracks import load_track, nearest_on
from workload_hsc.util import PLANT_RATE, MissingModelsError, SimulationError, format_float, get_section, require
from workload_hsc.workload_hmm import WINDOW_LENGTH, GazeWindow, Screen, classify, eyes_on_road, workload_value

try:
    from smart_open import open
except ImportError:
    pass

logger = logging.getLogger(__name__)

DT = 1.0 / PLANT_RATE

COLUMNS = (
    "time", "x", "y", "yaw", "lateral_velocity", "yaw_rate", "steering_angle",
    "delta_ref", "tau_h", "tau_a", "beta", "tau_c",
    "workload", "eyes_on_road", "workload_raw", "eyes_on_road_raw", "normalized_torque",
    "attention", "cross_track_error", "heading_error", "arc_length",
    "load_rear_left", "load_rear_right", "surveillance_interval",
)


class Scheme(enum.Enum):
    ADAPTIVE = "adaptive"
    NON_ADAPTIVE = "non_adaptive"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace("-", "_"))


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    track_id: str = "straight"
    scheme: Scheme = Scheme.ADAPTIVE
    urgency_schedule: tuple = ((0.0, 1.5), (90.0, 6.5))
    duration: float = 180.0
    localization_offset: float = 1.0
    seed: int = 0
    operator_enabled: bool = True
    force_beta: float = None
    clamp_beta: bool = False
    planner_latency: float = 0.0
    async_planning: bool = False
    initial_radius: float = None

    @classmethod
    def from_config(cls, section):
        defaults = cls()
        values = {f.name: section.get(f.name, getattr(defaults, f.name)) for f in dataclasses.fields(cls)}
        values["scheme"] = Scheme.parse(values["scheme"])
        values["urgency_schedule"] = tuple((float(s), float(i)) for s, i in values["urgency_schedule"])
        config = cls(**values)
        config.validate()
        return config

    def validate(self):
        require(self.duration > 0, "duration", self.duration, "must be > 0")
        validate_schedule(self.urgency_schedule)
        require(all(s < self.duration for s, _ in self.urgency_schedule), "urgency_schedule",
                self.urgency_schedule, "every start must fall inside the run")
        require(self.planner_latency >= 0, "planner_latency", self.planner_latency, "must be >= 0")
        if self.force_beta is not None:
            require(math.isfinite(self.force_beta) and self.force_beta >= 0, "force_beta", self.force_beta,
                    "must be finite and >= 0")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["scheme"] = self.scheme.value
        d["urgency_schedule"] = [list(p) for p in self.urgency_schedule]
        return d


@dataclasses.dataclass
class Metrics:
    lane_keeping_error: float
    mean_operator_torque: float
    detection_accuracy: float
    min_tire_load: float
    converged_plans: float
    mean_autonomy_torque: float = None
    mean_beta: float = None
    mean_workload: float = None
    mean_eyes_on_road: float = None
    stimuli: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class RunResult:
    series: dict
    events: list
    duration: float
    metrics: Metrics = None
    halves: list = None
    counts: dict = dataclasses.field(default_factory=dict)

    def __len__(self):
        return len(self.series["time"])


@dataclasses.dataclass
class Components:
    """Everything a scenario needs besides its own ScenarioConfig."""
    params: vd.VehicleParams = dataclasses.field(default_factory=vd.VehicleParams)
    ocp: OcpConfig = dataclasses.field(default_factory=OcpConfig)
    haptic: hc.HapticConfig = dataclasses.field(default_factory=hc.HapticConfig)
    operator: OperatorConfig = dataclasses.field(default_factory=OperatorConfig)
    models: tuple = None

    @classmethod
    def from_config(cls, config, models=None):
        params = vd.VehicleParams.from_config(get_section(config, "vehicle"))
        return cls(params=params,
                   ocp=OcpConfig.from_config(get_section(config, "planner"), params),
                   haptic=hc.HapticConfig.from_config(get_section(config, "haptic")),
                   operator=OperatorConfig.from_config(get_section(config, "operator")),
                   models=models)


def _query(state, params, geometry):
    loads = vd._tire_loads(state, params)
    error, heading, arc = nearest_on(geometry, jnp.stack([state.x, state.y]))
    return jnp.stack([state.x, state.y, state.yaw, state.lateral_velocity, state.yaw_rate, state.steering_angle,
                      error, heading, arc, loads.rear_left, loads.rear_right])


@jax.jit
def _plant_tick(state, steering_angle, params, geometry):
    state = state.replace(steering_angle=jnp.asarray(steering_angle, dtype=jnp.float64))
    state = vd._rk4(state, 0.0, DT, params)
    return state, _query(state, params, geometry)


_initial_query = jax.jit(_query)


class WorkloadEstimator(object):
    """Rolling 4 s gaze window -> (w_t, e_t), filtered by a trailing moving average."""

    def __init__(self, models, window=1.0):
        self.models = models
        self.timestamps = collections.deque(maxlen=WINDOW_LENGTH)
        self.xy = collections.deque(maxlen=WINDOW_LENGTH)
        self.driving = collections.deque(maxlen=WINDOW_LENGTH)
        self.workload_filter = hc.MovingAverage(window)
        self.eyes_filter = hc.MovingAverage(window)
        self.updates = 0

    def add(self, point):
        self.timestamps.append(point.timestamp)
        self.xy.append((point.x, point.y))
        self.driving.append(point.screen == Screen.DRIVING)

    def raw(self):
        if len(self.xy) < WINDOW_LENGTH:
            # no full window yet: moderate workload and the Driving share seen so far
            return 50.0, (float(np.mean(self.driving)) if self.driving else 1.0)
        window = GazeWindow(list(self.timestamps), list(self.xy), list(self.driving))
        e = eyes_on_road(window)
        if self.models is None:
            return 50.0, e
        return workload_value(classify(window, *self.models)), e

    def update(self, clock):
        w_raw, e_raw = self.raw()
        self.workload_filter.push(clock, w_raw)
        self.eyes_filter.push(clock, e_raw)
        self.updates += 1
        return self.workload_filter.value(clock), self.eyes_filter.value(clock), w_raw, e_raw


def run_scenario(scenario, components=None, progress=False):
    """Simulate one scenario; deterministic for a fixed (scenario, components)."""
    if components is None:
        components = Components()
    scenario.validate()
    params, haptic = components.params, components.haptic
    adaptive = scenario.scheme == Scheme.ADAPTIVE
    if adaptive and components.models is None and scenario.force_beta is None:
        raise MissingModelsError(None)

    true_track = load_track(scenario.track_id)
    reference_track = true_track.offset(scenario.localization_offset) if scenario.localization_offset else true_track
    ocp = dataclasses.replace(components.ocp.resolved(params), latency=scenario.planner_latency)

    worker = PlannerWorker(reference_track, params, ocp) if scenario.async_planning else None
    planner = RecedingHorizon(reference_track, params, ocp, worker=worker)
    operator = Operator(components.operator, scenario.urgency_schedule, seed=scenario.seed)
    estimator = WorkloadEstimator(components.models, haptic.filter_window)
    assistance_every = int(round(PLANT_RATE / haptic.assistance_rate))

    state = vd.initial_state_on_track(true_track, params, radius=scenario.initial_radius)
    query = np.asarray(_initial_query(state, params, true_track.geometry))
    wheel = haptic.wheel(params, angle=float(state.steering_angle))
    pid = haptic.pid(hold_angle=wheel.angle)

    n_ticks = int(round(scenario.duration * PLANT_RATE))
    rows = np.empty((n_ticks, len(COLUMNS)))
    events = []
    gaze_samples = 0
    beta = 1.0
    w_f = e_f = w_raw = e_raw = math.nan
    tau_hat = 0.0

    try:
        for i in tqdm(range(n_ticks), desc="simulating", disable=not progress):
            clock = i / PLANT_RATE

            planned = planner.update(clock, state)
            if planned is not None and not planned.converged:
                events.append({"type": "plan_not_converged", "time": clock, "iterations": planned.iterations})
            delta_ref = planner.reference(clock)

            for outcome in operator.advance(clock, DT):
                events.append(dict(type="stimulus", time=clock, **outcome))

            if gaze_due(i):
                estimator.add(operator.gaze(clock))
                gaze_samples += 1

            cross_track, heading = float(query[6]), float(query[7])
            heading_error = wrap_angle(float(query[2]) - heading)
            tau_h = operator.torque(cross_track, heading_error) if scenario.operator_enabled else 0.0

            if i % assistance_every == 0:
                w_f, e_f, w_raw, e_raw = estimator.update(clock)
                tau_hat = hc.normalize_torque(tau_h, haptic.torque_max)
                if scenario.force_beta is not None:
                    beta = float(scenario.force_beta)
                else:
                    inputs = hc.AssistanceInputs(workload=w_f, eyes_on_road=e_f, normalized_torque=tau_hat)
                    beta = hc.assistance_level(inputs, clamp=scenario.clamp_beta or haptic.clamp_beta,
                                               adaptive=adaptive)

            tau_a, pid = hc.autonomy_torque(pid, delta_ref, wheel.angle, DT)
            tau_c = hc.blend(tau_h, tau_a, beta)
            wheel = hc.wheel_step(wheel, tau_c, DT)

            rows[i] = (clock, *query[:6], delta_ref, tau_h, tau_a, beta, tau_c, w_f, e_f, w_raw, e_raw, tau_hat,
                       1.0 if operator.attention.focus == Focus.ON_ROAD else 0.0, cross_track, heading_error,
                       query[8], query[9], query[10], operator.stream.interval)
            for name, value in (("tau_h", tau_h), ("tau_a", tau_a), ("beta", beta), ("tau_c", tau_c),
                                ("delta_c", wheel.angle)):
                if not math.isfinite(value):
                    raise SimulationError(i, clock, name, value)

            state, query = _plant_tick(state, wheel.angle, params, true_track.geometry)
            query = np.asarray(query)
            if not np.all(np.isfinite(query)):
                bad = vd.STATE_FIELDS[int(np.argmin(np.isfinite(query[:6])))] if not np.all(
                    np.isfinite(query[:6])) else "tire_loads"
                raise SimulationError(i, clock, bad, query.tolist())
    finally:
        if worker is not None:
            worker.close()

    events = sorted(planner.events + events, key=lambda e: e["time"])
    series = {name: rows[:, k] for k, name in enumerate(COLUMNS)}
    result = RunResult(series=series, events=events, duration=scenario.duration,
                       counts={"ticks": n_ticks, "gaze_samples": gaze_samples,
                               "assistance_updates": estimator.updates})
    result.metrics = compute_metrics(result, true_track)
    split = scenario.duration / 2
    result.halves = [compute_metrics(result, true_track, window=(0.0, split)),
                     compute_metrics(result, true_track, window=(split, scenario.duration))]
    logger.info(f"{scenario.scheme.value} run on {scenario.track_id} (seed {scenario.seed}): "
                f"lane keeping {result.metrics.lane_keeping_error:.3f} m, "
                f"operator torque {result.metrics.mean_operator_torque:.3f} N·m")
    return result


def compute_metrics(result, track, window=None):
    """Run metrics over all ticks, or over ticks with window[0] <= t < window[1]."""
    series = result.series
    times = np.asarray(series["time"], dtype=float)
    mask = np.ones(len(times), dtype=bool) if window is None else (times >= window[0] - 1e-9) & (
        times < window[1] - 1e-9)
    if not np.any(mask):
        raise ValueError(f"no ticks inside window {window}")

    errors, _, _ = track.nearest_many(np.asarray(series["x"])[mask], np.asarray(series["y"])[mask])
    loads = np.minimum(np.asarray(series["load_rear_left"])[mask], np.asarray(series["load_rear_right"])[mask])

    def mean_of(name, absolute=False):
        if name not in series:
            return None
        values = np.asarray(series[name], dtype=float)[mask]
        values = values[np.isfinite(values)]
        if not values.size:
            return None
        return float(np.mean(np.abs(values) if absolute else values))

    def inside(t):
        return window is None or window[0] - 1e-9 <= t < window[1] - 1e-9

    stimuli = [e for e in result.events if e["type"] == "stimulus" and inside(e["deadline"])]
    plans = [e for e in result.events if e["type"] == "replan" and inside(e["time"])]
    return Metrics(
        lane_keeping_error=float(np.mean(np.abs(errors))),
        mean_operator_torque=mean_of("tau_h", absolute=True),
        detection_accuracy=(sum(e["outcome"] == "correct" for e in stimuli) / len(stimuli)) if stimuli else None,
        min_tire_load=float(np.min(loads)),
        converged_plans=(sum(bool(e["converged"]) for e in plans) / len(plans)) if plans else None,
        mean_autonomy_torque=mean_of("tau_a", absolute=True),
        mean_beta=mean_of("beta"),
        mean_workload=mean_of("workload"),
        mean_eyes_on_road=mean_of("eyes_on_road"),
        stimuli=len(stimuli),
    )


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(payload, path):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)


def write_run_csv(result, path):
    with open(path, "w") as f:
        f.write(",".join(COLUMNS) + "\n")
        columns = [np.asarray(result.series[name]) for name in COLUMNS]
        for i in range(len(result)):
            f.write(",".join(format_float(c[i]) for c in columns) + "\n")


def write_run(result, out_dir, scenario=None):
    os.makedirs(out_dir, exist_ok=True)
    write_run_csv(result, os.path.join(out_dir, "run.csv"))
    write_json({"overall": result.metrics.to_dict(), "halves": [h.to_dict() for h in result.halves],
                "counts": result.counts}, os.path.join(out_dir, "metrics.json"))
    write_json(result.events, os.path.join(out_dir, "events.json"))
    if scenario is not None:
        write_json(scenario.to_dict(), os.path.join(out_dir, "scenario.json"))
    logger.info(f"wrote run outputs to {out_dir}")
