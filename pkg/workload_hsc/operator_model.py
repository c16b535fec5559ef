"""Scripted operator: attention renewal process between the two screens,
PD steering torque toward the true centerline, gaze samples and the
surveillance-task response model."""
import dataclasses
import enum
import logging
import math

import numpy as np

from workload_hsc.util import PLANT_RATE, require
from workload_hsc.workload_hmm import GAZE_RATE, GazePoint, Screen

logger = logging.getLogger(__name__)

DRIVING_CENTER = (0.75, 0.5)
SURVEILLANCE_CENTER = (0.25, 0.5)
REFERENCE_INTERVAL = 6.5


class Focus(enum.Enum):
    ON_ROAD = "on_road"
    ON_SURVEILLANCE = "on_surveillance"


@dataclasses.dataclass(frozen=True)
class OperatorConfig:
    pd_gain_offset: float = 4.0
    pd_gain_heading: float = 2.0
    torque_noise_std: float = 0.05
    torque_max: float = 10.0
    reaction_delay: float = 0.3
    glance_mean_on_road: float = 10.0
    glance_mean_surveillance_base: float = 0.5
    gaze_cluster_std: float = 0.05
    detection_base_prob: float = 0.3
    detection_dwell_gain: float = 1.0
    blank_duration: float = 1.0
    threat_probability: float = 0.5
    seed: int = 0

    @classmethod
    def from_config(cls, section):
        defaults = cls()
        config = cls(**{f.name: section.get(f.name, getattr(defaults, f.name)) for f in dataclasses.fields(cls)})
        config.validate()
        return config

    def validate(self):
        for name in ("pd_gain_offset", "pd_gain_heading", "torque_noise_std", "reaction_delay",
                     "gaze_cluster_std", "detection_dwell_gain", "blank_duration"):
            require(getattr(self, name) >= 0, name, getattr(self, name), "must be >= 0")
        for name in ("glance_mean_on_road", "glance_mean_surveillance_base", "torque_max"):
            require(getattr(self, name) > 0, name, getattr(self, name), "must be > 0")
        for name in ("detection_base_prob", "threat_probability"):
            require(0 <= getattr(self, name) <= 1, name, getattr(self, name), "must lie in [0, 1]")

    def for_participant(self, index, spread=0.2):
        """Copy with glance means jittered by seeded factors in [1 - spread, 1 + spread]."""
        rng = np.random.default_rng([int(self.seed), int(index)])
        road, surveillance = rng.uniform(1 - spread, 1 + spread, size=2)
        return dataclasses.replace(self, glance_mean_on_road=self.glance_mean_on_road * road,
                                   glance_mean_surveillance_base=self.glance_mean_surveillance_base * surveillance)


@dataclasses.dataclass(frozen=True)
class AttentionState:
    focus: Focus = Focus.ON_ROAD
    time_in_state: float = 0.0
    dwell_target: float = math.inf


class SurveillanceStream(object):
    """Stimulus sets arriving every `interval` seconds.

    Each set opens with a blank screen of `blank_duration`; its images stay
    visible until the next deadline, when the set is scored.
    """

    def __init__(self, interval, blank_duration=1.0, threat_probability=0.5, start=0.0, rng=None, schedule=None):
        require(interval > 0, "interval", interval, "must be > 0")
        self.interval = interval
        self.schedule = schedule
        self.blank_duration = blank_duration
        self.threat_probability = threat_probability
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._open(start)

    def _open(self, start):
        if self.schedule is not None:
            self.interval = interval_at(self.schedule, start)
        self.cycle_start = start
        # an endless interval never shows a stimulus
        self.onset = start + self.blank_duration if math.isfinite(self.interval) else math.inf
        self.next_deadline = start + self.interval
        self.dwell = 0.0
        self.threat = bool(self.rng.random() < self.threat_probability) if math.isfinite(self.interval) else False

    def visible(self, clock):
        return self.onset <= clock + 1e-9 and clock < self.next_deadline - 1e-9

    @property
    def pending(self):
        return self.dwell == 0.0

    def overdue(self, clock, reaction_delay):
        """A visible, not yet inspected stimulus has waited past the reaction delay."""
        return self.visible(clock) and self.pending and clock >= self.onset + reaction_delay - 1e-9

    def advance(self, clock, focus, dt, config, rng):
        """Credit dwell for the last tick and score every set whose deadline passed."""
        if focus == Focus.ON_SURVEILLANCE and self.visible(clock - dt):
            self.dwell += dt
        outcomes = []
        while clock >= self.next_deadline - 1e-9:
            outcome = surveillance_response(self.dwell, config, rng)
            outcomes.append({"onset": self.onset, "deadline": self.next_deadline, "interval": self.interval,
                             "threat": self.threat, "dwell": self.dwell, "outcome": outcome})
            self._open(self.next_deadline)
        return outcomes


def surveillance_dwell_mean(config, interval):
    return config.glance_mean_surveillance_base * REFERENCE_INTERVAL / interval


def attention_step(state, stream, dt, rng, config, clock=None):
    """Advance the two-state renewal process by dt.

    An unseen stimulus overdue by the reaction delay forces a glance at the
    surveillance screen; otherwise each focus lasts its exponential dwell.
    """
    if not dt > 0:
        raise ValueError(f"dt={dt!r} must be > 0")
    elapsed = state.time_in_state + dt
    if state.focus == Focus.ON_ROAD:
        forced = clock is not None and stream is not None and stream.overdue(clock, config.reaction_delay)
        if forced or elapsed >= state.dwell_target:
            mean = surveillance_dwell_mean(config, stream.interval if stream is not None else math.inf)
            return AttentionState(focus=Focus.ON_SURVEILLANCE, time_in_state=0.0,
                                  dwell_target=rng.exponential(mean))
    elif elapsed >= state.dwell_target:
        return AttentionState(focus=Focus.ON_ROAD, time_in_state=0.0,
                              dwell_target=rng.exponential(config.glance_mean_on_road))
    return dataclasses.replace(state, time_in_state=elapsed)


def initial_attention(config, rng):
    return AttentionState(focus=Focus.ON_ROAD, time_in_state=0.0, dwell_target=rng.exponential(config.glance_mean_on_road))


def wrap_angle(angle):
    return (angle + math.pi) % (2 * math.pi) - math.pi


def torque_from_errors(cross_track, heading_error, attention, config, rng):
    if attention.focus == Focus.ON_SURVEILLANCE:
        return 0.0
    torque = -config.pd_gain_offset * cross_track - config.pd_gain_heading * heading_error
    if config.torque_noise_std > 0:
        torque += rng.normal(0.0, config.torque_noise_std)
    return min(max(torque, -config.torque_max), config.torque_max)


def operator_torque(vehicle, track, attention, config, rng):
    """PD torque toward the true centerline; hands off while watching surveillance."""
    if attention.focus == Focus.ON_SURVEILLANCE:
        return 0.0
    nearest = track.nearest(float(vehicle.x), float(vehicle.y))
    return torque_from_errors(nearest.error, wrap_angle(float(vehicle.yaw) - nearest.heading), attention, config, rng)


def gaze_sample(attention, config, rng, clock=0.0):
    """One gaze point around the attended screen's center, tagged by the half-plane it lands in."""
    center = DRIVING_CENTER if attention.focus == Focus.ON_ROAD else SURVEILLANCE_CENTER
    if config.gaze_cluster_std > 0:
        x, y = np.asarray(center) + config.gaze_cluster_std * rng.standard_normal(2)
    else:
        x, y = center
    return GazePoint(timestamp=clock, x=float(x), y=float(y), screen=Screen.of(x))


def surveillance_response(dwell, config, rng):
    """'missed' without any dwell, else 'correct' with probability min(1, base + gain * dwell)."""
    if dwell <= 0:
        return "missed"
    p = min(1.0, config.detection_base_prob + config.detection_dwell_gain * dwell)
    return "correct" if rng.random() < p else "incorrect"


def gaze_due(tick):
    return tick == 0 or (tick * int(GAZE_RATE)) // PLANT_RATE != ((tick - 1) * int(GAZE_RATE)) // PLANT_RATE


def interval_at(schedule, clock):
    current = schedule[0][1]
    for start, interval in schedule:
        if clock >= start - 1e-9:
            current = interval
    return current


def validate_schedule(schedule, duration=None):
    if not schedule or abs(schedule[0][0]) > 1e-9:
        raise ValueError(f"urgency schedule must start at 0, got {schedule!r}")
    starts = [s for s, _ in schedule]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ValueError(f"urgency schedule starts must be strictly increasing, got {starts}")
    for _, interval in schedule:
        require(interval > 0, "interval", interval, "must be > 0")


class Operator(object):
    """Attention, surveillance stream, gaze and torque of one synthetic operator.

    Each concern draws from its own child generator so that, for instance,
    torque noise never shifts the attention trace.
    """

    def __init__(self, config, schedule, seed=None):
        validate_schedule(schedule)
        self.config = config
        self.schedule = list(schedule)
        seed = config.seed if seed is None else seed
        attention_seq, stimulus_seq, gaze_seq, torque_seq = np.random.SeedSequence(int(seed)).spawn(4)
        self.attention_rng = np.random.default_rng(attention_seq)
        self.stimulus_rng = np.random.default_rng(stimulus_seq)
        self.gaze_rng = np.random.default_rng(gaze_seq)
        self.torque_rng = np.random.default_rng(torque_seq)
        self.stream = SurveillanceStream(schedule[0][1], config.blank_duration, config.threat_probability,
                                         rng=self.stimulus_rng, schedule=self.schedule)
        self.attention = initial_attention(config, self.attention_rng)

    def advance(self, clock, dt):
        """Surveillance stream then attention for the tick ending at `clock`; returns scored stimuli."""
        if clock > 0:
            outcomes = self.stream.advance(clock, self.attention.focus, dt, self.config, self.stimulus_rng)
            self.attention = attention_step(self.attention, self.stream, dt, self.attention_rng, self.config,
                                            clock=clock)
            return outcomes
        return []

    def gaze(self, clock):
        return gaze_sample(self.attention, self.config, self.gaze_rng, clock)

    def torque(self, cross_track, heading_error):
        return torque_from_errors(cross_track, heading_error, self.attention, self.config, self.torque_rng)


def simulate_gaze(config, schedule, duration, seed=None):
    """Gaze log and stimulus outcomes of the operator alone, without a vehicle.

    Returns (timestamps, xy, driving, on_road_fraction, outcomes).
    """
    operator = Operator(config, schedule, seed=seed)
    dt = 1.0 / PLANT_RATE
    n_ticks = int(round(duration * PLANT_RATE))
    timestamps, xy, driving, outcomes = [], [], [], []
    on_road = 0
    for i in range(n_ticks):
        clock = i / PLANT_RATE
        outcomes.extend(operator.advance(clock, dt))
        on_road += operator.attention.focus == Focus.ON_ROAD
        if gaze_due(i):
            point = operator.gaze(clock)
            timestamps.append(clock)
            xy.append((point.x, point.y))
            driving.append(point.screen == Screen.DRIVING)
    return (np.array(timestamps), np.array(xy).reshape(-1, 2), np.array(driving, dtype=bool),
            on_road / max(n_ticks, 1), outcomes)


def detection_accuracy(outcomes):
    if not outcomes:
        return None
    return sum(o["outcome"] == "correct" for o in outcomes) / len(outcomes)
