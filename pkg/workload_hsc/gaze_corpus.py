"""Labelled gaze-window corpus from synthetic participants.

Every participant drives `tracks_per_participant` tracks; each track is split
into three equal portions with surveillance intervals ordered by a cyclic
Latin square. Windows cut from the 1.5 s portions are High workload, windows
from the 6.5 s portions Moderate; the 2.5 s portions are left unlabelled.
"""
import dataclasses
import logging

import numpy as np
from tqdm import tqdm

from workload_hsc.operator_model import OperatorConfig, simulate_gaze
from workload_hsc.util import require
from workload_hsc.workload_hmm import WINDOW_LENGTH, WorkloadLabel, windows_from_log

logger = logging.getLogger(__name__)

LABELS = {1.5: WorkloadLabel.HIGH, 6.5: WorkloadLabel.MODERATE}


@dataclasses.dataclass(frozen=True)
class CorpusConfig:
    participants: int = 12
    tracks_per_participant: int = 6
    portion_duration: float = 60.0
    intervals: tuple = (1.5, 2.5, 6.5)
    windows_per_portion: int = 5
    participant_spread: float = 0.2
    seed: int = 0

    @classmethod
    def from_config(cls, section):
        defaults = cls()
        values = {f.name: section.get(f.name, getattr(defaults, f.name)) for f in dataclasses.fields(cls)}
        values["intervals"] = tuple(float(i) for i in values["intervals"])
        config = cls(**values)
        config.validate()
        return config

    def validate(self):
        require(self.participants >= 1, "participants", self.participants, "must be >= 1")
        require(self.tracks_per_participant >= 1, "tracks_per_participant", self.tracks_per_participant,
                "must be >= 1")
        require(self.windows_per_portion >= 1, "windows_per_portion", self.windows_per_portion, "must be >= 1")
        require(self.portion_duration * 30 >= WINDOW_LENGTH + self.windows_per_portion, "portion_duration",
                self.portion_duration, f"must hold {self.windows_per_portion} distinct {WINDOW_LENGTH}-point windows")
        require(0 <= self.participant_spread < 1, "participant_spread", self.participant_spread,
                "must lie in [0, 1)")


def latin_square_order(intervals, participant, track):
    shift = (participant + track) % len(intervals)
    return tuple(intervals[shift:]) + tuple(intervals[:shift])


def track_schedule(config, participant, track):
    order = latin_square_order(config.intervals, participant, track)
    return [(k * config.portion_duration, interval) for k, interval in enumerate(order)]


def _portion_windows(timestamps, xy, driving, start, end, count, rng):
    inside = np.flatnonzero((timestamps >= start - 1e-9) & (timestamps < end - 1e-9))
    candidates = inside[:len(inside) - WINDOW_LENGTH + 1]
    starts = np.sort(rng.choice(candidates, size=count, replace=False))
    return windows_from_log(timestamps, xy, driving, starts)


def generate_corpus(config, operator_config=None):
    """participant id -> list of (GazeWindow, WorkloadLabel), deterministic for a fixed seed."""
    if operator_config is None:
        operator_config = OperatorConfig()
    dataset = {}
    total = config.participants * config.tracks_per_participant
    with tqdm(total=total, desc="gaze corpus") as pbar:
        for p in range(config.participants):
            participant = operator_config.for_participant(p, config.participant_spread)
            items = []
            for k in range(config.tracks_per_participant):
                schedule = track_schedule(config, p, k)
                seed = np.random.SeedSequence([config.seed, p, k])
                run_seed = int(seed.generate_state(1)[0])
                timestamps, xy, driving, _, _ = simulate_gaze(participant, schedule,
                                                              len(schedule) * config.portion_duration,
                                                              seed=run_seed)
                rng = np.random.default_rng(seed)
                for start, interval in schedule:
                    label = LABELS.get(interval)
                    if label is None:
                        continue
                    windows = _portion_windows(timestamps, xy, driving, start, start + config.portion_duration,
                                               config.windows_per_portion, rng)
                    items.extend((w, label) for w in windows)
                pbar.update(1)
            dataset[p] = items
    logger.info(f"generated {sum(len(v) for v in dataset.values())} labelled windows "
                f"from {config.participants} participants")
    return dataset


def split_by_label(dataset):
    moderate = [w for items in dataset.values() for w, label in items if label == WorkloadLabel.MODERATE]
    high = [w for items in dataset.values() for w, label in items if label == WorkloadLabel.HIGH]
    return moderate, high
