import numpy as np
import pytest

from workload_hsc.gaze_corpus import CorpusConfig, generate_corpus, latin_square_order, split_by_label, track_schedule
from workload_hsc.operator_model import OperatorConfig
from workload_hsc.workload_hmm import (WINDOW_LENGTH, WorkloadLabel, classify_many, em_train, eyes_on_road,
                                       holdout_evaluate)

TINY = CorpusConfig(participants=2, tracks_per_participant=1, portion_duration=10.0, windows_per_portion=2, seed=4)


def test_latin_square_rotates_with_participant_and_track():
    intervals = (1.5, 2.5, 6.5)
    assert latin_square_order(intervals, 0, 0) == (1.5, 2.5, 6.5)
    assert latin_square_order(intervals, 1, 0) == (2.5, 6.5, 1.5)
    assert latin_square_order(intervals, 1, 1) == (6.5, 1.5, 2.5)
    assert latin_square_order(intervals, 2, 1) == (1.5, 2.5, 6.5)
    # every interval takes every position across three participants
    positions = {latin_square_order(intervals, p, 0).index(1.5) for p in range(3)}
    assert positions == {0, 1, 2}


def test_track_schedule_splits_into_equal_portions():
    config = CorpusConfig(portion_duration=60.0)
    assert track_schedule(config, 1, 0) == [(0.0, 2.5), (60.0, 6.5), (120.0, 1.5)]


def test_tiny_corpus_layout():
    dataset = generate_corpus(TINY)
    assert sorted(dataset) == [0, 1]
    for items in dataset.values():
        labels = [label for _, label in items]
        assert labels.count(WorkloadLabel.HIGH) == 2
        assert labels.count(WorkloadLabel.MODERATE) == 2
        for window, _ in items:
            assert len(window) == WINDOW_LENGTH
            assert window.timestamps[-1] - window.timestamps[0] < TINY.portion_duration

    moderate, high = split_by_label(dataset)
    assert len(moderate) == len(high) == 4


def test_windows_stay_inside_their_portion():
    dataset = generate_corpus(TINY)
    for p, items in dataset.items():
        starts = {interval: start for start, interval in track_schedule(TINY, p, 0)}
        for window, label in items:
            start = starts[1.5 if label == WorkloadLabel.HIGH else 6.5]
            assert window.timestamps[0] >= start - 1e-9
            assert window.timestamps[-1] < start + TINY.portion_duration


def test_corpus_is_deterministic():
    first, second = generate_corpus(TINY), generate_corpus(TINY)
    for p in first:
        for (a, label_a), (b, label_b) in zip(first[p], second[p]):
            assert label_a == label_b
            np.testing.assert_array_equal(a.xy, b.xy)
            np.testing.assert_array_equal(a.timestamps, b.timestamps)


@pytest.mark.parametrize("section", [
    {"portion_duration": 3.0},
    {"participants": 0},
    {"participant_spread": 1.0},
])
def test_invalid_corpus_configs(section):
    with pytest.raises(ValueError):
        CorpusConfig.from_config(section)


@pytest.mark.slow
def test_trained_models_separate_the_two_urgencies():
    config = CorpusConfig(participants=4, tracks_per_participant=2, portion_duration=30.0, windows_per_portion=5)
    moderate, high = split_by_label(generate_corpus(config))
    assert np.mean([eyes_on_road(w) for w in high]) < np.mean([eyes_on_road(w) for w in moderate])

    model_moderate = em_train(moderate, 2, seed=0)
    model_high = em_train(high, 2, seed=0)
    predicted = classify_many(moderate + high, model_moderate, model_high)
    truth = np.array([WorkloadLabel.MODERATE] * len(moderate) + [WorkloadLabel.HIGH] * len(high))
    assert np.mean(predicted == truth) >= 0.75


@pytest.mark.slow
def test_participant_holdout_on_the_default_corpus():
    dataset = generate_corpus(CorpusConfig(), OperatorConfig())
    assert len(dataset) == 12
    summary = holdout_evaluate(dataset, n_runs=100, holdout_size=3, seed=0, n_states=2)
    assert summary["f1"]["mean"] >= 0.9
    assert summary["precision"]["mean"] >= 0.9 and summary["recall"]["mean"] >= 0.9
    assert summary["f1"]["se"] < 0.02
