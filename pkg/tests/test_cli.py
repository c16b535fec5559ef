import json

import pytest

from workload_hsc import checkpoint
from workload_hsc.cli import UsageError, main, parse_args


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def write_config(path, **sections):
    path.write_text(json.dumps(sections))
    return str(path)


def test_parse_simulate_flags():
    args = parse_args(["simulate", "--scheme", "non-adaptive", "--no-operator", "--force-beta", "0.5"])
    assert args.command == "simulate"
    assert args.scheme == "non-adaptive"
    assert args.no_operator and not args.clamp_beta
    assert args.force_beta == 0.5
    assert args.out == "out"


def test_unknown_scheme_is_a_usage_error():
    with pytest.raises(UsageError, match="sometimes"):
        parse_args(["simulate", "--scheme", "sometimes"])


@pytest.mark.parametrize("argv, command", [
    (["simulate", "--scheme", "sometimes"], "simulate"),
    (["plan", "--offset", "wide"], "plan"),
    (["train-hmm", "--no-such-flag"], "train-hmm"),
    (["launch"], None),
    ([], None),
])
def test_usage_errors_fail_with_a_json_error(capsys, argv, command):
    assert main(argv) == 2
    captured = capsys.readouterr()
    error = last_json(captured.err)
    assert error["error"] == "UsageError"
    assert error["command"] == command
    assert error["message"].startswith("workload-hsc")
    assert captured.out == ""


@pytest.mark.parametrize("command", ["simulate", "experiment"])
def test_missing_models_fail_with_a_json_error(tmp_path, capsys, command):
    assert main([command, "--out", str(tmp_path)]) == 1
    error = last_json(capsys.readouterr().err)
    assert error["error"] == "MissingModelsError"
    assert error["command"] == command
    assert "train-hmm" in error["message"]


def test_missing_config_file_fails_cleanly(tmp_path, capsys):
    assert main(["plan", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert last_json(capsys.readouterr().err)["command"] == "plan"


def test_plan_writes_the_horizon(tmp_path, capsys):
    assert main(["plan", "--track", "straight", "--out", str(tmp_path), "--export-track"]) == 0
    summary = last_json(capsys.readouterr().out)
    assert summary["converged"] is True
    rows = (tmp_path / "plan.csv").read_text().strip().splitlines()
    assert rows[0] == "t,steering_angle"
    assert len(rows) == 1 + 66
    assert (tmp_path / "track.csv").read_text().startswith("x,y")


def test_simulate_with_a_fixed_assistance_level(tmp_path, capsys):
    config = write_config(tmp_path / "config.json",
                          planner={"intervals": 20, "max_iter": 60},
                          scenario={"track_id": "straight", "urgency_schedule": [[0, 1.5]], "duration": 2.0,
                                    "localization_offset": 0.0},
                          logging={"level": "WARNING"})
    out = tmp_path / "run"
    assert main(["simulate", "--config", config, "--force-beta", "0.5", "--out", str(out)]) == 0
    capsys.readouterr()
    rows = (out / "run.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 200
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["counts"]["ticks"] == 200
    assert json.loads((out / "scenario.json").read_text())["force_beta"] == 0.5


def test_train_hmm_writes_a_loadable_pair(tmp_path, capsys):
    config = write_config(tmp_path / "config.json",
                          corpus={"participants": 2, "tracks_per_participant": 1, "portion_duration": 10.0,
                                  "windows_per_portion": 2},
                          workload={"max_iter": 20},
                          logging={"level": "WARNING"})
    assert main(["train-hmm", "--config", config, "--n-states", "2", "--out", str(tmp_path)]) == 0
    summary = last_json(capsys.readouterr().out)
    assert summary["n_states"] == 2
    assert summary["windows"] == {"moderate": 4, "high": 4}
    moderate, high = checkpoint.read_models(summary["models"])
    assert moderate.n_states == high.n_states == 2


def test_simulate_can_train_missing_models(tmp_path, capsys):
    config = write_config(tmp_path / "config.json",
                          corpus={"participants": 2, "tracks_per_participant": 1, "portion_duration": 10.0,
                                  "windows_per_portion": 2},
                          workload={"max_iter": 20, "n_states": 2},
                          planner={"intervals": 20, "max_iter": 60},
                          scenario={"track_id": "straight", "urgency_schedule": [[0, 1.5]], "duration": 2.0,
                                    "localization_offset": 0.0},
                          logging={"level": "WARNING"})
    out = tmp_path / "run"
    assert main(["simulate", "--config", config, "--scheme", "adaptive", "--train-models", "--out", str(out)]) == 0
    capsys.readouterr()
    moderate, high = checkpoint.read_models(str(out / "hmm_models.json"))
    assert moderate.n_states == high.n_states == 2
    assert not (out / "bic.csv").exists()
    assert (out / "run.csv").exists()


def test_help_names_the_model_requirement(capsys):
    with pytest.raises(SystemExit) as exit_info:
        parse_args(["simulate", "--help"])
    assert exit_info.value.code == 0
    text = capsys.readouterr().out
    assert "--train-models" in text
    assert "train-hmm" in text
