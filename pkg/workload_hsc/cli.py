import argparse
import json
import logging
import os
import sys

import numpy as np

from workload_hsc import checkpoint
from workload_hsc import vehicle_dynamics as vd
from workload_hsc.experiment import ExperimentConfig, run_experiment, write_experiment
from workload_hsc.gaze_corpus import CorpusConfig, generate_corpus, split_by_label
from workload_hsc.nmpc_planner import OcpConfig, plan
from workload_hsc.operator_model import OperatorConfig
from workload_hsc.sim_harness import Components, Scheme, ScenarioConfig, run_scenario, write_json, write_run
from workload_hsc.tracks import load_track
from workload_hsc.util import configure_logging, format_float, get_section, load_config, timer
from workload_hsc.workload_hmm import MAX_STATES, em_train, holdout_evaluate, select_state_count

try:
    from smart_open import open
except ImportError:
    pass

logger = logging.getLogger(__name__)

MODELS_FILE = "hmm_models.json"


class UsageError(ValueError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_args(argv=None):
    # Parse command line arguments
    parser = ArgumentParser(prog="workload-hsc", description="""
    Workload-adaptive haptic shared control in simulation.
        - train-hmm   build the synthetic gaze corpus, pick the state count by BIC, write the model pair
        - eval-hmm    replay the participant holdout protocol on the synthetic corpus
        - plan        solve one planner horizon from the start of a track
        - simulate    run one closed-loop scenario
        - experiment  run the four-condition grid over seeds

    The adaptive scheme needs a trained model pair: run train-hmm first and pass
    --models <out>/hmm_models.json, or pass --train-models to train one on demand.
    """, formatter_class=argparse.RawTextHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="Config file location")
        p.add_argument("--seed", type=int, default=None, help="Overrides every seed in the config")
        p.add_argument("--out", type=str, default="out", help="Output directory")

    p = sub.add_parser("train-hmm", help="Train the Moderate/High model pair")
    common(p)
    p.add_argument("--n-states", type=int, default=None, help="Skip the BIC sweep and use this state count")

    p = sub.add_parser("eval-hmm", help="Holdout evaluation of the workload classifier")
    common(p)
    p.add_argument("--models", type=str, default=None, help="Model pair whose state count to evaluate")
    p.add_argument("--runs", type=int, default=None, help="Number of holdout runs")

    p = sub.add_parser("plan", help="Plan one horizon")
    common(p)
    p.add_argument("--track", type=str, default=None, help="Bundled track name or x,y CSV path")
    p.add_argument("--offset", type=float, default=0.0, help="Lateral offset of the tracked line in metres")
    p.add_argument("--export-track", action="store_true", help="Also write the track as track.csv")

    for name, help_text in (("simulate", "Run one closed-loop scenario"), ("experiment", "Run the condition grid")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--models", type=str, default=None,
                       help="Trained model pair written by train-hmm; required by the adaptive scheme")
        p.add_argument("--train-models", action="store_true",
                       help="Without --models, train the pair into --out first (workload.n_states, no BIC sweep)")
        p.add_argument("--scheme", type=str, default=None, choices=["adaptive", "non-adaptive"])
        p.add_argument("--clamp-beta", action="store_true", help="Limit the assistance level to [0, 1]")
        p.add_argument("--track", type=str, default=None, help="Bundled track name or x,y CSV path")
        p.add_argument("--duration", type=float, default=None, help="Run length in seconds")
        if name == "simulate":
            p.add_argument("--force-beta", type=float, default=None, help="Constant assistance level")
            p.add_argument("--no-operator", action="store_true", help="Force the operator torque to zero")
        else:
            p.add_argument("--seeds", type=int, default=None, help="Seeds per condition")
            p.add_argument("--workers", type=int, default=None, help="Parallel runs (ray)")

    return parser.parse_args(argv)


def _override(section, **values):
    section = dict(section)
    section.update({k: v for k, v in values.items() if v is not None})
    return section


def _models_path(args, config):
    return args.models or get_section(config, "workload").get("models")


def train_hmm(args, config):
    return _train_pair(config, args.out, seed=args.seed, n_states=args.n_states)


def _train_pair(config, out, seed=None, n_states=None):
    workload = get_section(config, "workload")
    corpus_config = CorpusConfig.from_config(_override(get_section(config, "corpus"), seed=seed))
    operator = OperatorConfig.from_config(_override(get_section(config, "operator"), seed=seed))
    seed = corpus_config.seed
    max_iter, tol = int(workload.get("max_iter", 200)), float(workload.get("tol", 1e-5))

    dataset = generate_corpus(corpus_config, operator)
    moderate, high = split_by_label(dataset)

    os.makedirs(out, exist_ok=True)
    bic_table = []
    if n_states is None:
        candidates = workload.get("candidates", list(range(2, MAX_STATES + 1)))
        n_states, bic_table = select_state_count(moderate, high, candidates, seed=seed, max_iter=max_iter, tol=tol)
        with open(os.path.join(out, "bic.csv"), "w") as f:
            f.write("n_states,bic_moderate,bic_high,bic_total\n")
            for row in bic_table:
                f.write(f"{row['n_states']},{format_float(row['bic_moderate'])},{format_float(row['bic_high'])},"
                        f"{format_float(row['bic_total'])}\n")

    model_moderate = em_train(moderate, n_states, seed=seed, max_iter=max_iter, tol=tol)
    model_high = em_train(high, n_states, seed=seed, max_iter=max_iter, tol=tol)
    path = os.path.join(out, MODELS_FILE)
    checkpoint.write_models(path, model_moderate, model_high, {"table": bic_table, "selected": n_states})
    return {"models": path, "n_states": n_states, "windows": {"moderate": len(moderate), "high": len(high)}}


def eval_hmm(args, config):
    workload = get_section(config, "workload")
    corpus_config = CorpusConfig.from_config(_override(get_section(config, "corpus"), seed=args.seed))
    operator = OperatorConfig.from_config(_override(get_section(config, "operator"), seed=args.seed))
    n_states = int(workload.get("n_states", 2))
    models_path = _models_path(args, config)
    if models_path:
        n_states = checkpoint.read_models(models_path)[0].n_states

    dataset = generate_corpus(corpus_config, operator)
    summary = holdout_evaluate(dataset, n_runs=args.runs or int(workload.get("holdout_runs", 100)),
                               holdout_size=int(workload.get("holdout_size", 3)), seed=corpus_config.seed,
                               n_states=n_states, max_iter=int(workload.get("max_iter", 200)),
                               tol=float(workload.get("tol", 1e-5)),
                               workers=int(get_section(config, "experiment").get("workers", 1)))
    os.makedirs(args.out, exist_ok=True)
    write_json(summary, os.path.join(args.out, "holdout.json"))
    return {key: summary[key] for key in ("precision", "recall", "f1", "n_states")}


def plan_once(args, config):
    params = vd.VehicleParams.from_config(get_section(config, "vehicle"))
    ocp = OcpConfig.from_config(get_section(config, "planner"), params)
    track_id = args.track or get_section(config, "scenario").get("track_id", "straight")
    track = load_track(track_id)
    reference = track.offset(args.offset) if args.offset else track

    state = vd.initial_state_on_track(track, params)
    series = plan(state, reference, params, ocp)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "plan.csv"), "w") as f:
        f.write("t,steering_angle\n")
        for t, delta in series.samples:
            f.write(f"{format_float(t)},{format_float(delta)}\n")
    if args.export_track:
        track.to_csv(os.path.join(args.out, "track.csv"))
    return {"track": track_id, "converged": bool(series.converged), "iterations": series.iterations,
            "cost": series.cost, "max_abs_steering": float(np.max(np.abs(series.angles)))}


def _components(args, config, required):
    models_path = _models_path(args, config)
    models = None
    if not models_path and required and args.train_models:
        n_states = int(get_section(config, "workload").get("n_states", 2))
        logger.warning(f"no --models given: training a {n_states}-state model pair into {args.out}")
        models_path = _train_pair(config, args.out, n_states=n_states)["models"]
    if models_path or required:
        models = checkpoint.read_models(models_path)
    return Components.from_config(config, models=models), models_path


def simulate(args, config):
    section = _override(get_section(config, "scenario"), seed=args.seed, track_id=args.track,
                        duration=args.duration, scheme=args.scheme, force_beta=args.force_beta)
    if args.clamp_beta:
        section["clamp_beta"] = True
    if args.no_operator:
        section["operator_enabled"] = False
    scenario = ScenarioConfig.from_config(section)
    needs_models = scenario.scheme == Scheme.ADAPTIVE and scenario.force_beta is None
    components, _ = _components(args, config, required=needs_models)

    result = run_scenario(scenario, components, progress=True)
    write_run(result, args.out, scenario)
    return {"out": args.out, "metrics": result.metrics.to_dict()}


def experiment(args, config):
    section = _override(get_section(config, "experiment"), seeds=args.seeds, workers=args.workers,
                        first_seed=args.seed, track_id=args.track, duration=args.duration)
    if args.clamp_beta:
        section["clamp_beta"] = True
    experiment_config = ExperimentConfig.from_config(section)
    components, models_path = _components(args, config, required=True)

    start = timer()
    report = run_experiment(experiment_config, components, models_path=models_path,
                            wandb_config=get_section(config, "logging"))
    write_experiment(report, args.out)
    logger.info(f"experiment finished in {timer(start):.1f}s")
    return {"out": args.out, "orderings": report["orderings"]}


COMMANDS = {
    "train-hmm": train_hmm,
    "eval-hmm": eval_hmm,
    "plan": plan_once,
    "simulate": simulate,
    "experiment": experiment,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    try:
        args = parse_args(argv)
        command = args.command
        config = load_config(args.config)
        configure_logging(config)
        summary = COMMANDS[command](args, config)
    except Exception as e:
        logger.debug("command failed", exc_info=True)
        record = {"error": type(e).__name__, "message": str(e), "command": command}
        print(json.dumps(record), file=sys.stderr)
        return 2 if isinstance(e, UsageError) else 1
    print(json.dumps(summary, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
