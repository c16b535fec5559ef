"""Four-condition grid: {adaptive, non-adaptive} x {1.5 -> 6.5 s, 6.5 -> 1.5 s} over seeds."""
import dataclasses
import logging
import os

import numpy as np

from workload_hsc.sim_harness import Scheme, ScenarioConfig, run_scenario, write_json
from workload_hsc.util import MissingModelsError, mean_and_standard_error, parallel_map, require

try:
    from smart_open import open
except ImportError:
    pass

try:
    import wandb
    HAS_WANDB = True
except ImportError:
    HAS_WANDB = False

logger = logging.getLogger(__name__)

METRICS = ("lane_keeping_error", "mean_operator_torque", "detection_accuracy", "min_tire_load", "converged_plans",
           "mean_autonomy_torque", "mean_beta", "mean_workload", "mean_eyes_on_road")


@dataclasses.dataclass(frozen=True)
class Condition:
    scheme: Scheme
    first: float
    second: float

    @property
    def name(self):
        return f"{self.scheme.value}/{self.first:g}->{self.second:g}"

    def schedule(self, duration):
        return ((0.0, self.first), (duration / 2, self.second))

    def urgency(self, half):
        return self.first if half == 0 else self.second


CONDITIONS = (
    Condition(Scheme.ADAPTIVE, 1.5, 6.5),
    Condition(Scheme.ADAPTIVE, 6.5, 1.5),
    Condition(Scheme.NON_ADAPTIVE, 1.5, 6.5),
    Condition(Scheme.NON_ADAPTIVE, 6.5, 1.5),
)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    seeds: int = 10
    first_seed: int = 0
    duration: float = 180.0
    track_id: str = "mixed"
    localization_offset: float = 1.0
    workers: int = 1
    latin_square: bool = True
    clamp_beta: bool = False

    @classmethod
    def from_config(cls, section):
        defaults = cls()
        config = cls(**{f.name: section.get(f.name, getattr(defaults, f.name)) for f in dataclasses.fields(cls)})
        config.validate()
        return config

    def validate(self):
        require(self.seeds >= 1, "seeds", self.seeds, "must be >= 1")
        require(self.duration > 0, "duration", self.duration, "must be > 0")
        require(self.workers >= 1, "workers", self.workers, "must be >= 1")


def visit_order(seed_index, latin_square=True):
    """Order in which one seed visits the four conditions (cyclic Latin square)."""
    n = len(CONDITIONS)
    shift = seed_index % n if latin_square else 0
    return [(shift + k) % n for k in range(n)]


def _run_job(scenario, components):
    result = run_scenario(scenario, components)
    return {"overall": result.metrics.to_dict(), "halves": [h.to_dict() for h in result.halves]}


def _aggregate(values):
    mean, se = mean_and_standard_error(values)
    present = [v for v in values if v is not None]
    return {"mean": None if not present else mean, "se": None if not present else se, "n": len(present)}


def run_experiment(config, components, models_path=None, wandb_config=None):
    """Run the grid and aggregate per (condition, half) and per (scheme, urgency)."""
    if components.models is None:
        raise MissingModelsError(models_path)

    jobs, keys = [], []
    for s in range(config.seeds):
        seed = config.first_seed + s
        for c in visit_order(s, config.latin_square):
            condition = CONDITIONS[c]
            scenario = ScenarioConfig(track_id=config.track_id, scheme=condition.scheme,
                                      urgency_schedule=condition.schedule(config.duration), duration=config.duration,
                                      localization_offset=config.localization_offset, seed=seed,
                                      clamp_beta=config.clamp_beta)
            jobs.append((scenario, components))
            keys.append((c, s))

    outputs = parallel_map(_run_job, jobs, workers=config.workers, desc="experiment runs")
    by_key = dict(zip(keys, outputs))
    # condition-then-seed, whatever order the runs were visited in
    runs = [[by_key[(c, s)] for s in range(config.seeds)] for c in range(len(CONDITIONS))]

    run = None
    if wandb_config and wandb_config.get("wandb") and HAS_WANDB:
        run = wandb.init(project=wandb_config.get("wandb_project", "workload-hsc"), name="experiment",
                         config=dataclasses.asdict(config))
        step = 0
        for c, condition in enumerate(CONDITIONS):
            for s in range(config.seeds):
                wandb.log({f"{condition.name}/{k}": v for k, v in runs[c][s]["overall"].items() if v is not None},
                          step)
                step += 1

    cells = []
    for c, condition in enumerate(CONDITIONS):
        for half in (0, 1):
            cell = {"condition": condition.name, "scheme": condition.scheme.value,
                    "order": f"{condition.first:g}->{condition.second:g}", "half": half,
                    "urgency": condition.urgency(half)}
            for metric in METRICS:
                cell[metric] = _aggregate([r["halves"][half][metric] for r in runs[c]])
            cells.append(cell)

    summary = []
    for scheme in (Scheme.ADAPTIVE, Scheme.NON_ADAPTIVE):
        for urgency in (1.5, 6.5):
            row = {"scheme": scheme.value, "urgency": urgency}
            for metric in METRICS:
                per_seed = []
                for s in range(config.seeds):
                    values = [runs[c][s]["halves"][half][metric]
                              for c, condition in enumerate(CONDITIONS) if condition.scheme == scheme
                              for half in (0, 1) if condition.urgency(half) == urgency]
                    values = [v for v in values if v is not None]
                    per_seed.append(float(np.mean(values)) if values else None)
                row[metric] = _aggregate(per_seed)
            summary.append(row)

    report = {"config": dataclasses.asdict(config), "conditions": [c.name for c in CONDITIONS],
              "cells": cells, "summary": summary, "orderings": orderings(summary)}
    if run is not None:
        wandb.log({f"summary/{r['scheme']}/{r['urgency']:g}/{m}": r[m]["mean"]
                   for r in summary for m in METRICS if r[m]["mean"] is not None})
        run.finish()
    return report


def orderings(summary):
    """The three directional comparisons, as booleans (None when a value is missing)."""
    def mean(scheme, urgency, metric):
        for row in summary:
            if row["scheme"] == scheme.value and row["urgency"] == urgency:
                return row[metric]["mean"]
        return None

    def less(a, b):
        return None if a is None or b is None else bool(a < b)

    adaptive, baseline = Scheme.ADAPTIVE, Scheme.NON_ADAPTIVE
    gaps = {}
    for u in (1.5, 6.5):
        a, b = mean(adaptive, u, "lane_keeping_error"), mean(baseline, u, "lane_keeping_error")
        gaps[u] = None if a is None or b is None else b - a
    return {
        "operator_torque_lower_adaptive": {f"{u:g}": less(mean(adaptive, u, "mean_operator_torque"),
                                                          mean(baseline, u, "mean_operator_torque"))
                                           for u in (1.5, 6.5)},
        "lane_keeping_gain_larger_at_1.5": less(gaps[6.5], gaps[1.5]),
        "detection_higher_at_6.5": {s.value: less(mean(s, 1.5, "detection_accuracy"),
                                                  mean(s, 6.5, "detection_accuracy"))
                                    for s in (adaptive, baseline)},
    }


def write_experiment(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_json(report, os.path.join(out_dir, "experiment.json"))
    with open(os.path.join(out_dir, "experiment.csv"), "w") as f:
        f.write("condition,scheme,order,half,urgency,metric,mean,se,n\n")
        for cell in report["cells"]:
            for metric in METRICS:
                stats = cell[metric]
                mean = "" if stats["mean"] is None else repr(float(stats["mean"]))
                se = "" if stats["se"] is None else repr(float(stats["se"]))
                f.write(f"{cell['condition']},{cell['scheme']},{cell['order']},{cell['half']},{cell['urgency']:g},"
                        f"{metric},{mean},{se},{stats['n']}\n")
    logger.info(f"wrote experiment outputs to {out_dir}")
