import json
import logging
import math
import time

import numpy as np
from tqdm import tqdm

try:
    from smart_open import open
except ImportError:
    pass

logger = logging.getLogger(__name__)

# ticks per second of the closed loop: plant integration, torques and the operator
PLANT_RATE = 100


class SimulationError(RuntimeError):
    """Closed-loop run hit a non-finite value."""

    def __init__(self, tick, clock, signal, value):
        self.tick = tick
        self.clock = clock
        self.signal = signal
        super().__init__(f"non-finite {signal}={value!r} at tick {tick} (t={clock:.2f}s)")


class MissingModelsError(FileNotFoundError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"no trained workload models at {path!r}; "
                         f"run `workload-hsc train-hmm --out <dir>` first and pass --models <dir>/hmm_models.json, "
                         f"or pass --train-models to train a pair on demand")


def load_config(path):
    if path is None:
        return {}
    with open(path, "r") as f:
        config = json.load(f)
    if not isinstance(config, dict):
        raise ValueError(f"config {path!r} must hold a JSON object, got {type(config).__name__}")
    return config


def get_section(config, name):
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be an object")
    return section


def require(condition, key, value, rule):
    if not condition:
        raise ValueError(f"invalid {key}={value!r}: {rule}")


def mean_and_standard_error(values):
    """Sample mean and standard error (ddof=1) over seed- or run-level values.

    Returns (nan, nan) for no values and SE 0 for a single value.
    """
    values = np.asarray([v for v in values if v is not None], dtype=float)
    if values.size == 0:
        return math.nan, math.nan
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def format_float(x):
    return format(float(x), ".17g")


def timer(start_time=None):
    if not start_time:
        return time.time()
    return time.time() - start_time


def configure_logging(config):
    level = get_section(config, "logging").get("level", "INFO")
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def parallel_map(fn, jobs, workers=1, desc=None):
    """fn(*job) for every job, in submission order.

    With workers > 1 the jobs run as ray remote tasks; otherwise serially
    behind a tqdm bar.
    """
    jobs = list(jobs)
    if workers > 1:
        try:
            import ray
        except ImportError:
            logger.warning("ray is not installed, running jobs serially")
        else:
            if not ray.is_initialized():
                ray.init(include_dashboard=False, num_cpus=workers)
            remote_fn = ray.remote(fn)
            refs = [remote_fn.remote(*job) for job in jobs]
            results = []
            for ref in tqdm(refs, desc=desc, disable=desc is None):
                results.append(ray.get(ref))
            return results
    return [fn(*job) for job in tqdm(jobs, desc=desc, disable=desc is None)]
