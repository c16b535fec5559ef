import json
import logging
import os

import numpy as np

try:
    from smart_open import open
except ImportError:
    pass

from workload_hsc.util import MissingModelsError
from workload_hsc.workload_hmm import GaussianHmm

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def hmm_to_dict(hmm):
    hmm = hmm.to_numpy()
    # tolist() keeps Python's shortest round-trip float repr, so a reload is exact
    return {
        "n_states": hmm.n_states,
        "initial": np.asarray(hmm.initial_probs, dtype=float).tolist(),
        "transition": np.asarray(hmm.transition, dtype=float).tolist(),
        "means": np.asarray(hmm.means, dtype=float).tolist(),
        "covariances": np.asarray(hmm.covariances, dtype=float).tolist(),
    }


def hmm_from_dict(d):
    hmm = GaussianHmm(initial_probs=np.array(d["initial"], dtype=float),
                      transition=np.array(d["transition"], dtype=float),
                      means=np.array(d["means"], dtype=float).reshape(-1, 2),
                      covariances=np.array(d["covariances"], dtype=float).reshape(-1, 2, 2))
    if hmm.n_states != int(d.get("n_states", hmm.n_states)):
        raise ValueError(f"model declares n_states={d['n_states']} but holds {hmm.n_states} states")
    return hmm.validate()


def write(payload, path):
    for _ in range(3):
        try:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2)
            return
        except OSError:
            logger.warning(f"writing {path} failed, trying again")

    logger.error(f"writing {path} failed 3 times")
    raise Exception(f"save failed: {path}")


def write_models(path, moderate, high, bic_table=None):
    payload = {
        "format": FORMAT_VERSION,
        "n_states": moderate.n_states,
        "models": {"moderate": hmm_to_dict(moderate), "high": hmm_to_dict(high)},
        "bic": bic_table or {},
    }
    write(payload, path)
    logger.info(f"wrote workload models ({moderate.n_states} states) to {path}")


def read_models(path):
    """(moderate, high) models from a pair file written by `write_models`."""
    if path is None or ("://" not in str(path) and not os.path.exists(path)):
        raise MissingModelsError(path)
    with open(path, "r") as f:
        payload = json.load(f)
    if payload.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file format {payload.get('format')!r} in {path}")
    models = payload["models"]
    return hmm_from_dict(models["moderate"]), hmm_from_dict(models["high"])
