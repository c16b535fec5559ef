"""Gaze-based workload estimation with Gaussian-emission hidden Markov models.

One model is trained per workload class on 4 s gaze windows; a window is
labelled with the class whose model gives it the higher forward-algorithm
likelihood.
"""
import dataclasses
import enum
import logging
import math

import chex
import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import logsumexp
from jax.scipy.stats import multivariate_normal

from workload_hsc.util import mean_and_standard_error, parallel_map

try:
    from smart_open import open
except ImportError:
    pass

logger = logging.getLogger(__name__)

WINDOW_LENGTH = 120
GAZE_RATE = 30.0
DRIVING_X_MIN = 0.5
COVARIANCE_FLOOR = 1e-6
MAX_STATES = 10


class Screen(enum.Enum):
    DRIVING = "driving"
    SURVEILLANCE = "surveillance"

    @classmethod
    def of(cls, x):
        return cls.DRIVING if x >= DRIVING_X_MIN else cls.SURVEILLANCE


class WorkloadLabel(enum.IntEnum):
    MODERATE = 0
    HIGH = 1


@dataclasses.dataclass(frozen=True)
class GazePoint:
    timestamp: float
    x: float
    y: float
    screen: Screen


class GazeWindow(object):
    """Exactly WINDOW_LENGTH gaze points, stored as arrays."""

    def __init__(self, timestamps, xy, driving=None):
        self.timestamps = np.asarray(timestamps, dtype=float)
        self.xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if driving is None:
            driving = self.xy[:, 0] >= DRIVING_X_MIN
        self.driving = np.asarray(driving, dtype=bool)
        if len(self.xy) != WINDOW_LENGTH:
            raise ValueError(f"a gaze window holds exactly {WINDOW_LENGTH} points, got {len(self.xy)}")
        if len(self.timestamps) != WINDOW_LENGTH or len(self.driving) != WINDOW_LENGTH:
            raise ValueError("timestamps, coordinates and screen tags must have the same length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("gaze timestamps must be strictly increasing within a window")

    @classmethod
    def from_points(cls, points):
        points = list(points)
        return cls([p.timestamp for p in points], [(p.x, p.y) for p in points],
                   [p.screen == Screen.DRIVING for p in points])

    def points(self):
        return [GazePoint(float(t), float(x), float(y), Screen.DRIVING if d else Screen.SURVEILLANCE)
                for t, (x, y), d in zip(self.timestamps, self.xy, self.driving)]

    def __len__(self):
        return len(self.xy)


def _as_array(window):
    if isinstance(window, GazeWindow):
        return window.xy
    return np.asarray(window, dtype=float).reshape(-1, 2)


@chex.dataclass(frozen=True)
class GaussianHmm:
    initial_probs: chex.Array
    transition: chex.Array
    means: chex.Array
    covariances: chex.Array

    @property
    def n_states(self):
        return int(np.shape(self.means)[0])

    def validate(self, floor=COVARIANCE_FLOOR):
        initial = np.asarray(self.initial_probs)
        transition = np.asarray(self.transition)
        if abs(initial.sum() - 1) > 1e-9 or np.any(initial < 0):
            raise ValueError("initial_probs must lie on the simplex")
        if np.any(np.abs(transition.sum(axis=1) - 1) > 1e-9) or np.any(transition < 0):
            raise ValueError("transition rows must lie on the simplex")
        for j, cov in enumerate(np.asarray(self.covariances)):
            if not np.allclose(cov, cov.T):
                raise ValueError(f"covariance {j} is not symmetric")
            if np.linalg.eigvalsh(cov)[0] < floor * (1 - 1e-6):
                raise ValueError(f"covariance {j} has an eigenvalue below the floor {floor}")
        return self

    def to_numpy(self):
        return jax.tree_util.tree_map(np.asarray, self)


def _log_emissions(hmm, xy):
    return jax.vmap(lambda m, c: multivariate_normal.logpdf(xy, m, c), out_axes=1)(hmm.means, hmm.covariances)


def _forward(log_pi, log_a, log_b):
    def step(alpha, lb):
        alpha = logsumexp(alpha[:, None] + log_a, axis=0) + lb
        return alpha, alpha

    first = log_pi + log_b[0]
    _, rest = jax.lax.scan(step, first, log_b[1:])
    return jnp.concatenate([first[None], rest])


def _backward(log_a, log_b):
    def step(beta, lb):
        beta = logsumexp(log_a + (lb + beta)[None, :], axis=1)
        return beta, beta

    last = jnp.zeros(log_b.shape[1])
    _, rest = jax.lax.scan(step, last, log_b[1:], reverse=True)
    return jnp.concatenate([rest, last[None]])


def _sequence_log_likelihood(hmm, xy):
    log_b = _log_emissions(hmm, xy)
    alpha = _forward(jnp.log(hmm.initial_probs), jnp.log(hmm.transition), log_b)
    return logsumexp(alpha[-1])


def _sequence_statistics(hmm, xy):
    log_b = _log_emissions(hmm, xy)
    log_a = jnp.log(hmm.transition)
    alpha = _forward(jnp.log(hmm.initial_probs), log_a, log_b)
    beta = _backward(log_a, log_b)
    ll = logsumexp(alpha[-1])
    gamma = jnp.exp(alpha + beta - ll)
    log_xi = alpha[:-1, :, None] + log_a[None] + (log_b[1:] + beta[1:])[:, None, :] - ll
    return ll, gamma, jnp.exp(logsumexp(log_xi, axis=0))


_log_likelihood_jit = jax.jit(_sequence_log_likelihood)
_batch_log_likelihood = jax.jit(jax.vmap(_sequence_log_likelihood, in_axes=(None, 0)))
_batch_statistics = jax.jit(jax.vmap(_sequence_statistics, in_axes=(None, 0)))


def log_likelihood(hmm, window):
    """log p(window | hmm) by the log-space forward algorithm."""
    return float(_log_likelihood_jit(hmm, jnp.asarray(_as_array(window))))


def batch_log_likelihood(hmm, windows):
    return np.asarray(_batch_log_likelihood(hmm, jnp.asarray(stack_windows(windows))))


def stack_windows(windows):
    arrays = [_as_array(w) for w in windows]
    if not arrays:
        raise ValueError("need at least one gaze sequence")
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"gaze sequences must share one length, got lengths {sorted(lengths)}")
    return np.stack(arrays)


def lift_covariance(cov, floor=COVARIANCE_FLOOR):
    """Add to the diagonal just enough to raise the smallest eigenvalue to `floor`."""
    cov = 0.5 * (cov + cov.T)
    smallest = np.linalg.eigvalsh(cov)[0]
    if smallest < floor:
        cov = cov + (floor - smallest) * np.eye(len(cov))
    return cov


def _check_degenerate(points):
    for dim, name in enumerate("xy"):
        if np.ptp(points[:, dim]) == 0:
            raise ValueError(f"degenerate gaze data: every {name} coordinate equals {points[0, dim]!r}")


def kmeans(points, n_clusters, rng, max_iter=100):
    """k-means++ seeding followed by Lloyd iterations."""
    centers = [points[rng.integers(len(points))]]
    for _ in range(1, n_clusters):
        d2 = np.min(((points[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        index = rng.choice(len(points), p=d2 / total) if total > 0 else rng.integers(len(points))
        centers.append(points[index])
    centers = np.array(centers)

    labels = None
    for _ in range(max_iter):
        new_labels = np.argmin(((points[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(n_clusters):
            members = points[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers, labels


def _initial_model(sequences, n_states, rng, floor):
    pooled = sequences.reshape(-1, 2)
    centers, labels = kmeans(pooled, n_states, rng)
    pooled_cov = np.cov(pooled.T, bias=True)
    covariances = []
    for j in range(n_states):
        members = pooled[labels == j]
        cov = np.cov(members.T, bias=True) if len(members) > 2 else pooled_cov
        covariances.append(lift_covariance(cov, floor))

    labels = labels.reshape(sequences.shape[:2])
    counts = np.ones((n_states, n_states))
    np.add.at(counts, (labels[:, :-1].ravel(), labels[:, 1:].ravel()), 1)
    first = np.bincount(labels[:, 0], minlength=n_states) + 1.0
    return GaussianHmm(initial_probs=first / first.sum(), transition=counts / counts.sum(axis=1, keepdims=True),
                       means=centers, covariances=np.array(covariances))


def _m_step(hmm, sequences, gamma, xi, floor):
    old = hmm.to_numpy()
    initial = gamma[:, 0].sum(axis=0)
    initial = initial / initial.sum()

    expected = xi.sum(axis=0)
    transition = old.transition.copy()
    rows = expected.sum(axis=1)
    for i in range(len(rows)):
        if rows[i] > 1e-12:
            transition[i] = expected[i] / rows[i]

    weights = gamma.reshape(-1, gamma.shape[-1])
    points = sequences.reshape(-1, 2)
    occupancy = weights.sum(axis=0)
    means = old.means.copy()
    covariances = old.covariances.copy()
    for j in range(len(occupancy)):
        # a state nobody visits keeps its previous emission
        if occupancy[j] < 1e-10:
            continue
        means[j] = weights[:, j] @ points / occupancy[j]
        centered = points - means[j]
        cov = (weights[:, j, None] * centered).T @ centered / occupancy[j]
        covariances[j] = lift_covariance(cov, floor)
    return GaussianHmm(initial_probs=initial, transition=transition, means=means, covariances=covariances)


@dataclasses.dataclass
class TrainingReport:
    log_likelihood_history: list
    iterations: int
    converged: bool


def em_train(sequences, n_states, seed=0, max_iter=200, tol=1e-5, floor=COVARIANCE_FLOOR, return_report=False):
    """Baum-Welch on equal-length gaze sequences.

    Stops when the per-sample log-likelihood improves by less than `tol`.
    """
    if not 1 <= n_states <= MAX_STATES:
        raise ValueError(f"n_states={n_states!r} outside [1, {MAX_STATES}]")
    sequences = stack_windows(sequences)
    n_points = sequences.shape[0] * sequences.shape[1]
    _check_degenerate(sequences.reshape(-1, 2))

    rng = np.random.default_rng(seed)
    hmm = _initial_model(sequences, n_states, rng, floor)
    data = jnp.asarray(sequences)

    history = []
    converged = False
    for iteration in range(max_iter + 1):
        ll, gamma, xi = _batch_statistics(hmm, data)
        history.append(float(jnp.sum(ll)) / n_points)
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        if iteration == max_iter:
            break
        hmm = _m_step(hmm, sequences, np.asarray(gamma), np.asarray(xi), floor)

    logger.debug(f"EM with {n_states} states: {len(history) - 1} iterations, "
                 f"log-likelihood {history[-1]:.4f} per sample")
    report = TrainingReport(log_likelihood_history=history, iterations=len(history) - 1, converged=converged)
    return (hmm, report) if return_report else hmm


def parameter_count(n_states):
    """Initial (N - 1), transition N(N - 1), means 2N and symmetric 2x2 covariances 3N."""
    return (n_states - 1) + n_states * (n_states - 1) + 5 * n_states


def bic(hmm, dataset):
    sequences = stack_windows(dataset)
    total = float(np.sum(batch_log_likelihood(hmm, sequences)))
    n = sequences.shape[0] * sequences.shape[1]
    return -2.0 * total + parameter_count(hmm.n_states) * math.log(n)


def classify(window, model_moderate, model_high):
    """Higher likelihood wins; an exact tie goes to Moderate."""
    if log_likelihood(model_moderate, window) >= log_likelihood(model_high, window):
        return WorkloadLabel.MODERATE
    return WorkloadLabel.HIGH


def classify_many(windows, model_moderate, model_high):
    moderate = batch_log_likelihood(model_moderate, windows)
    high = batch_log_likelihood(model_high, windows)
    return np.where(moderate >= high, WorkloadLabel.MODERATE, WorkloadLabel.HIGH).astype(int)


def workload_value(label, scale=50.0, offset=50.0):
    return scale * int(label) + offset


def eyes_on_road(window):
    driving = window.driving if isinstance(window, GazeWindow) else np.asarray(window, dtype=bool)
    return float(np.mean(driving)) if driving.size else 1.0


def sample_hmm(hmm, length, rng):
    """Draw (states, points) of the given length from the model."""
    hmm = hmm.to_numpy()
    n = hmm.n_states
    states = np.empty(length, dtype=int)
    states[0] = rng.choice(n, p=hmm.initial_probs)
    for t in range(1, length):
        states[t] = rng.choice(n, p=hmm.transition[states[t - 1]])
    chol = np.linalg.cholesky(hmm.covariances)
    noise = rng.standard_normal((length, 2))
    points = hmm.means[states] + np.einsum("tij,tj->ti", chol[states], noise)
    return states, points


def select_state_count(moderate_windows, high_windows, candidates=range(2, MAX_STATES + 1), seed=0,
                       max_iter=200, tol=1e-5):
    """Sweep the state count and pick the lowest summed BIC of the two class models."""
    table = []
    for n_states in candidates:
        moderate = em_train(moderate_windows, n_states, seed=seed, max_iter=max_iter, tol=tol)
        high = em_train(high_windows, n_states, seed=seed, max_iter=max_iter, tol=tol)
        row = {"n_states": n_states, "bic_moderate": bic(moderate, moderate_windows),
               "bic_high": bic(high, high_windows)}
        row["bic_total"] = row["bic_moderate"] + row["bic_high"]
        table.append(row)
        logger.info(f"N={n_states}: BIC {row['bic_total']:.1f}")
    best = min(table, key=lambda r: r["bic_total"])["n_states"]
    return best, table


def classification_scores(truth, predicted, n_classes=2):
    """Per-class and macro precision/recall; F1 = 2PR / (P + R) of the macro means."""
    truth = np.asarray(truth, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    per_class = []
    for c in range(n_classes):
        tp = int(np.sum((predicted == c) & (truth == c)))
        fp = int(np.sum((predicted == c) & (truth != c)))
        fn = int(np.sum((predicted != c) & (truth == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append({"tp": tp, "fp": fp, "fn": fn, "precision": precision, "recall": recall, "f1": f1})
    precision = float(np.mean([c["precision"] for c in per_class]))
    recall = float(np.mean([c["recall"] for c in per_class]))
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1, "per_class": per_class}


def _holdout_run(dataset, held_out, n_states, seed, max_iter, tol):
    train = [item for p, items in dataset.items() if p not in held_out for item in items]
    test = [item for p in held_out for item in dataset[p]]
    moderate = em_train([w for w, label in train if label == WorkloadLabel.MODERATE], n_states, seed=seed,
                        max_iter=max_iter, tol=tol)
    high = em_train([w for w, label in train if label == WorkloadLabel.HIGH], n_states, seed=seed,
                    max_iter=max_iter, tol=tol)
    predicted = classify_many([w for w, _ in test], moderate, high)
    return classification_scores([int(label) for _, label in test], predicted)


def holdout_evaluate(dataset, n_runs=100, holdout_size=3, seed=0, n_states=2, max_iter=200, tol=1e-5,
                     workers=1):
    """Repeated participant-level holdout.

    `dataset` maps participant id -> list of (window, WorkloadLabel). Each run
    holds out `holdout_size` whole participants, trains both class models on the
    rest and classifies the held-out windows.
    """
    participants = sorted(dataset)
    if len(participants) < holdout_size + 1:
        raise ValueError(f"holdout needs at least {holdout_size + 1} participants, got {len(participants)}")

    rng = np.random.default_rng(seed)
    jobs = []
    for run in range(n_runs):
        held_out = tuple(participants[i] for i in sorted(rng.choice(len(participants), holdout_size, replace=False)))
        jobs.append((dataset, held_out, n_states, seed + run, max_iter, tol))
    runs = parallel_map(_holdout_run, jobs, workers=workers, desc="holdout runs")

    summary = {"n_runs": n_runs, "holdout_size": holdout_size, "n_states": n_states}
    for key in ("precision", "recall", "f1"):
        mean, se = mean_and_standard_error([r[key] for r in runs])
        summary[key] = {"mean": mean, "se": se}
    summary["runs"] = [{k: r[k] for k in ("precision", "recall", "f1")} for r in runs]
    return summary


def read_gaze_csv(path):
    """Read a `timestamp,x,y,screen` log into (timestamps, xy, driving)."""
    timestamps, xy, driving = [], [], []
    with open(path, "r") as f:
        header = f.readline().strip().replace(" ", "")
        if header != "timestamp,x,y,screen":
            raise ValueError(f"gaze log {path!r} must start with header 'timestamp,x,y,screen', got {header!r}")
        for line_no, line in enumerate(f, start=2):
            if not line.strip():
                continue
            t, x, y, screen = line.strip().split(",")
            timestamps.append(float(t))
            xy.append((float(x), float(y)))
            try:
                driving.append(Screen(screen.strip().lower()) == Screen.DRIVING)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: unknown screen {screen!r}")
    return np.array(timestamps), np.array(xy).reshape(-1, 2), np.array(driving, dtype=bool)


def write_gaze_csv(path, timestamps, xy, driving):
    with open(path, "w") as f:
        f.write("timestamp,x,y,screen\n")
        for t, (x, y), d in zip(timestamps, xy, driving):
            screen = Screen.DRIVING if d else Screen.SURVEILLANCE
            f.write(f"{float(t)!r},{float(x)!r},{float(y)!r},{screen.value}\n")


def windows_from_log(timestamps, xy, driving, starts):
    """Cut WINDOW_LENGTH-point windows starting at the given sample indices."""
    return [GazeWindow(timestamps[s:s + WINDOW_LENGTH], xy[s:s + WINDOW_LENGTH], driving[s:s + WINDOW_LENGTH])
            for s in starts]
