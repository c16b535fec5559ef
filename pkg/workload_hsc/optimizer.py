import logging
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

_status_message = {
    "success": "Optimization terminated successfully.",
    "maxiter": "Maximum number of iterations has been exceeded.",
    "pr_loss": "Desired error not necessarily achieved due to precision loss.",
    "stalled": "Projected step vanished before the gradient tolerance was met.",
    "nan": "NaN result encountered.",
}


class SolveResult(NamedTuple):
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_history: tuple
    message: str


def projected_gradient(x, g, lower, upper):
    """Gradient with the components that push into an active bound removed."""
    pinned = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
    return np.where(pinned, 0.0, g), pinned


def scaled_gradient_norm(pg, f):
    return float(np.max(np.abs(pg), initial=0.0) / max(1.0, abs(f)))


def minimize_box(fun_and_grad, x0, lower, upper, gtol=1e-6, maxiter=200, c1=1e-4, max_backtracks=40):
    """Projected BFGS on the box lower <= x <= upper.

    `fun_and_grad(x)` returns (f, g). Every accepted step satisfies
    f_new <= f + c1 * min(g @ step, 0), so the cost history never increases.
    The inverse Hessian is reset to the identity whenever its direction is not
    a descent direction or its line search fails.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    span = upper - lower
    n = x.size

    f, g = fun_and_grad(x)
    f, g = float(f), np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return SolveResult(x, f, 0, False, (f,), _status_message["nan"])

    hess_inv = np.eye(n)
    fresh = True
    history = [f]
    message = _status_message["maxiter"]
    converged = False
    k = 0

    while k < maxiter:
        pg, pinned = projected_gradient(x, g, lower, upper)
        if scaled_gradient_norm(pg, f) <= gtol:
            converged = True
            message = _status_message["success"]
            break

        direction = -hess_inv @ pg
        direction[pinned] = 0.0
        if pg @ direction >= 0:
            hess_inv = np.eye(n)
            fresh = True
            direction = -pg

        # first trial moves no variable further than a quarter of its range
        largest = np.max(np.abs(direction) / span)
        alpha = min(1.0, 0.25 / largest) if largest > 0 else 1.0

        accepted = False
        for _ in range(max_backtracks):
            x_new = np.clip(x + alpha * direction, lower, upper)
            step = x_new - x
            if not np.any(step):
                break
            f_new, g_new = fun_and_grad(x_new)
            f_new = float(f_new)
            if np.isfinite(f_new) and f_new <= f + c1 * min(float(g @ step), 0.0):
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            if fresh:
                message = _status_message["pr_loss"] if np.any(step) else _status_message["stalled"]
                break
            hess_inv = np.eye(n)
            fresh = True
            continue

        g_new = np.asarray(g_new, dtype=float)
        if not np.all(np.isfinite(g_new)):
            message = _status_message["nan"]
            break

        y = g_new - g
        sy = float(step @ y)
        if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(y):
            if fresh:
                # Shanno scaling of the first inverse-Hessian estimate
                hess_inv = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            a = np.eye(n) - rho * np.outer(step, y)
            hess_inv = a @ hess_inv @ a.T + rho * np.outer(step, step)
            fresh = False

        x, f, g = x_new, f_new, g_new
        history.append(f)
        k += 1
    else:
        pg, _ = projected_gradient(x, g, lower, upper)
        converged = scaled_gradient_norm(pg, f) <= gtol
        if converged:
            message = _status_message["success"]

    return SolveResult(x, f, k, converged, tuple(history), message)
