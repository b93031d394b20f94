"""Proximal gradient iteration with backtracking, warm starts and screening.

The loss is supplied as an oracle ``oracle(theta, coords) -> (value, grad)``
where ``value`` is the full smooth data loss at theta and ``grad`` holds its
partial derivatives for the requested coordinate indices only.  Restricting
coordinates is what makes screening pay off for ODE losses, where each
gradient coordinate costs a sensitivity column.

Step lengths start from a Barzilai-Borwein estimate and are halved until the
penalized objective decreases (floor 1e-12); the iteration thresholds scale
with the step length, while screening and convergence use the unit-step
fixed-point residual theta == prox(theta, grad, 1).
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import OptimStallError
from .penalties import (
    default_lambda_path,
    penalty_term,
    prox_operator,
    ridge_factor,
    threshold_weights,
)

__all__ = ["OptimControls", "OptimState", "proximal_gradient", "screened_path"]

TAU_FLOOR = 1e-12


@dataclass
class OptimControls:
    max_iter: int = 1000
    tol: float = 1e-8
    screening_interval: int = 10
    tau_init: float = 1.0
    max_backtracks: int = 60
    keep_history: bool = False


@dataclass
class OptimState:
    theta: np.ndarray
    active: np.ndarray
    tau: float
    iterations: int = 0
    n_oracle: int = 0
    converged: bool = False
    stalled: bool = False
    objective: float = np.inf
    loss: float = np.inf
    residual: float = np.inf
    lam: float = np.nan
    history: list = dataclass_field(default_factory=list)


def _smooth_parts(oracle, theta, coords, penalty, lam, counter):
    """Data loss + folded ridge part, with matching gradient on coords.

    Returns (smooth value, gradient on coords, raw data loss).
    """
    raw, grad = oracle(theta, coords)
    counter[0] += 1
    value = raw
    rho = ridge_factor(penalty)
    if rho > 0.0 and lam > 0.0:
        v = penalty.weights_for(theta.shape[0])
        value = raw + 0.5 * lam * rho * float((v * theta) @ theta)
        grad = grad + lam * rho * (v * theta)[coords]
    return value, grad, raw


def _value_only(oracle, theta, penalty, lam, counter):
    """Returns (smooth value incl. ridge, raw data loss)."""
    raw, _ = oracle(theta, _EMPTY)
    counter[0] += 1
    value = raw
    rho = ridge_factor(penalty)
    if rho > 0.0 and lam > 0.0:
        v = penalty.weights_for(theta.shape[0])
        value = raw + 0.5 * lam * rho * float((v * theta) @ theta)
    return value, raw


_EMPTY = np.array([], dtype=int)


def proximal_gradient(oracle, penalty, lam, theta0, box=None, controls=None,
                      active=None, state=None):
    """Run the proximal gradient iteration at a fixed lam.

    ``active`` restricts both gradient evaluation and updates to a coordinate
    subset (all coordinates when None); coordinates outside stay frozen at
    zero.  A warm ``state`` carries the step length across screening cycles.
    The iteration stops at the unit-step fixed point (over the iterated
    coordinates), at the iteration cap, or when no step length decreases the
    objective (stall, best state returned).
    """
    controls = controls or OptimControls()
    theta = np.asarray(theta0, dtype=float).copy()
    p = theta.shape[0]
    if box is not None:
        theta = np.clip(theta, box[0], box[1])
    coords = np.arange(p) if active is None else np.asarray(active, dtype=int)
    counter = [0]

    if state is None:
        state = OptimState(theta=theta, active=coords, tau=controls.tau_init)
    else:
        state.theta = theta
        state.active = coords
    prev_theta = None
    prev_grad = None

    value, grad, raw = _smooth_parts(oracle, theta, coords, penalty, lam, counter)
    if not np.isfinite(value):
        raise OptimStallError("loss oracle is non-finite at the initial point",
                              state=state)
    F = value + _penalty_only(penalty, lam, theta)

    for it in range(controls.max_iter):
        mu = threshold_weights(penalty, lam, theta)
        box_c = None if box is None else (box[0][coords], box[1][coords])
        z = prox_operator(theta[coords], grad, 1.0, lam, mu[coords], box=box_c)
        residual = float(np.max(np.abs(theta[coords] - z), initial=0.0))
        state.residual = residual
        if residual < controls.tol * (1.0 + float(np.max(np.abs(theta), initial=0.0))):
            state.converged = True
            break

        # Barzilai-Borwein step length estimate; growth is capped relative to
        # the last accepted step so a bad estimate cannot force a backtracking
        # cascade on strongly nonlinear losses
        tau = state.tau
        if prev_theta is not None:
            s = theta[coords] - prev_theta
            y = grad - prev_grad
            sy = float(s @ y)
            if sy > 0:
                tau = float(s @ s) / sy
        tau = min(max(tau, TAU_FLOOR), state.tau * 10.0, 1e12)

        accepted = False
        for _ in range(controls.max_backtracks):
            cand = theta.copy()
            cand[coords] = prox_operator(theta[coords], grad, tau,
                                         lam * tau, mu[coords], box=box_c)
            smooth_cand, raw_cand = _value_only(oracle, cand, penalty, lam, counter)
            if np.isfinite(smooth_cand):
                F_cand = smooth_cand + _penalty_only(penalty, lam, cand)
                if F_cand <= F + 1e-14 * (1.0 + abs(F)):
                    accepted = True
                    break
            tau *= 0.5
            if tau < TAU_FLOOR:
                break
        if not accepted:
            state.stalled = True
            break

        prev_theta = theta[coords].copy()
        prev_grad = grad.copy()
        theta = cand
        F = F_cand
        raw = raw_cand
        state.tau = tau
        state.iterations += 1
        if controls.keep_history:
            state.history.append(theta.copy())
        value, grad, raw = _smooth_parts(oracle, theta, coords, penalty, lam, counter)

    state.theta = theta
    state.n_oracle += counter[0]
    state.objective = F
    state.loss = raw
    return state


def _penalty_only(penalty, lam, theta):
    if penalty.kind == "elastic-net":
        v = penalty.weights_for(theta.shape[0])
        return lam * penalty.alpha * float(v @ np.abs(theta))
    if penalty.kind in ("l2", "none"):
        return 0.0
    return penalty_term(penalty, lam, theta)


def screened_path(oracle, penalty, p, box=None, theta0=None, controls=None,
                  screened=True):
    """Solve along the decreasing lam path with warm starts and screening.

    At every ``screening_interval`` proximal steps all gradient coordinates
    are evaluated: if the unit-step fixed point is reached the lam value is
    done, otherwise the active set is rebuilt as supp(theta) plus the
    violating coordinates and iteration continues on it.  With
    ``screened=False`` every step uses all coordinates; results agree with
    the screened run up to the convergence tolerance.

    Returns a list of OptimState, one per lam, in path order.
    """
    controls = controls or OptimControls()
    theta = np.zeros(p) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    if box is not None:
        theta = np.clip(theta, box[0], box[1])
    all_coords = np.arange(p)
    counter = [0]

    if penalty.lambda_path is not None:
        path = penalty.lambda_path
    else:
        _, g0 = oracle(np.zeros(p), all_coords)
        counter[0] += 1
        path = default_lambda_path(penalty, g0)

    results = []
    for lam in path:
        state = OptimState(theta=theta.copy(), active=all_coords,
                           tau=controls.tau_init, lam=float(lam))
        state.n_oracle += counter[0]
        counter[0] = 0
        budget = controls.max_iter
        inner = OptimControls(
            max_iter=controls.screening_interval, tol=controls.tol,
            tau_init=state.tau, max_backtracks=controls.max_backtracks,
            keep_history=controls.keep_history,
        )
        while budget > 0:
            value, grad, raw = _smooth_parts(oracle, state.theta, all_coords,
                                             penalty, lam, [0])
            state.n_oracle += 1
            mu = threshold_weights(penalty, lam, state.theta)
            z = prox_operator(state.theta, grad, 1.0, lam, mu, box=box)
            state.residual = float(np.max(np.abs(state.theta - z), initial=0.0))
            scale = 1.0 + float(np.max(np.abs(state.theta), initial=0.0))
            state.loss = raw
            state.objective = value + _penalty_only(penalty, lam, state.theta)
            if state.residual < controls.tol * scale:
                state.converged = True
                break
            # screening: supp(theta) plus the unit-step violators; the
            # unscreened variant runs the identical cycles on all coordinates
            if screened:
                active = np.flatnonzero((state.theta != 0.0) | (z != state.theta))
            else:
                active = all_coords
            inner.max_iter = min(controls.screening_interval, budget)
            state.converged = False
            state = proximal_gradient(oracle, penalty, lam, state.theta,
                                      box=box, controls=inner, active=active,
                                      state=state)
            budget -= inner.max_iter
            if state.stalled:
                break
        state.active = np.flatnonzero(state.theta)
        results.append(state)
        theta = state.theta.copy()
    return results
