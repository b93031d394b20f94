"""Fitting procedures: integral matching, penalized least squares on the ODE
loss, unpenalized refits on a fixed support, and exhaustive gradient matching.

Integral matching regresses trajectory increments between consecutive
observation times on the integrated field along a smoothed curve; for
theta-linear families this is a penalized linear least-squares problem.  The
least-squares procedures minimize the weighted distance between data and the
numerically solved trajectories, with gradients from the sensitivity system.
"""

import itertools
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from sklearn.base import BaseEstimator

from .data import Dataset, FitResult
from .errors import (
    DataError,
    InfeasibleSearchError,
    SolverDivergedError,
    SpecificationError,
)
from .optim import OptimControls, proximal_gradient, screened_path
from .penalties import PenaltyConfig
from .smoothing import integrate_field_segments, linear_interpolate, kernel_smooth
from .solver import (
    SolveConfig,
    approximate_gradient_step,
    ls_loss_and_gradient,
    solve_ivp,
)

__all__ = [
    "assemble_im_design",
    "integral_matching",
    "penalized_least_squares",
    "refit_on_support",
    "egm_search",
    "EgmResult",
    "IntegralMatching",
    "SparseLeastSquares",
    "ExhaustiveGradientMatching",
    "standardize_factors",
    "smoothed_initial_states",
]


def standardize_factors(dataset):
    """Per-species weight multipliers 1/sd^2 over the pooled observations.

    Realizes the "standardize the coordinates of the process" smoother
    variants: rescaling each species to unit variance is equivalent to
    reweighting its residuals.
    """
    pooled = np.concatenate([env.values for env in dataset.environments], axis=0)
    sd = pooled.std(axis=0)
    sd[sd == 0] = 1.0
    return 1.0 / sd**2


def smoothed_initial_states(smoothed_list):
    """Initial condition per environment: the smoothed value at the first
    observation time (never a free optimization variable)."""
    return [traj.obs_values[0] for traj in smoothed_list]


def _check_smoothed(dataset, smoothed_list):
    if len(smoothed_list) != dataset.n_env:
        raise DataError("one smoothed trajectory per environment is required")


def assemble_im_design(field, dataset, smoothed_list, standardize=False):
    """Stack the per-interval integral-matching problem into (X, y, row weights).

    Rows run over (environment, interval, species); the interval weight is the
    observation weight at its left endpoint.  Returns the weighted design
    sqrt(w) X and response sqrt(w) y ready for penalized least squares.
    """
    _check_smoothed(dataset, smoothed_list)
    p = field.n_params
    scales = dataset.scales_for(p)
    std = standardize_factors(dataset) if standardize else None
    X_rows, y_rows = [], []
    for e, env in enumerate(dataset.environments):
        traj = smoothed_list[e]
        if traj.obs_index.shape[0] != env.n_times:
            raise DataError(f"smoothed trajectory {e} is misaligned with the observations")
        blocks = integrate_field_segments(field, traj)  # (n-1, d, p)
        blocks = blocks * scales[e][None, None, :]
        increments = traj.increments()  # (n-1, d)
        w = env.weights[:-1].copy()  # left endpoint weight per interval
        if std is not None:
            w = w * std[None, :]
        sw = np.sqrt(w)
        X_rows.append((sw[:, :, None] * blocks).reshape(-1, p))
        y_rows.append((sw * increments).reshape(-1))
    return np.concatenate(X_rows), np.concatenate(y_rows)


def _linear_oracle(X, y):
    def oracle(theta, coords):
        r = X @ theta - y
        value = 0.5 * float(r @ r)
        grad = X[:, coords].T @ r if len(coords) else np.zeros(0)
        return value, grad

    return oracle


def _im_nonlinear_oracle(field, dataset, smoothed_list, standardize=False):
    scales = dataset.scales_for(field.n_params)
    std = standardize_factors(dataset) if standardize else None

    def oracle(theta, coords):
        value = 0.0
        grad = np.zeros(len(coords))
        for e, env in enumerate(dataset.environments):
            traj = smoothed_list[e]
            integrals, jac = integrate_field_segments(
                field, traj, scales=scales[e], theta=theta)
            resid = traj.increments() - integrals
            w = env.weights[:-1]
            if std is not None:
                w = w * std[None, :]
            value += 0.5 * float(np.sum(w * resid**2))
            if len(coords):
                grad -= np.einsum("id,idj->j", w * resid, jac[:, :, coords])
        return value, grad

    return oracle


def _states_to_results(states, kind, smoother=""):
    results = []
    for st in states:
        theta = st.theta.copy()
        results.append(
            FitResult(
                lambda_=float(st.lam),
                theta=theta,
                support=tuple(int(j) for j in np.flatnonzero(theta)),
                objective=float(st.objective),
                kind=kind,
                smoother=smoother,
                diagnostics={
                    "loss": float(st.loss),
                    "iterations": st.iterations,
                    "converged": bool(st.converged),
                    "stalled": bool(st.stalled),
                    "n_oracle": st.n_oracle,
                },
            )
        )
    return results


def integral_matching(field, dataset, smoothed_list, penalty=None,
                      standardize=False, controls=None, smoother_tag=None):
    """Integral matching path: one FitResult per lam, warm-started downwards."""
    penalty = penalty or PenaltyConfig(kind="none")
    controls = controls or OptimControls(max_iter=2000)
    p = field.n_params
    box = penalty.box_for(field=field)
    if smoother_tag is None:
        smoother_tag = smoothed_list[0].descriptor + ("+std" if standardize else "")
    if field.linear_in_params:
        X, y = assemble_im_design(field, dataset, smoothed_list, standardize=standardize)
        oracle = _linear_oracle(X, y)
    else:
        oracle = _im_nonlinear_oracle(field, dataset, smoothed_list,
                                      standardize=standardize)
    states = screened_path(oracle, penalty, p, box=box, controls=controls)
    return _states_to_results(states, "im", smoother=smoother_tag)


def _ls_oracle(field, dataset, config, weights=None, scales=None, x0s=None,
               info_sink=None):
    def oracle(theta, coords):
        loss, grad, info = ls_loss_and_gradient(
            field, theta, dataset, config, coords=coords,
            weights=weights, scales=scales, x0s=x0s)
        if info_sink is not None:
            info_sink.update(info)
        return loss, grad[coords]

    return oracle


def penalized_least_squares(field, dataset, penalty=None, init=None,
                            solve_config=None, x0s=None, controls=None,
                            weights=None, scales=None):
    """Penalized nonlinear least squares along the lam path (continuation).

    Initialized at ``init`` (zero by default); each lam is warm-started from
    the previous optimum.  Environments with diverged solves are flagged in
    the result diagnostics and the path continues.
    """
    penalty = penalty or PenaltyConfig(kind="l1")
    # exact gradients of the discrete flow: Euler sensitivities leave an O(h)
    # bias that blocks convergence at tight KKT tolerances
    solve_config = solve_config or SolveConfig(sensitivity_method="simultaneous-rk4")
    controls = controls or OptimControls(max_iter=300)
    p = field.n_params
    box = penalty.box_for(field=field)
    info_sink = {}
    oracle = _ls_oracle(field, dataset, solve_config, weights=weights,
                        scales=scales, x0s=x0s, info_sink=info_sink)
    states = screened_path(oracle, penalty, p, box=box, theta0=init,
                           controls=controls)
    results = _states_to_results(states, "ls")
    for r in results:
        r.diagnostics["diverged_envs"] = list(info_sink.get("diverged_envs", []))
    return results


def _null_fit(field, dataset, solve_config, weights, scales, x0s):
    loss, _, info = ls_loss_and_gradient(
        field, np.zeros(field.n_params), dataset, solve_config,
        coords=np.array([], dtype=int), weights=weights, scales=scales, x0s=x0s)
    return FitResult(
        lambda_=0.0, theta=np.zeros(field.n_params), support=(),
        objective=float(loss), kind="refit",
        diagnostics={"iterations": 0, "diverged_envs": info["diverged_envs"]},
    )


def refit_on_support(field, dataset, support, init=None, solve_config=None,
                     weights=None, scales=None, x0s=None, max_iter=80,
                     tol=1e-10):
    """Unpenalized weighted least squares with theta restricted to ``support``.

    theta-linear families take frozen-trajectory Gauss-Newton steps, accepted
    only when the true loss decreases, with a backtracked gradient step as
    fallback; other families run projected gradient descent.  Returns the
    loss at the optimum for ranking.
    """
    solve_config = solve_config or SolveConfig(sensitivity_method="simultaneous-rk4")
    support = tuple(sorted(int(j) for j in support))
    if len(support) == 0:
        return _null_fit(field, dataset, solve_config, weights, scales, x0s)

    p = field.n_params
    sub = field.restricted(support)
    cols = np.asarray(support, dtype=int)
    scales_full = dataset.scales_for(p) if scales is None else scales
    sub_scales = [np.asarray(c, dtype=float)[cols] for c in scales_full]
    sub_dataset = Dataset(environments=dataset.environments,
                          scales=tuple(sub_scales), species=dataset.species)
    lo, hi = sub.default_box()

    theta = np.zeros(len(support)) if init is None else \
        np.asarray(init, dtype=float)[cols].copy()
    theta = np.clip(theta, lo, hi)

    def loss_at(t):
        val, _, info = ls_loss_and_gradient(
            sub, t, sub_dataset, solve_config, coords=np.array([], dtype=int),
            weights=weights, x0s=x0s)
        return val, info

    loss, info = loss_at(theta)
    n_frozen = n_gn = n_fallback = 0
    diverged = set(info["diverged_envs"])
    if sub.linear_in_params:
        frozen_ok = True
        for _ in range(max_iter):
            improved = False
            if frozen_ok:
                # cheap frozen-trajectory candidate (one state solve, no
                # sensitivities); good far from the optimum
                try:
                    step, _ = approximate_gradient_step(
                        sub, theta, sub_dataset, solve_config,
                        weights=weights, x0s=x0s)
                    cand = np.clip(step, lo, hi)
                    cand_loss, info = loss_at(cand)
                except SolverDivergedError:
                    cand, cand_loss = None, np.inf
                if np.isfinite(cand_loss) and cand_loss < loss - tol * (1 + loss):
                    if cand_loss > 0.5 * loss:
                        frozen_ok = False  # linear rate has flattened out
                    theta, loss = cand, cand_loss
                    diverged |= set(info["diverged_envs"])
                    n_frozen += 1
                    improved = True
                else:
                    frozen_ok = False
            if not improved:
                # exact Gauss-Newton on the sensitivity linearization
                stepped = _gauss_newton_step(sub, sub_dataset, solve_config,
                                             theta, loss, (lo, hi), weights, x0s)
                if stepped is not None and stepped[1] < loss - tol * (1 + loss):
                    theta, loss = stepped
                    n_gn += 1
                    improved = True
            if not improved:
                # one classic gradient-based step before giving up
                stepped = _gradient_step(sub, sub_dataset, solve_config, theta,
                                         (lo, hi), weights, x0s)
                n_fallback += 1
                if stepped is None or stepped[1] >= loss - tol * (1 + loss):
                    break
                theta, loss = stepped
    else:
        pen = PenaltyConfig(kind="none")
        oracle = _ls_oracle(sub, sub_dataset, solve_config, weights=weights,
                            x0s=x0s)
        st = proximal_gradient(oracle, pen, 0.0, theta, box=(lo, hi),
                               controls=OptimControls(max_iter=max_iter * 5))
        theta, loss = st.theta, st.loss
        n_fallback = st.iterations

    full = np.zeros(p)
    full[cols] = theta
    return FitResult(
        lambda_=0.0, theta=full,
        support=tuple(int(j) for j in np.flatnonzero(full)),
        objective=float(loss), kind="refit",
        diagnostics={"frozen_steps": n_frozen, "gn_steps": n_gn,
                     "fallback_steps": n_fallback,
                     "diverged_envs": sorted(diverged)},
    )


def _gauss_newton_step(field, dataset, config, theta, loss, box, weights, x0s):
    """Backtracked Gauss-Newton step from the exact sensitivity linearization.

    Returns (theta_new, loss_new) or None if no step length decreases the loss.
    """
    from .solver import solve_sensitivities

    scales = dataset.scales_for(field.n_params)
    rows, resid = [], []
    for e, env in enumerate(dataset.environments):
        c = scales[e]
        w = env.weights if weights is None else weights[e]
        x0 = env.values[0] if x0s is None else x0s[e]
        cols = np.flatnonzero(c)
        try:
            traj = solve_sensitivities(field, theta * c, np.maximum(x0, 0.0),
                                       env.times, config, coords=cols)
        except SolverDivergedError:
            return None
        if traj.diverged or traj.times.shape[0] != env.times.shape[0]:
            return None
        sw = np.sqrt(w)
        S = np.zeros(traj.sens_theta.shape[:2] + (field.n_params,))
        S[:, :, cols] = traj.sens_theta * c[cols][None, None, :]
        rows.append((sw[:, :, None] * S).reshape(-1, field.n_params))
        resid.append((sw * (env.values - traj.states)).reshape(-1))
    D = np.concatenate(rows)
    r = np.concatenate(resid)
    delta, *_ = np.linalg.lstsq(D, r, rcond=None)
    alpha = 1.0
    for _ in range(25):
        cand = np.clip(theta + alpha * delta, box[0], box[1])
        val, _, _ = ls_loss_and_gradient(
            field, cand, dataset, config, coords=np.array([], dtype=int),
            weights=weights, x0s=x0s)
        if np.isfinite(val) and val < loss:
            return cand, val
        alpha *= 0.5
    return None


def _gradient_step(field, dataset, config, theta, box, weights, x0s):
    """One backtracked projected gradient step on the LS loss; None on failure."""
    loss, grad, _ = ls_loss_and_gradient(field, theta, dataset, config,
                                         weights=weights, x0s=x0s)
    tau = 1.0 / max(1.0, float(np.max(np.abs(grad), initial=0.0)))
    for _ in range(40):
        cand = np.clip(theta - tau * grad, box[0], box[1])
        val, _, _ = ls_loss_and_gradient(
            field, cand, dataset, config, coords=np.array([], dtype=int),
            weights=weights, x0s=x0s)
        if np.isfinite(val) and val < loss:
            return cand, val
        tau *= 0.5
    return None


# ---------------------------------------------------------------------------
# Exhaustive gradient matching
# ---------------------------------------------------------------------------


@dataclass
class EgmResult:
    """Nested global support sequence with per-step collocation losses."""

    sequence: list  # k-th entry: sorted tuple of parameter indices, k = 0..
    losses: list
    per_species: list  # per species: {k: (subset tuple, per-species rss)}
    alphas: list = dataclass_field(default_factory=list)

    def reaction_order(self, p):
        """First sequence index at which each parameter enters (inf if never)."""
        order = np.full(p, np.inf)
        for k, subset in enumerate(self.sequence):
            for j in subset:
                if not np.isfinite(order[j]):
                    order[j] = k
        return order


def _grid_derivative(traj):
    """Central differences of the smoothed curve on its fine grid, evaluated
    at the observation times (one-sided at the range ends)."""
    t, v = traj.times, traj.values
    D = np.empty_like(v)
    D[1:-1] = (v[2:] - v[:-2]) / (t[2:] - t[:-2])[:, None]
    D[0] = (v[1] - v[0]) / (t[1] - t[0])
    D[-1] = (v[-1] - v[-2]) / (t[-1] - t[-2])
    return D[traj.obs_index]


def egm_search(field, dataset, smoothed_list, max_size_per_species=5,
               column_cap=25, max_support=None):
    """Best-subset collocation search per species, merged greedily.

    For every species the dynamics dx_l/dt (from the smoothed curves) are
    regressed on the field columns that structurally affect that species;
    optimal subsets of each size up to ``max_size_per_species`` are found by
    exhaustive enumeration.  The per-species sequences are merged into one
    nested global sequence by repeatedly incrementing the species whose next
    subset improves the stacked collocation loss the most (ties to the lowest
    species index).
    """
    if not field.linear_in_params:
        raise SpecificationError("exhaustive gradient matching requires a theta-linear field")
    _check_smoothed(dataset, smoothed_list)
    p = field.n_params
    d = field.n_species
    scales = dataset.scales_for(p)
    mask = field.species_param_mask()
    any_scale = np.zeros(p, dtype=bool)
    for c in scales:
        any_scale |= c != 0.0

    # responses and designs at the collocation points (observation times)
    Y = [[] for _ in range(d)]
    X = [[] for _ in range(d)]
    for e, env in enumerate(dataset.environments):
        traj = smoothed_list[e]
        deriv = _grid_derivative(traj)  # (n, d)
        J = field.jacobian_theta_grid(np.zeros(p), traj.obs_values)  # (n, d, p)
        J = J * scales[e][None, None, :]
        for l in range(d):
            Y[l].append(deriv[:, l])
            X[l].append(J[:, l, :])
    Y = [np.concatenate(rows) for rows in Y]
    X = [np.concatenate(rows, axis=0) for rows in X]

    cols_per_species = []
    for l in range(d):
        cols = np.flatnonzero(mask[l] & any_scale)
        if cols.size > column_cap:
            raise InfeasibleSearchError(
                f"species {l} has {cols.size} candidate columns; exhaustive "
                f"search is refused above {column_cap}"
            )
        cols_per_species.append(cols)

    def rss(y, Xmat):
        if Xmat.shape[1] == 0:
            return float(y @ y)
        coef, _, _, _ = np.linalg.lstsq(Xmat, y, rcond=None)
        r = y - Xmat @ coef
        return float(r @ r)

    per_species = []
    for l in range(d):
        cols = cols_per_species[l]
        K = min(max_size_per_species, cols.size)
        best = {0: ((), rss(Y[l], X[l][:, []]))}
        for k in range(1, K + 1):
            best_subset, best_val = None, np.inf
            for combo in itertools.combinations(cols.tolist(), k):
                val = rss(Y[l], X[l][:, list(combo)])
                if val < best_val:
                    best_subset, best_val = combo, val
            best[k] = (tuple(best_subset), best_val)
        per_species.append(best)

    # greedy merge on the stacked loss
    Y_all = np.concatenate(Y)
    X_all = np.vstack(X)

    def global_loss(support):
        return rss(Y_all, X_all[:, sorted(support)])

    alpha = [0] * d
    union = set()
    sequence = [tuple()]
    losses = [global_loss(union)]
    alphas = [tuple(alpha)]
    total_steps = d * max_size_per_species
    for _ in range(total_steps):
        best_l, best_val, best_union = None, np.inf, None
        for l in range(d):
            if alpha[l] + 1 not in per_species[l]:
                continue
            # the sequence accumulates, so it is nested even though the
            # per-species best subsets of different sizes need not nest
            cand_union = union | set(per_species[l][alpha[l] + 1][0])
            val = global_loss(cand_union)
            if val < best_val:
                best_l, best_val, best_union = l, val, cand_union
        if best_l is None:
            break
        alpha[best_l] += 1
        union = best_union
        sequence.append(tuple(sorted(union)))
        losses.append(best_val)
        alphas.append(tuple(alpha))
        if max_support is not None and len(union) >= max_support:
            break
    return EgmResult(sequence=sequence, losses=losses, per_species=per_species,
                     alphas=alphas)


# ---------------------------------------------------------------------------
# Estimator API
# ---------------------------------------------------------------------------


class _SmootherMixin:
    def _smooth(self, dataset):
        if self.smoother == "interpolate" or self.bandwidth == 0:
            return [
                linear_interpolate(env.times, env.values, grid_density=self.grid_density, env=e)
                for e, env in enumerate(dataset.environments)
            ]
        if self.smoother == "kernel":
            return [
                kernel_smooth(env.times, env.values, self.bandwidth,
                              grid_density=self.grid_density, env=e)
                for e, env in enumerate(dataset.environments)
            ]
        raise SpecificationError(f"unknown smoother {self.smoother!r}")


class IntegralMatching(BaseEstimator, _SmootherMixin):
    """Integral matching estimator with an sklearn-style interface.

    fit(dataset) populates ``results_`` (one FitResult per lam) and
    ``theta_`` (the smallest-lam estimate).
    """

    def __init__(self, field=None, penalty=None, smoother="interpolate",
                 bandwidth=0.0, grid_density=20, standardize=False):
        self.field = field
        self.penalty = penalty
        self.smoother = smoother
        self.bandwidth = bandwidth
        self.grid_density = grid_density
        self.standardize = standardize

    def fit(self, dataset, smoothed_list=None):
        if self.field is None:
            raise SpecificationError("a field model is required")
        smoothed = smoothed_list or self._smooth(dataset)
        self.smoothed_ = smoothed
        self.x0s_ = smoothed_initial_states(smoothed)
        self.results_ = integral_matching(
            self.field, dataset, smoothed, penalty=self.penalty,
            standardize=self.standardize)
        self.theta_ = self.results_[-1].theta
        return self

    def predict(self, times, env=0, theta=None, solve_config=None):
        """Trajectory of the fitted model from the environment's initial state."""
        theta = self.theta_ if theta is None else theta
        return solve_ivp(self.field, theta, self.x0s_[env], times,
                         solve_config or SolveConfig()).states


class SparseLeastSquares(BaseEstimator):
    """Penalized ODE least squares (continuation over lam, screening)."""

    def __init__(self, field=None, penalty=None, solve_config=None, init=None):
        self.field = field
        self.penalty = penalty
        self.solve_config = solve_config
        self.init = init

    def fit(self, dataset):
        if self.field is None:
            raise SpecificationError("a field model is required")
        self.results_ = penalized_least_squares(
            self.field, dataset, penalty=self.penalty, init=self.init,
            solve_config=self.solve_config)
        self.x0s_ = [env.values[0] for env in dataset.environments]
        self.theta_ = self.results_[-1].theta
        return self

    def predict(self, times, env=0, theta=None):
        theta = self.theta_ if theta is None else theta
        return solve_ivp(self.field, theta, np.maximum(self.x0s_[env], 0.0),
                         times, self.solve_config or SolveConfig()).states


class ExhaustiveGradientMatching(BaseEstimator, _SmootherMixin):
    """Per-species best-subset collocation search (EGM)."""

    def __init__(self, field=None, max_size_per_species=5, column_cap=25,
                 smoother="interpolate", bandwidth=0.0, grid_density=20,
                 max_support=None):
        self.field = field
        self.max_size_per_species = max_size_per_species
        self.column_cap = column_cap
        self.smoother = smoother
        self.bandwidth = bandwidth
        self.grid_density = grid_density
        self.max_support = max_support

    def fit(self, dataset, smoothed_list=None):
        if self.field is None:
            raise SpecificationError("a field model is required")
        smoothed = smoothed_list or self._smooth(dataset)
        self.result_ = egm_search(
            self.field, dataset, smoothed,
            max_size_per_species=self.max_size_per_species,
            column_cap=self.column_cap, max_support=self.max_support)
        self.sequence_ = self.result_.sequence
        return self
