"""Initial value solves, sensitivity propagation and least-squares gradients.

Two state integrators are provided: a fixed-step classic Runge-Kutta 4 and an
embedded Fehlberg 4(5) pair with adaptive steps clamped to land exactly on the
requested output times.  Sensitivities d x / d theta solve the matrix ODE

    dS/dt = (df/dx) S + df/dtheta,      S(0) = 0,

propagated alongside the state on the accepted step grid, either with a single
Euler update per step (cheap, the default) or with a full RK4 update whose
stage states are the RK4 stages of the state itself.  The latter is the exact
derivative of the discrete RK4 flow.

States exceeding the overflow guard mark the trajectory as diverged instead of
propagating non-finite values into the caller.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    SolverDivergedError,
    SpecificationError,
    StepLimitError,
)
from .validation import as_float_vector, check_times

__all__ = [
    "SolveConfig",
    "Trajectory",
    "solve_ivp",
    "solve_sensitivities",
    "ls_loss_and_gradient",
    "approximate_gradient_step",
]

OVERFLOW_GUARD = 1e12

# Fehlberg 4(5) tableau; 4th order solution is propagated, the TR row gives
# the local truncation error estimate (difference of the embedded orders).
_RKF_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_RKF_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8.0, 3680 / 513, -845 / 4104],
    [-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_RKF_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_RKF_TR = np.array([1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55])


@dataclass
class SolveConfig:
    method: str = "rkf45-adaptive"  # "rk4-fixed" | "rkf45-adaptive"
    step: float = 0.01  # fixed step bound / initial adaptive step
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    max_steps: int = 1_000_000
    sensitivity_method: str = "simultaneous-euler"  # | "simultaneous-rk4"
    overflow_guard: float = OVERFLOW_GUARD
    clip_negative: bool = True  # project states onto x >= 0 at field evaluations

    def __post_init__(self):
        if self.method not in ("rk4-fixed", "rkf45-adaptive"):
            raise SpecificationError(f"unknown solver method {self.method!r}")
        if self.sensitivity_method not in ("simultaneous-euler", "simultaneous-rk4"):
            raise SpecificationError(
                f"unknown sensitivity method {self.sensitivity_method!r}"
            )
        if self.step <= 0 or self.abs_tol <= 0 or self.rel_tol <= 0:
            raise SpecificationError("step and tolerances must be positive")
        if self.max_steps <= 0:
            raise SpecificationError("max_steps must be positive")


@dataclass
class Trajectory:
    times: np.ndarray  # requested times that were reached
    states: np.ndarray  # (m, d)
    sens_theta: np.ndarray | None = None  # (m, d, p)
    sens_x0: np.ndarray | None = None  # (m, d, d)
    diverged: bool = False
    reason: str = ""
    n_steps: int = 0
    diagnostics: dict = dataclass_field(default_factory=dict)

    @property
    def final_state(self):
        return self.states[-1]


class _Integrator:
    """Shared stepping machinery; optionally propagates sensitivities."""

    def __init__(self, field, theta, config, sens_cols=None, with_x0=False):
        self.config = config
        self.guard = config.overflow_guard
        self.clip = config.clip_negative
        theta = field._check_theta(theta)
        self.field = field
        self.theta = theta
        self.d = field.n_species
        self.sens_cols = sens_cols
        self.with_x0 = with_x0
        self.n_steps = 0

    def _x(self, x):
        return np.maximum(x, 0.0) if self.clip else x

    def f(self, x):
        return self.field._eval(self.theta, self._x(x)[None, :])[0]

    def jac_x(self, x):
        return self.field._jac_x(self.theta, self._x(x))

    def jac_theta(self, x):
        J = self.field._jac_theta(self.theta, self._x(x)[None, :])[0]
        if self.sens_cols is not None:
            J = J[:, self.sens_cols]
        return J

    def sens_rhs(self, x, S, Sx0):
        Jx = self.jac_x(x)
        dS = Jx @ S + self.jac_theta(x) if S is not None else None
        dSx0 = Jx @ Sx0 if Sx0 is not None else None
        return dS, dSx0

    def rk4_state_stages(self, x, h):
        k1 = self.f(x)
        k2 = self.f(x + 0.5 * h * k1)
        k3 = self.f(x + 0.5 * h * k2)
        k4 = self.f(x + h * k3)
        return k1, k2, k3, k4

    def advance_sens(self, x_old, x_new, h, S, Sx0, state_stages=None):
        """One sensitivity step over [t, t+h] given the state endpoints."""
        if S is None and Sx0 is None:
            return S, Sx0
        if self.config.sensitivity_method == "simultaneous-euler":
            dS, dSx0 = self.sens_rhs(x_old, S, Sx0)
            S = S + h * dS if S is not None else None
            Sx0 = Sx0 + h * dSx0 if Sx0 is not None else None
            return S, Sx0
        # simultaneous-rk4: stage states follow the RK4 stages of the state
        if state_stages is None:
            state_stages = self.rk4_state_stages(x_old, h)
        k1, k2, k3, _ = state_stages
        xs = (x_old, x_old + 0.5 * h * k1, x_old + 0.5 * h * k2, x_old + h * k3)
        coeffs = (0.0, 0.5, 0.5, 1.0)
        dS_stages, dSx0_stages = [], []
        for i in range(4):
            S_i = S + coeffs[i] * h * dS_stages[i - 1] if (S is not None and i) else S
            Sx0_i = (
                Sx0 + coeffs[i] * h * dSx0_stages[i - 1]
                if (Sx0 is not None and i)
                else Sx0
            )
            dS_i, dSx0_i = self.sens_rhs(xs[i], S_i, Sx0_i)
            dS_stages.append(dS_i)
            dSx0_stages.append(dSx0_i)
        if S is not None:
            S = S + h / 6.0 * (
                dS_stages[0] + 2 * dS_stages[1] + 2 * dS_stages[2] + dS_stages[3]
            )
        if Sx0 is not None:
            Sx0 = Sx0 + h / 6.0 * (
                dSx0_stages[0]
                + 2 * dSx0_stages[1]
                + 2 * dSx0_stages[2]
                + dSx0_stages[3]
            )
        return S, Sx0

    def bad(self, x):
        return not np.all(np.isfinite(x)) or np.any(np.abs(x) > self.guard)


def _integrate(field, theta, x0, times, config, sens_cols=None, with_x0=False,
               segment_hook=None, output_hook=None):
    """Core driver shared by the solve operations.

    ``segment_hook(t0, x0, t1, x1)`` is called for every accepted step and can
    be used to accumulate quadrature along the solution; ``output_hook(i)`` is
    called when requested time ``times[i]`` is reached.  Accepted steps never
    cross a requested output time.
    """
    times = check_times(times, min_points=1)
    x0 = as_float_vector(x0, "x0", length=field.n_species)
    it = _Integrator(field, theta, config, sens_cols=sens_cols, with_x0=with_x0)

    want_sens = sens_cols is not None or with_x0
    n_cols = len(sens_cols) if sens_cols is not None else 0
    S = np.zeros((field.n_species, n_cols)) if sens_cols is not None else None
    Sx0 = np.eye(field.n_species) if with_x0 else None

    out_states = [x0.copy()]
    out_S = [S.copy()] if S is not None else None
    out_Sx0 = [Sx0.copy()] if Sx0 is not None else None
    reached = 1

    def result(diverged=False, reason=""):
        traj = Trajectory(
            times=times[:reached].copy(),
            states=np.array(out_states),
            sens_theta=np.array(out_S) if out_S is not None else None,
            sens_x0=np.array(out_Sx0) if out_Sx0 is not None else None,
            diverged=diverged,
            reason=reason,
            n_steps=it.n_steps,
        )
        return traj

    if it.bad(x0):
        if not np.all(np.isfinite(x0)):
            raise SolverDivergedError("non-finite initial state", trajectory=result())
        return result(diverged=True, reason="initial state exceeds overflow guard")

    x = x0.copy()
    t = times[0]
    adaptive = config.method == "rkf45-adaptive"
    h_next = config.step

    for i_out in range(1, len(times)):
        t_target = times[i_out]
        if not adaptive:
            n_sub = max(1, int(np.ceil((t_target - t) / config.step - 1e-12)))
            h = (t_target - t) / n_sub
            for _ in range(n_sub):
                it.n_steps += 1
                if it.n_steps > config.max_steps:
                    raise StepLimitError("max_steps exceeded", trajectory=result())
                stages = it.rk4_state_stages(x, h)
                if any(not np.all(np.isfinite(k)) for k in stages):
                    raise SolverDivergedError(
                        f"non-finite field evaluation at t={t:.6g}", trajectory=result()
                    )
                k1, k2, k3, k4 = stages
                x_new = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                if it.bad(x_new):
                    if not np.all(np.isfinite(x_new)):
                        raise SolverDivergedError(
                            f"non-finite state at t={t + h:.6g}", trajectory=result()
                        )
                    return result(diverged=True, reason=f"overflow guard at t={t + h:.6g}")
                S, Sx0 = it.advance_sens(x, x_new, h, S, Sx0, state_stages=stages)
                if segment_hook is not None:
                    segment_hook(t, x, t + h, x_new)
                x = np.maximum(x_new, 0.0) if it.clip else x_new
                t = t + h
        else:
            while t < t_target - 1e-12 * max(1.0, abs(t_target)):
                it.n_steps += 1
                if it.n_steps > config.max_steps:
                    raise StepLimitError("max_steps exceeded", trajectory=result())
                h = min(h_next, t_target - t)
                accepted = False
                for _ in range(60):
                    ks = []
                    finite = True
                    for s in range(6):
                        xs = x.copy()
                        for j, a in enumerate(_RKF_A[s]):
                            xs = xs + h * a * ks[j]
                        k = it.f(xs)
                        if not np.all(np.isfinite(k)):
                            finite = False
                            break
                        ks.append(k)
                    if finite:
                        err = h * sum(c * k for c, k in zip(_RKF_TR, ks))
                        x_new = x + h * sum(b * k for b, k in zip(_RKF_B4, ks))
                        scale = config.abs_tol + config.rel_tol * np.maximum(
                            np.abs(x), np.abs(x_new)
                        )
                        q = float(np.max(np.abs(err) / scale))
                        if np.isfinite(q) and q <= 1.0 and np.all(np.isfinite(x_new)):
                            factor = 0.9 * (q + 1e-16) ** -0.2
                            h_next = h * min(5.0, max(0.2, factor))
                            accepted = True
                            break
                    h *= 0.5
                    if h < 1e-14 * max(1.0, abs(t_target)):
                        return result(
                            diverged=True, reason=f"step underflow at t={t:.6g}"
                        )
                if not accepted:
                    return result(diverged=True, reason=f"no acceptable step at t={t:.6g}")
                if it.bad(x_new):
                    return result(diverged=True, reason=f"overflow guard at t={t + h:.6g}")
                S, Sx0 = it.advance_sens(x, x_new, h, S, Sx0)
                if segment_hook is not None:
                    segment_hook(t, x, t + h, x_new)
                x = np.maximum(x_new, 0.0) if it.clip else x_new
                t = t + h
        out_states.append(x.copy())
        if out_S is not None:
            out_S.append(S.copy())
        if out_Sx0 is not None:
            out_Sx0.append(Sx0.copy())
        reached += 1
        if output_hook is not None:
            output_hook(i_out)
    return result()


def solve_ivp(field, theta, x0, times, config=None):
    """Solve dx/dt = f(x, theta) from x(t_0) = x0, reporting states at ``times``."""
    config = config or SolveConfig()
    return _integrate(field, theta, x0, times, config)


def solve_sensitivities(field, theta, x0, times, config=None, coords=None, with_x0=False):
    """State solve plus sensitivities d x / d theta (columns ``coords``).

    sens_theta[0] is exactly zero and, when requested, sens_x0[0] is the
    identity.  Columns are propagated simultaneously with the state on the
    accepted step grid.
    """
    config = config or SolveConfig()
    p = field.n_params
    if coords is None:
        cols = np.arange(p)
    else:
        cols = np.asarray(sorted(int(c) for c in coords), dtype=int)
        if cols.size and (cols[0] < 0 or cols[-1] >= p):
            raise DimensionError("sensitivity coords out of range")
    traj = _integrate(field, theta, x0, times, config, sens_cols=cols, with_x0=with_x0)
    if coords is not None and traj.sens_theta is not None:
        traj.diagnostics["sens_cols"] = cols
    return traj


def _env_scales(dataset, p, scales=None):
    if scales is not None:
        out = [as_float_vector(c, "c_e", length=p) for c in scales]
    elif dataset.scales is not None:
        out = [as_float_vector(c, "c_e", length=p) for c in dataset.scales]
    else:
        out = [np.ones(p) for _ in dataset.environments]
    if len(out) != len(dataset.environments):
        raise DimensionError("one scale vector per environment is required")
    return out


def _env_x0(env, x0_override, clip):
    x0 = env.values[0] if x0_override is None else np.asarray(x0_override, dtype=float)
    return np.maximum(x0, 0.0) if clip else x0


def ls_loss_and_gradient(field, theta, dataset, config=None, coords=None,
                         weights=None, scales=None, x0s=None):
    """Weighted least-squares data loss and its exact-in-theta gradient.

    loss = 1/2 sum_e sum_i sum_l w^e_il (y^e_l(t_i) - x^e_l(t_i, theta o c_e))^2

    The gradient is assembled from the sensitivity solves via the chain rule
    through theta o c_e; sensitivity columns are computed only for ``coords``
    (all by default) and only where c_e is nonzero.  Environments whose solve
    diverges contribute the overflow-guard value to the loss and a zero
    gradient, and are reported in the info dict.
    """
    config = config or SolveConfig()
    theta = field._check_theta(theta)
    p = field.n_params
    cs = _env_scales(dataset, p, scales)
    active = np.arange(p) if coords is None else np.asarray(sorted(coords), dtype=int)

    loss = 0.0
    grad = np.zeros(p)
    diverged_envs = []
    for e, env in enumerate(dataset.environments):
        c = cs[e]
        w = env.weights if weights is None else weights[e]
        cols = active[c[active] != 0.0]
        eta = theta * c
        x0 = _env_x0(env, None if x0s is None else x0s[e], config.clip_negative)
        try:
            traj = solve_sensitivities(field, eta, x0, env.times, config, coords=cols)
        except SolverDivergedError:
            loss += config.overflow_guard
            diverged_envs.append(e)
            continue
        if traj.diverged or traj.times.shape[0] != env.times.shape[0]:
            loss += config.overflow_guard
            diverged_envs.append(e)
            continue
        resid = env.values - traj.states  # (n, d)
        loss += 0.5 * float(np.sum(w * resid**2))
        if cols.size:
            # grad_eta over active cols, then chain rule d eta / d theta_j = c_j
            g_cols = -np.einsum("il,ilj->j", w * resid, traj.sens_theta)
            grad[cols] += c[cols] * g_cols
    info = {"diverged_envs": diverged_envs}
    return loss, grad, info


def approximate_gradient_step(field, theta0, dataset, config=None, support=None,
                              weights=None, scales=None, x0s=None):
    """Next-iterate candidate from the frozen-trajectory linear problem.

    With the trajectory held fixed at theta0, minimizing

        sum_e sum_i || y^e(t_i) - x0^e - int_{t_1}^{t_i} f(x^e(s, theta0), theta) ds ||^2_w

    over theta is a linear least-squares problem for theta-linear fields; its
    minimizer is returned (minimum-norm when the design is rank deficient,
    flagged in the info dict).  Callers should accept the candidate only if it
    decreases the true loss and otherwise fall back to a gradient step.
    """
    if not field.linear_in_params:
        raise SpecificationError("approximate gradient step requires a theta-linear field")
    config = config or SolveConfig()
    theta0 = field._check_theta(theta0)
    p = field.n_params
    cs = _env_scales(dataset, p, scales)
    cols = np.arange(p) if support is None else np.asarray(sorted(support), dtype=int)
    if cols.size == 0:
        return np.zeros(p), {"rank": 0, "deficient": False}

    rows = []
    rhs = []
    for e, env in enumerate(dataset.environments):
        c = cs[e]
        w = env.weights if weights is None else weights[e]
        eta0 = theta0 * c
        x0 = _env_x0(env, None if x0s is None else x0s[e], config.clip_negative)
        times = env.times

        # cumulative trapezoid of d f / d theta along the frozen trajectory,
        # snapshotted at every observation time
        acc = np.zeros((field.n_species, cols.size))
        Phi = np.zeros((times.shape[0], field.n_species, cols.size))

        def jac_cols(x):
            return field._jac_theta(theta0, np.maximum(x, 0.0)[None, :])[0][:, cols]

        def segment_hook(t0, x_old, t1, x_new):
            acc[...] += 0.5 * (t1 - t0) * (jac_cols(x_old) + jac_cols(x_new))

        def output_hook(i):
            Phi[i] = acc

        traj = _integrate(
            field, eta0, x0, times, config,
            segment_hook=segment_hook, output_hook=output_hook,
        )
        if traj.diverged or traj.times.shape[0] != times.shape[0]:
            raise SolverDivergedError(
                "state solve diverged while building the frozen design", environment=e
            )
        # design rows: columns scaled by c (chain rule), responses y - x0
        for i in range(1, times.shape[0]):
            Wi = np.sqrt(w[i])
            rows.append(Wi[:, None] * (Phi[i] * c[cols][None, :]))
            rhs.append(Wi * (env.values[i] - x0))
    X = np.concatenate(rows, axis=0)
    y = np.concatenate(rhs, axis=0)
    sol, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    theta_new = np.zeros(p)
    theta_new[cols] = sol
    return theta_new, {"rank": int(rank), "deficient": int(rank) < cols.size}
