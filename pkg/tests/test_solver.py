import numpy as np
import pytest

from sparseode.data import make_dataset
from sparseode.errors import SpecificationError, StepLimitError
from sparseode.fields import MassActionField, PowerLawField, StoichiometrySpec
from sparseode.solver import (
    SolveConfig,
    approximate_gradient_step,
    ls_loss_and_gradient,
    solve_ivp,
    solve_sensitivities,
)

from test_fields import mak_pair_lv, random_field


def decay_field():
    """X -> 0 with rate k: dx/dt = -k x."""
    return MassActionField(StoichiometrySpec([[1]], [[0]]))


def mm_field():
    """Michaelis-Menten as MAK, species order (E, ES, P, S)."""
    A = [[1, 0, 0, 1], [0, 1, 0, 0], [0, 1, 0, 0]]
    B = [[0, 1, 0, 0], [1, 0, 0, 1], [1, 0, 1, 0]]
    return MassActionField(StoichiometrySpec(A, B, species_names=("E", "ES", "P", "S")))


class TestSolveIvp:
    def test_exponential_decay(self):
        traj = solve_ivp(
            decay_field(), [1.0], [1.0], [0.0, 1.0],
            SolveConfig(method="rkf45-adaptive", abs_tol=1e-10, rel_tol=1e-8),
        )
        assert abs(traj.states[-1, 0] - np.exp(-1.0)) < 1e-6

    def test_mm_conservation(self):
        # enzyme + complex is conserved along the solve
        traj = solve_ivp(
            mm_field(), [1.0, 1.0, 1.0], [10.0, 2.0, 2.0, 10.0],
            np.linspace(0, 1, 21),
            SolveConfig(abs_tol=1e-10, rel_tol=1e-10),
        )
        total = traj.states[:, 0] + traj.states[:, 1]
        assert np.max(np.abs(total - total[0])) < 1e-8

    def test_zero_field_constant(self):
        field, _ = mak_pair_lv()
        traj = solve_ivp(field, np.zeros(3), [1.5, 0.5], [0.0, 1.0, 2.0])
        np.testing.assert_allclose(traj.states, [[1.5, 0.5]] * 3)

    def test_rk4_fourth_order_convergence(self):
        field = decay_field()
        errs = []
        for h in (0.1, 0.05):
            traj = solve_ivp(field, [1.0], [1.0], [0.0, 1.0],
                             SolveConfig(method="rk4-fixed", step=h))
            errs.append(abs(traj.states[-1, 0] - np.exp(-1.0)))
        ratio = errs[0] / errs[1]
        assert 12 < ratio < 20

    def test_overflow_guard_flags_divergence(self):
        # X -> 2X with rate 40: x(t) = e^{40 t} crosses 1e12 before t=1
        field = MassActionField(StoichiometrySpec([[1]], [[2]]))
        traj = solve_ivp(field, [40.0], [1.0], [0.0, 1.0],
                         SolveConfig(method="rk4-fixed", step=0.01))
        assert traj.diverged
        assert traj.times.shape[0] < 2

    def test_max_steps(self):
        with pytest.raises(StepLimitError) as err:
            solve_ivp(decay_field(), [1.0], [1.0], [0.0, 1.0],
                      SolveConfig(method="rk4-fixed", step=1e-4, max_steps=10))
        assert err.value.trajectory is not None

    def test_config_validation(self):
        with pytest.raises(SpecificationError):
            SolveConfig(method="leapfrog")
        with pytest.raises(SpecificationError):
            SolveConfig(step=-1.0)


class TestSensitivities:
    def test_analytic_linear(self):
        # dx/dt = theta x, x0 = 1: dx/dtheta = t e^{theta t}
        field = PowerLawField([[1]])
        traj = solve_sensitivities(
            field, [0.5], [1.0], [0.0, 1.0],
            SolveConfig(method="rk4-fixed", step=0.005,
                        sensitivity_method="simultaneous-rk4"),
        )
        expected = 1.0 * np.exp(0.5)
        assert abs(traj.sens_theta[-1, 0, 0] - expected) < 1e-4 * expected

    def test_initial_conditions(self):
        field, theta = mak_pair_lv()
        traj = solve_sensitivities(field, theta, [1.0, 2.0], [0.0, 0.5],
                                   with_x0=True)
        np.testing.assert_array_equal(traj.sens_theta[0], np.zeros((2, 3)))
        np.testing.assert_array_equal(traj.sens_x0[0], np.eye(2))

    def test_lv_finite_difference(self):
        field, theta = mak_pair_lv(v=3.0)
        x0 = np.array([1.0, 2.0])
        times = np.linspace(0, 2, 11)
        config = SolveConfig(method="rk4-fixed", step=0.01,
                             sensitivity_method="simultaneous-rk4")
        traj = solve_sensitivities(field, theta, x0, times, config)
        h = 1e-6
        for j in range(3):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            fd = (
                solve_ivp(field, tp, x0, times, config).states
                - solve_ivp(field, tm, x0, times, config).states
            ) / (2 * h)
            scale = np.maximum(1.0, np.abs(fd))
            assert np.max(np.abs(traj.sens_theta[:, :, j] - fd) / scale) < 1e-4

    def test_euler_sensitivities_first_order(self):
        # the cheap Euler propagator converges at first order to the rk4 answer
        field, theta = mak_pair_lv(v=3.0)
        x0 = np.array([1.0, 2.0])
        times = np.array([0.0, 1.0])
        ref = solve_sensitivities(
            field, theta, x0, times,
            SolveConfig(method="rk4-fixed", step=0.002,
                        sensitivity_method="simultaneous-rk4"),
        ).sens_theta[-1]
        errs = []
        for h in (0.02, 0.01):
            got = solve_sensitivities(
                field, theta, x0, times,
                SolveConfig(method="rk4-fixed", step=h,
                            sensitivity_method="simultaneous-euler"),
            ).sens_theta[-1]
            errs.append(np.max(np.abs(got - ref)))
        assert 1.6 < errs[0] / errs[1] < 2.4
        assert errs[1] < 5e-2 * max(1.0, np.max(np.abs(ref)))

    @pytest.mark.parametrize("family", ["mak", "plk", "rlk", "rmak"])
    def test_all_families_finite_difference(self, family):
        rng = np.random.default_rng(17)
        field, theta = random_field(family, rng)
        if family == "mak":
            theta = theta * 0.3  # keep trajectories tame
        x0 = rng.uniform(0.5, 1.5, field.n_species)
        times = np.linspace(0, 0.5, 6)
        config = SolveConfig(method="rk4-fixed", step=0.005,
                             sensitivity_method="simultaneous-rk4",
                             clip_negative=False)
        traj = solve_sensitivities(field, theta, x0, times, config)
        h = 1e-6
        for j in range(field.n_params):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h * max(1, abs(theta[j]))
            tm[j] -= h * max(1, abs(theta[j]))
            denom = 2 * h * max(1, abs(theta[j]))
            fd = (
                solve_ivp(field, tp, x0, times, config).states
                - solve_ivp(field, tm, x0, times, config).states
            ) / denom
            scale = np.maximum(1.0, np.abs(fd))
            assert np.max(np.abs(traj.sens_theta[:, :, j] - fd) / scale) < 1e-4

    def test_restricted_columns(self):
        field, theta = mak_pair_lv()
        full = solve_sensitivities(field, theta, [1.0, 2.0], [0.0, 1.0])
        part = solve_sensitivities(field, theta, [1.0, 2.0], [0.0, 1.0], coords=[2, 0])
        np.testing.assert_allclose(part.sens_theta, full.sens_theta[:, :, [0, 2]])


def lv_dataset(field, theta, x0s, times, rng=None, sigma=0.0, scales=None):
    envs = []
    config = SolveConfig(abs_tol=1e-12, rel_tol=1e-10)
    for e, x0 in enumerate(x0s):
        eta = theta if scales is None else theta * scales[e]
        traj = solve_ivp(field, eta, x0, times, config)
        y = traj.states.copy()
        if sigma > 0:
            y += rng.normal(0, sigma, size=y.shape)
        envs.append((times, y))
    return make_dataset(envs, scales=scales)


class TestLsLoss:
    def setup_method(self):
        self.field, self.theta = mak_pair_lv(v=3.0)
        self.times = np.linspace(0, 2, 9)
        self.dataset = lv_dataset(self.field, self.theta,
                                  [[1.0, 2.0], [2.0, 0.5]], self.times)
        self.config = SolveConfig(method="rk4-fixed", step=0.01,
                                  sensitivity_method="simultaneous-rk4")

    def test_zero_at_truth(self):
        loss, grad, info = ls_loss_and_gradient(
            self.field, self.theta, self.dataset, self.config)
        assert loss < 1e-10
        assert np.max(np.abs(grad)) < 1e-5
        assert info["diverged_envs"] == []

    def test_zero_scale_environment(self):
        # data generated unscaled, then declared as a c_e = 0 environment:
        # its residuals are nonzero but its gradient contribution must vanish
        base = lv_dataset(self.field, self.theta, [[1.0, 2.0], [2.0, 0.5]], self.times)
        ds = make_dataset(
            [(env.times, env.values) for env in base.environments],
            scales=[np.ones(3), np.zeros(3)],
        )
        theta = self.theta * 1.1
        loss_full, grad_full, _ = ls_loss_and_gradient(self.field, theta, ds, self.config)
        ds_single = make_dataset(
            [(base.environments[0].times, base.environments[0].values)],
            scales=[np.ones(3)])
        loss_one, grad_one, _ = ls_loss_and_gradient(
            self.field, theta, ds_single, self.config)
        np.testing.assert_allclose(grad_full, grad_one, rtol=1e-12, atol=1e-12)
        assert loss_full > loss_one

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        mm = mm_field()
        theta = np.array([1.0, 1.0, 1.0])
        times = np.linspace(0, 1, 6)
        ds = lv_dataset(mm, theta, [[10.0, 2.0, 2.0, 10.0]], times,
                        rng=rng, sigma=0.05)
        config = SolveConfig(method="rk4-fixed", step=0.01,
                             sensitivity_method="simultaneous-rk4")
        point = theta * rng.uniform(0.9, 1.1, 3)
        loss, grad, _ = ls_loss_and_gradient(mm, point, ds, config)
        h = 1e-6
        for j in range(3):
            tp, tm = point.copy(), point.copy()
            tp[j] += h
            tm[j] -= h
            fp, _, _ = ls_loss_and_gradient(mm, tp, ds, config)
            fm, _, _ = ls_loss_and_gradient(mm, tm, ds, config)
            fd = (fp - fm) / (2 * h)
            assert abs(grad[j] - fd) / max(1.0, abs(fd)) < 1e-3

    def test_environment_permutation_invariance(self):
        theta = self.theta * 1.2
        l1, g1, _ = ls_loss_and_gradient(self.field, theta, self.dataset, self.config)
        l2, g2, _ = ls_loss_and_gradient(
            self.field, theta, self.dataset.permuted([1, 0]), self.config)
        assert l1 == pytest.approx(l2, rel=1e-12)
        np.testing.assert_allclose(g1, g2, rtol=1e-12)

    def test_coord_zero_when_scale_zero_everywhere(self):
        scales = [np.array([1.0, 0.0, 1.0]), np.array([1.0, 0.0, 1.0])]
        ds = lv_dataset(self.field, self.theta, [[1.0, 2.0], [2.0, 0.5]],
                        self.times, scales=scales)
        _, grad, _ = ls_loss_and_gradient(
            self.field, self.theta * 1.3, ds, self.config)
        assert grad[1] == 0.0

    def test_diverged_environment_contributes_guard(self):
        # rate large enough to blow past the guard within the window
        field = MassActionField(StoichiometrySpec([[1]], [[2]]))
        times = np.array([0.0, 1.0])
        ds = make_dataset([(times, [[1.0], [1.0]])])
        config = SolveConfig(method="rk4-fixed", step=0.01)
        loss, grad, info = ls_loss_and_gradient(field, [40.0], ds, config)
        assert info["diverged_envs"] == [0]
        assert loss >= config.overflow_guard
        np.testing.assert_array_equal(grad, [0.0])


class TestApproximateGradientStep:
    def test_fixed_point_at_truth(self):
        field, theta = mak_pair_lv(v=3.0)
        times = np.linspace(0, 2, 21)
        ds = lv_dataset(field, theta, [[1.0, 2.0]], times)
        config = SolveConfig(method="rk4-fixed", step=0.002)
        step, info = approximate_gradient_step(field, theta, ds, config)
        assert not info["deficient"]
        np.testing.assert_allclose(step, theta, rtol=2e-3)

    def test_gauss_newton_equivalence(self):
        # independent oracle: Gauss-Newton on the LS loss with sensitivities
        # truncated to dS/dt = df/dtheta (dropping the df/dx S term)
        field, theta_true = mak_pair_lv(v=3.0)
        sub = field.restricted([0, 1])  # two-parameter instance
        theta_true2 = theta_true[[0, 1]]
        times = np.linspace(0, 1.5, 16)
        rng = np.random.default_rng(5)
        ds = lv_dataset(sub, theta_true2, [[1.0, 2.0]], times, rng=rng, sigma=0.05)
        config = SolveConfig(method="rk4-fixed", step=0.0005)
        theta0 = theta_true2 * np.array([1.2, 0.8])
        step, _ = approximate_gradient_step(sub, theta0, ds, config)

        # oracle: integrate the truncated sensitivity system with its own
        # stepper, then solve the Gauss-Newton normal equations
        env = ds.environments[0]
        x0 = env.values[0]
        fine = np.linspace(times[0], times[-1], 3001)
        traj = solve_ivp(sub, theta0, x0, fine, config)
        J = sub.jacobian_theta_grid(theta0, np.maximum(traj.states, 0))
        S = np.zeros((len(times), 2, 2))
        acc = np.zeros((2, 2))
        k = 0
        for g in range(1, fine.shape[0]):
            acc += 0.5 * (fine[g] - fine[g - 1]) * (J[g - 1] + J[g])
            while k + 1 < len(times) and abs(fine[g] - times[k + 1]) < 1e-12:
                k += 1
                S[k] = acc
        x_theta0 = solve_ivp(sub, theta0, x0, times, config).states
        resid = env.values - x_theta0
        D = S.reshape(-1, 2)
        r = resid.reshape(-1)
        delta = np.linalg.lstsq(D, r + D @ theta0, rcond=None)[0]
        np.testing.assert_allclose(step, delta, rtol=1e-5, atol=1e-8)

    def test_zero_column_minimum_norm(self):
        field, theta = mak_pair_lv(v=3.0)
        times = np.linspace(0, 1, 11)
        ds = lv_dataset(field, theta, [[1.0, 2.0]], times)
        # scale coordinate 2 to zero in the only environment: frozen design
        # column is zero, minimum-norm solution leaves it at 0
        scales = [np.array([1.0, 1.0, 0.0])]
        ds0 = make_dataset([(times, ds.environments[0].values)], scales=scales)
        step, info = approximate_gradient_step(
            field, theta, ds0, SolveConfig(method="rk4-fixed", step=0.005))
        assert step[2] == 0.0
        assert info["deficient"]

    def test_rejects_nonlinear_family(self):
        rng = np.random.default_rng(0)
        field, theta = random_field("rmak", rng)
        times = np.linspace(0, 1, 5)
        ds = make_dataset([(times, rng.uniform(0.5, 1, (5, field.n_species)))])
        with pytest.raises(SpecificationError):
            approximate_gradient_step(field, theta, ds)
