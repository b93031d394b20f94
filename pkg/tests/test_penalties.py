import numpy as np
import pytest

from sparseode.errors import SpecificationError
from sparseode.penalties import (
    PenaltyConfig,
    default_lambda_path,
    kkt_residual,
    lambda_max,
    majorize_weights,
    penalty_term,
    prox_operator,
    threshold_weights,
)


class TestProxOperator:
    def test_closed_form_example(self):
        # theta=3, tau*p=1, lam*mu=0.5 -> sign(2) * max(0, 2 - 0.5) = 1.5
        out = prox_operator(np.array([3.0]), np.array([1.0]), 1.0, 0.5, np.array([1.0]))
        assert out[0] == pytest.approx(1.5)

    def test_zero_lambda_is_gradient_step(self):
        rng = np.random.default_rng(0)
        theta = rng.normal(size=8)
        grad = rng.normal(size=8)
        out = prox_operator(theta, grad, 0.3, 0.0, np.ones(8))
        np.testing.assert_allclose(out, theta - 0.3 * grad)

    def test_thresholds_to_exact_zero(self):
        out = prox_operator(np.array([0.4]), np.array([0.1]), 1.0, 1.0, np.array([0.5]))
        assert out[0] == 0.0

    def test_box_clipping(self):
        out = prox_operator(np.array([-2.0, 5.0]), np.zeros(2), 1.0, 0.0,
                            np.zeros(2), box=(np.zeros(2), np.full(2, 3.0)))
        np.testing.assert_array_equal(out, [0.0, 3.0])

    def test_support_subset_of_threshold_exceeders(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            theta = rng.normal(size=10)
            grad = rng.normal(size=10)
            tau = rng.uniform(0.1, 2.0)
            lam = rng.uniform(0.0, 1.0)
            mu = rng.uniform(0, 1, 10)
            out = prox_operator(theta, grad, tau, lam, mu)
            z = theta - tau * grad
            exceeds = np.abs(z) > lam * mu
            assert set(np.flatnonzero(out)) <= set(np.flatnonzero(exceeds))

    def test_nonexpansive_in_theta(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = rng.integers(1, 12)
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            grad = rng.normal(size=n)
            tau = rng.uniform(0.01, 3.0)
            lam = rng.uniform(0, 2.0)
            mu = rng.uniform(0, 2.0, n)
            pa = prox_operator(a, grad, tau, lam, mu)
            pb = prox_operator(b, grad, tau, lam, mu)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


class TestMajorization:
    def test_scad_at_zero_is_v(self):
        cfg = PenaltyConfig(kind="scad", penalty_weights=np.array([2.0, 0.5]))
        w = majorize_weights(cfg, 1.0, np.zeros(2))
        np.testing.assert_array_equal(w, [2.0, 0.5])

    def test_scad_flat_region_zero(self):
        cfg = PenaltyConfig(kind="scad")
        lam = 0.7
        theta = np.array([10 * cfg.scad_a * lam])
        assert majorize_weights(cfg, lam, theta)[0] == 0.0

    def test_mcp_linear_descent(self):
        cfg = PenaltyConfig(kind="mcp")
        lam = 0.4
        theta = np.array([cfg.mcp_gamma * lam / 2.0])
        assert majorize_weights(cfg, lam, theta)[0] == pytest.approx(0.5)

    def test_l1_passthrough(self):
        cfg = PenaltyConfig(kind="l1", penalty_weights=np.array([1.0, 3.0]))
        np.testing.assert_array_equal(
            majorize_weights(cfg, 0.5, np.array([1.0, -2.0])), [1.0, 3.0])

    def test_invalid_kind(self):
        cfg = PenaltyConfig(kind="l2")
        with pytest.raises(SpecificationError):
            majorize_weights(cfg, 1.0, np.zeros(2))


class TestPenaltyValues:
    def test_scad_continuity(self):
        cfg = PenaltyConfig(kind="scad")
        lam, a = 0.5, cfg.scad_a
        for t in (lam, a * lam):
            below = penalty_term(cfg, lam, np.array([t - 1e-9]))
            above = penalty_term(cfg, lam, np.array([t + 1e-9]))
            assert abs(below - above) < 1e-7

    def test_mcp_saturation(self):
        cfg = PenaltyConfig(kind="mcp")
        lam = 0.3
        cap = 0.5 * cfg.mcp_gamma * lam**2
        assert penalty_term(cfg, lam, np.array([100.0])) == pytest.approx(cap)

    def test_elastic_net_mixture(self):
        cfg = PenaltyConfig(kind="elastic-net", alpha=0.25)
        val = penalty_term(cfg, 2.0, np.array([3.0]))
        assert val == pytest.approx(2.0 * (0.25 * 3.0 + 0.75 * 4.5))

    def test_config_validation(self):
        with pytest.raises(SpecificationError):
            PenaltyConfig(kind="ridge")
        with pytest.raises(SpecificationError):
            PenaltyConfig(kind="scad", scad_a=1.5)
        with pytest.raises(SpecificationError):
            PenaltyConfig(kind="mcp", mcp_gamma=0.5)
        with pytest.raises(SpecificationError):
            PenaltyConfig(lambda_path=[1.0, 2.0])
        with pytest.raises(SpecificationError):
            PenaltyConfig(kind="elastic-net", alpha=1.5)


class TestLambdaMax:
    def test_null_model_threshold(self):
        # brute force on a grid around the candidate: above -> zero solution,
        # below -> nonzero, verified with a dense prox solve on a linear problem
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 6))
        y = rng.normal(size=40)
        g0 = -X.T @ y
        cfg = PenaltyConfig(kind="l1")
        lmax = lambda_max(cfg, g0)
        assert lmax == pytest.approx(np.max(np.abs(X.T @ y)))

        def solve(lam):
            theta = np.zeros(6)
            for _ in range(5000):
                grad = X.T @ (X @ theta - y)
                step = prox_operator(theta, grad, 1e-3, lam * 1e-3, np.ones(6))
                if np.max(np.abs(step - theta)) < 1e-12:
                    break
                theta = step
            return theta

        for factor in (1.0, 1.05, 1.5):
            assert np.all(solve(lmax * factor) == 0.0)
        assert np.any(solve(lmax * 0.95) != 0.0)

    def test_weighted(self):
        cfg = PenaltyConfig(kind="l1", penalty_weights=np.array([1.0, 4.0]))
        assert lambda_max(cfg, np.array([2.0, 4.0])) == pytest.approx(2.0)

    def test_default_path_structure(self):
        cfg = PenaltyConfig(kind="l1", path_length=20)
        path = default_lambda_path(cfg, np.array([3.0, -1.0]))
        assert path.shape == (20,)
        assert path[0] == pytest.approx(3.0)
        assert path[-1] == pytest.approx(3.0 * 1e-4)
        assert np.all(np.diff(path) < 0)

    def test_zero_gradient_path(self):
        cfg = PenaltyConfig(kind="l1")
        np.testing.assert_array_equal(default_lambda_path(cfg, np.zeros(3)), [0.0])


class TestKktResidual:
    def test_zero_at_soft_threshold_solution(self):
        # 1-d lasso: argmin 0.5 (theta - 2)^2 + |theta| is theta = 1
        theta = np.array([1.0])
        grad = np.array([1.0 - 2.0])
        assert kkt_residual(theta, grad, 1.0, np.ones(1)) < 1e-12

    def test_threshold_weights_kinds(self):
        cfg = PenaltyConfig(kind="elastic-net", alpha=0.25)
        np.testing.assert_allclose(threshold_weights(cfg, 1.0, np.zeros(3)), 0.25)
        cfg = PenaltyConfig(kind="none")
        np.testing.assert_array_equal(threshold_weights(cfg, 1.0, np.zeros(3)), 0.0)
