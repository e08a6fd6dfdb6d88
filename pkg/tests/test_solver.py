import numpy as np
import pytest

import gibbsquant as gq
from gibbsquant import LossSpec, SolverConfig
from gibbsquant.solver import batch_weiszfeld

from helpers import grid_minimize_1d, grid_minimize_2d


def spec2(u=(0.0, 0.0), r=2.0):
    return LossSpec(r=r, u=np.asarray(u, dtype=float))


class TestFitQuantile:
    def test_single_point(self):
        est = gq.fit_quantile(spec2(), [[3.0, -1.0]])
        assert np.allclose(est.theta_hat, [3.0, -1.0])
        assert est.converged

    def test_symmetric_cross(self):
        data = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
        est = gq.fit_quantile(spec2(), data)
        assert np.allclose(est.theta_hat, [0.0, 0.0], atol=1e-8)
        assert est.converged

    def test_all_identical_rows(self):
        est = gq.fit_quantile(spec2(), np.tile([2.0, 2.0], (5, 1)))
        assert np.allclose(est.theta_hat, [2.0, 2.0])
        assert est.risk_value == 0.0

    def test_univariate_quantile_reduction_flat_interval(self):
        # u = 2*alpha - 1 with alpha = 0.25 on 1..100: the minimizer set is
        # the whole interval between order statistics 25 and 26
        spec = LossSpec(r=2.0, u=np.array([-0.5]))
        data = np.arange(1.0, 101.0)[:, None]
        est = gq.fit_quantile(spec, data)
        assert est.converged
        assert 25.0 - 1e-9 <= est.theta_hat[0] <= 26.0 + 1e-9
        _, grid_risk = grid_minimize_1d(spec, data, 0.0, 101.0)
        assert est.risk_value <= grid_risk + 1e-9

    @pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.9])
    def test_univariate_quantile_reduction_unique(self, alpha):
        # odd n keeps n*alpha fractional, so the minimizer is a unique data
        # point: the ceil(n*alpha)-th order statistic
        rng = np.random.default_rng(int(alpha * 100))
        for _ in range(25):
            n = int(rng.choice([51, 75, 101]))
            data = rng.normal(size=(n, 1)) * rng.uniform(0.5, 3.0)
            spec = LossSpec(r=2.0, u=np.array([2 * alpha - 1]))
            est = gq.fit_quantile(spec, data)
            target = np.sort(data[:, 0])[int(np.ceil(n * alpha)) - 1]
            assert est.converged
            assert abs(est.theta_hat[0] - target) < 1e-6

    def test_univariate_matches_grid_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = int(rng.choice([51, 101]))
            alpha = rng.choice([0.1, 0.25, 0.5, 0.9])
            data = rng.normal(size=(n, 1)) * 2 + 1
            spec = LossSpec(r=2.0, u=np.array([2 * alpha - 1]))
            est = gq.fit_quantile(spec, data)
            gmin, grisk = grid_minimize_1d(spec, data, data.min() - 1, data.max() + 1)
            assert abs(est.theta_hat[0] - gmin) < 1e-6
            assert est.risk_value <= grisk + 1e-9

    @pytest.mark.parametrize("r", [1.5, 2.0, 3.0])
    def test_gradient_certificate_at_optimum(self, r):
        rng = np.random.default_rng(int(r * 10))
        spec = LossSpec(r=r, u=np.array([0.1, -0.2]))
        data = rng.normal(size=(40, 2))
        cfg = SolverConfig(grad_tol=1e-8)
        est = gq.fit_quantile(spec, data, cfg)
        assert est.converged
        if est.at_data_point is None:
            g = gq.risk_gradient(spec, data, est.theta_hat)
            assert np.linalg.norm(g) <= cfg.grad_tol
        else:
            assert est.grad_norm <= 1e-8

    def test_translation_equivariance(self):
        rng = np.random.default_rng(12)
        cfg = SolverConfig(grad_tol=1e-9)
        for _ in range(20):
            spec = LossSpec(r=float(rng.choice([1.5, 2.0, 3.0])), u=np.array([0.2, 0.1]))
            data = rng.normal(size=(30, 2))
            shift = rng.normal(size=2) * 5
            est0 = gq.fit_quantile(spec, data, cfg)
            est1 = gq.fit_quantile(spec, data + shift, cfg)
            assert np.allclose(est1.theta_hat, est0.theta_hat + shift, atol=2e-6)

    def test_scale_equivariance_for_median(self):
        rng = np.random.default_rng(13)
        cfg = SolverConfig(grad_tol=1e-9)
        for _ in range(20):
            spec = spec2(r=float(rng.choice([1.5, 2.0, 3.0])))
            data = rng.normal(size=(30, 2))
            lam = rng.uniform(0.1, 4.0)
            est0 = gq.fit_quantile(spec, data, cfg)
            est1 = gq.fit_quantile(spec, lam * data, cfg)
            assert np.allclose(est1.theta_hat, lam * est0.theta_hat, atol=2e-6 * max(lam, 1.0))

    def test_risk_history_monotone(self):
        rng = np.random.default_rng(14)
        for r in (1.5, 2.0, 3.0):
            spec = LossSpec(r=r, u=np.array([0.15, 0.25]))
            data = rng.normal(size=(50, 2))
            est = gq.fit_quantile(spec, data, SolverConfig(keep_history=True))
            hist = est.risk_history
            assert hist is not None
            assert np.all(np.diff(hist) <= 1e-10)

    def test_non_convergence_flagged_not_raised(self):
        rng = np.random.default_rng(15)
        data = rng.normal(size=(200, 2))
        est = gq.fit_quantile(spec2(), data, SolverConfig(grad_tol=1e-14, max_iters=3))
        assert not est.converged

    def test_mean_and_user_init(self):
        rng = np.random.default_rng(16)
        data = rng.normal(size=(30, 2))
        a = gq.fit_quantile(spec2(), data, SolverConfig(init="mean"))
        b = gq.fit_quantile(spec2(), data, SolverConfig(init=np.array([5.0, -3.0])))
        assert np.allclose(a.theta_hat, b.theta_hat, atol=1e-6)


class TestWeightedAtoms:
    def test_degenerate_weight_on_one_atom(self):
        est = gq.fit_weighted_atoms(spec2(), [[0.0, 0.0], [2.0, 0.0]], [1.0, 0.0])
        assert np.allclose(est.theta_hat, [0.0, 0.0])
        assert est.converged

    def test_collinear_two_atoms(self):
        est = gq.fit_weighted_atoms(spec2(), [[0.0, 0.0], [2.0, 0.0]], [0.5, 0.5])
        assert est.converged
        assert est.risk_value == pytest.approx(1.0, abs=1e-10)

    def test_matches_grid_search(self):
        rng = np.random.default_rng(17)
        for trial in range(8):
            spec = LossSpec(r=float(rng.choice([2.0, 3.0])), u=np.array([0.1, 0.2]))
            atoms = rng.normal(size=(5, 2)) * 2
            w = rng.dirichlet(np.ones(5))
            est = gq.fit_weighted_atoms(spec, atoms, w)
            gtheta, grisk = grid_minimize_2d(spec, atoms, w, atoms.min(0) - 1, atoms.max(0) + 1)
            assert est.risk_value <= grisk + 1e-7
            assert np.linalg.norm(est.theta_hat - gtheta) < 1e-3

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            gq.fit_weighted_atoms(spec2(), [[0.0, 0.0], [1.0, 1.0]], [0.7, 0.7])


class TestBatchWeiszfeld:
    def test_matches_full_solver(self):
        rng = np.random.default_rng(18)
        spec = LossSpec(r=2.0, u=np.array([0.2, 0.3]))
        stack = rng.normal(size=(6, 50, 2)) + 1.0
        thetas = batch_weiszfeld(spec, stack)
        for b in range(6):
            ref = gq.fit_quantile(spec, stack[b]).theta_hat
            assert np.allclose(thetas[b], ref, atol=1e-6)

    def test_requires_euclidean_norm(self):
        with pytest.raises(ValueError):
            batch_weiszfeld(LossSpec(r=3.0, u=np.zeros(2)), np.zeros((2, 5, 2)))
