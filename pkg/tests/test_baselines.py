import numpy as np
import pytest

from qdlag import (
    AdmmConfig,
    EnConfig,
    en_objective,
    fit_en,
    fit_ridge,
    linear_predictor,
)
from qdlag.admm import AugmentedProblem, _admm_loop
from qdlag.core import as_quantile, check_loss
from conftest import make_data


def cvxpy_ridge_quantile(data, tau, lam):
    """Independent ridge-quantile solver (interior point via cvxpy)."""
    import cvxpy as cp

    n, K, T, p = data.n, data.K, data.T, data.p
    b = cp.Variable(K * T)
    g = cp.Variable(p)
    resid = data.response - data.design() @ b - data.covariates @ g
    loss = cp.sum(0.5 * cp.abs(resid) + (tau - 0.5) * resid) / n
    prob = cp.Problem(cp.Minimize(loss + 0.5 * lam * cp.sum_squares(b)))
    prob.solve(solver=cp.CLARABEL)
    return np.asarray(b.value).reshape(K, T), np.asarray(g.value).ravel()


class TestEnConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EnConfig(-1.0, 0.5)
        with pytest.raises(ValueError):
            EnConfig(1.0, 1.5)
        EnConfig(0.0, 0.0)


class TestFitEn:
    def test_lambda_zero_quantile_balance(self):
        n, K, T, p = 200, 2, 6, 2
        data = make_data(n, K, T, p, seed=3, noise=1.5)
        for tau in (0.25, 0.5):
            res = fit_en(
                data, tau,
                EnConfig(0.0, 0.5, AdmmConfig(rho=3 / n, eps1=1e-7, eps2=1e-7,
                                              max_iter=100_000)),
            )
            assert res.converged
            e = data.response - linear_predictor(data, res.beta, res.gamma)
            assert abs(np.mean(e < 0) - tau) <= (p + K * T) / n + 1e-6

    def test_huge_lambda_alpha_one_kills_beta(self):
        data = make_data(50, 2, 5, 1, seed=4)
        res = fit_en(data, 0.25, EnConfig(1e4, 1.0, AdmmConfig(rho=0.06)))
        assert np.array_equal(res.beta, np.zeros_like(res.beta))

    def test_alpha_zero_matches_cvxpy_ridge(self):
        data = make_data(60, 2, 5, 2, seed=5, noise=1.0)
        tau, lam = 0.25, 0.3
        res = fit_en(
            data, tau,
            EnConfig(lam, 0.0, AdmmConfig(rho=0.05, eps1=1e-8, eps2=1e-8,
                                          max_iter=200_000)),
        )
        assert res.converged
        beta_cvx, gamma_cvx = cvxpy_ridge_quantile(data, tau, lam)
        ours = en_objective(data, res.beta, res.gamma, tau, lam, 0.0)
        theirs = en_objective(data, beta_cvx, gamma_cvx, tau, lam, 0.0)
        assert ours <= theirs + 1e-6
        assert np.max(np.abs(res.beta - beta_cvx)) < 1e-4

    def test_alpha_zero_matches_identity_augmented_route(self):
        # second route: the main solver loop with identity smoothing rows and
        # no nonsmooth part must solve the same ridge problem
        data = make_data(40, 1, 5, 1, seed=6)
        tau, lam = 0.3, 0.4
        admm = AdmmConfig(rho=0.08, eps1=1e-8, eps2=1e-8, max_iter=200_000)
        res = fit_en(data, tau, EnConfig(lam, 0.0, admm))
        problem = AugmentedProblem(data, 0.5 * lam, admm.rho, "identity")
        tauq = as_quantile(tau)

        def obj(B, gamma, fitted):
            return float(check_loss(data.response - fitted, tauq).mean()) + 0.5 * lam * float(B @ B)

        state, _, ok = _admm_loop(problem, tauq, 0.0, "none", None, admm, None, obj)
        assert ok
        assert np.max(np.abs(res.beta - state.beta)) < 1e-6

    def test_objective_descent(self):
        data = make_data(50, 2, 6, 1, seed=7)
        res = fit_en(data, 0.25, EnConfig(0.5, 0.5, AdmmConfig(rho=0.06)))
        tr = res.trace.objective
        # majorized updates: merit decreases within every iteration
        slack = 1e-9 * (1 + np.abs(res.trace.merit_before))
        assert np.all(res.trace.merit_after <= res.trace.merit_before + slack)
        # and the objective settles near its running minimum (ADMM itself is
        # not objective-monotone; closeness is at the stopping-tolerance scale)
        assert tr[-1] <= tr.min() + 1e-4 * (1 + abs(tr.min()))

    def test_kkt_sign_condition_alpha_one(self):
        # at convergence no coefficient opposes its soft-threshold input
        data = make_data(60, 2, 5, 1, seed=8)
        res = fit_en(
            data, 0.25,
            EnConfig(0.05, 1.0, AdmmConfig(rho=0.05, eps1=1e-7, eps2=1e-7,
                                           max_iter=100_000)),
        )
        assert res.converged
        s = res.state.prox_input
        b = res.beta.reshape(-1)
        nz = np.abs(b) > 1e-10
        assert np.all(np.sign(b[nz]) == np.sign(s[nz]))

    def test_objective_field(self):
        data = make_data(30, 1, 5, 1, seed=9)
        res = fit_en(data, 0.4, EnConfig(0.3, 0.5, AdmmConfig(rho=0.1)))
        assert res.objective == pytest.approx(
            en_objective(data, res.beta, res.gamma, 0.4, 0.3, 0.5), abs=1e-12
        )
        assert res.kind == "en"


class TestFitRidge:
    def test_delegates_to_en(self):
        data = make_data(40, 1, 5, 1, seed=10)
        admm = AdmmConfig(rho=0.08)
        a = fit_ridge(data, 0.25, 0.5, admm)
        b = fit_en(data, 0.25, EnConfig(0.5, 0.0, admm))
        assert np.array_equal(a.beta, b.beta)
        assert a.kind == "ridge"

    def test_lambda_infinity_shrinks_to_zero(self):
        data = make_data(40, 1, 5, 1, seed=11)
        res = fit_ridge(data, 0.25, 1e8, AdmmConfig(rho=0.08))
        assert np.max(np.abs(res.beta)) < 1e-4

    def test_lambda_zero_equals_en_lambda_zero(self):
        data = make_data(40, 1, 5, 1, seed=12)
        admm = AdmmConfig(rho=0.08)
        a = fit_ridge(data, 0.25, 0.0, admm)
        b = fit_en(data, 0.25, EnConfig(0.0, 1.0, admm))
        assert np.allclose(a.beta, b.beta)

    def test_duplicated_exposures_split_symmetrically(self):
        # ridge symmetry: identical exposure rows share the coefficient
        rng = np.random.default_rng(13)
        n, T = 80, 5
        x1 = rng.standard_normal((n, 1, T))
        X = np.concatenate([x1, x1], axis=1)
        z = np.ones((n, 1))
        beta = rng.standard_normal(T)
        y = 2 * (x1[:, 0, :] @ beta) + 0.5 * rng.standard_normal(n)
        from qdlag import RegressionData

        data = RegressionData(X, z, y)
        res = fit_ridge(
            data, 0.5, 0.4,
            AdmmConfig(rho=3 / n, eps1=1e-8, eps2=1e-8, max_iter=300_000),
        )
        assert res.converged
        assert np.max(np.abs(res.beta[0] - res.beta[1])) < 1e-5
