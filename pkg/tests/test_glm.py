import itertools

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from crtdr.glm import (
    GlmError,
    RankDeficientError,
    fit_linear,
    fit_logistic,
    score_linear,
    score_logistic,
    stepwise_aic,
)


def _random_linear(seed, n=60, k=4):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    beta = rng.normal(size=k)
    y = X @ beta + rng.normal(size=n)
    return X, y


class TestLinear:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_lstsq(self, seed):
        X, y = _random_linear(seed)
        fit = fit_linear(X, y)
        ref, *_ = np.linalg.lstsq(X, y, rcond=None)
        np.testing.assert_allclose(fit.coefficients, ref, atol=1e-10)

    def test_residual_variance_and_rss(self):
        X, y = _random_linear(1)
        fit = fit_linear(X, y)
        resid = y - X @ fit.coefficients
        assert fit.rss == pytest.approx(resid @ resid)
        assert fit.residual_variance == pytest.approx(fit.rss / (fit.n - fit.k))

    def test_aic_formula(self):
        X, y = _random_linear(2)
        fit = fit_linear(X, y)
        expected = fit.n * np.log(fit.rss / fit.n) + 2 * (fit.k + 1)
        assert fit.aic == pytest.approx(expected)

    def test_rank_deficiency_names_column(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=30)
        X = np.column_stack([np.ones(30), x, 2 * x])
        with pytest.raises(RankDeficientError):
            fit_linear(X, rng.normal(size=30))

    def test_underdetermined_rejected(self):
        with pytest.raises(GlmError, match="rows"):
            fit_linear(np.ones((2, 3)), np.zeros(2))


class TestLogistic:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_likelihood_optimum(self, seed):
        rng = np.random.default_rng(seed)
        n = 200
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        beta = np.array([0.3, -0.8, 0.5])
        r = (rng.random(n) < expit(X @ beta)).astype(float)

        def nll(b):
            lp = X @ b
            return -(r @ lp - np.logaddexp(0.0, lp).sum())

        ref = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
        fit = fit_logistic(X, r)
        assert fit.converged
        np.testing.assert_allclose(fit.coefficients, ref, atol=1e-5)
        assert fit.log_likelihood == pytest.approx(-nll(fit.coefficients))

    def test_aic_formula(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(50), rng.normal(size=50)])
        r = (rng.random(50) < 0.5).astype(float)
        fit = fit_logistic(X, r)
        assert fit.aic == pytest.approx(-2 * fit.log_likelihood + 4)

    def test_separation_flagged(self):
        x = np.concatenate([-np.ones(10), np.ones(10)])
        r = (x > 0).astype(float)
        fit = fit_logistic(np.column_stack([np.ones(20), x]), r, tol=1e-13)
        assert fit.separation

    def test_single_class_rejected(self):
        with pytest.raises(GlmError, match="both classes"):
            fit_logistic(np.ones((5, 1)), np.ones(5))

    def test_score_zero_at_optimum(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([np.ones(80), rng.normal(size=80)])
        r = (rng.random(80) < 0.4).astype(float)
        fit = fit_logistic(X, r)
        score = X.T @ (r - fit.predict_proba(X))
        assert np.max(np.abs(score)) < 1e-6


class TestClusterScores:
    def test_logistic_scores_aggregate_by_cluster(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(9), rng.normal(size=9)])
        r = (rng.random(9) < 0.5).astype(float)
        eta = np.array([0.1, -0.2])
        idx = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2])
        out = score_logistic(X, r, eta, idx)
        resid = r - expit(X @ eta)
        for i in range(3):
            np.testing.assert_allclose(out[i], X[idx == i].T @ resid[idx == i])

    def test_linear_scores_aggregate_by_cluster(self):
        rng = np.random.default_rng(6)
        X = np.column_stack([np.ones(7), rng.normal(size=7)])
        y = rng.normal(size=7)
        eta = np.array([0.5, 1.0])
        idx = np.array([0, 1, 1, 1, 2, 2, 0])
        out = score_linear(X, y, eta, 2.0, idx)
        resid = (y - X @ eta) / 2.0
        for i in range(3):
            np.testing.assert_allclose(out[i], X[idx == i].T @ resid[idx == i])


class TestStepwise:
    def _exhaustive_best(self, candidates, y, family):
        names = list(candidates)
        best = (np.inf, ())
        n = len(y)
        for rsize in range(len(names) + 1):
            for sub in itertools.combinations(names, rsize):
                X = np.column_stack([np.ones(n)] + [candidates[s] for s in sub])
                if family == "linear":
                    aic = fit_linear(X, y).aic
                else:
                    aic = fit_logistic(X, y).aic
                if aic < best[0] - 1e-10:
                    best = (aic, sub)
        return best

    def test_linear_selection_matches_exhaustive_optimum(self):
        rng = np.random.default_rng(10)
        n = 300
        cand = {f"x{i}": rng.normal(size=n) for i in range(4)}
        y = 2.0 * cand["x0"] - 1.5 * cand["x2"] + rng.normal(size=n)
        res = stepwise_aic(cand, y, family="linear")
        best_aic, best_set = self._exhaustive_best(cand, y, "linear")
        assert set(res.selected) == set(best_set)
        assert res.aic == pytest.approx(best_aic)

    def test_logistic_selection_matches_exhaustive_optimum(self):
        rng = np.random.default_rng(11)
        n = 400
        cand = {f"x{i}": rng.normal(size=n) for i in range(3)}
        lp = 1.2 * cand["x1"]
        r = (rng.random(n) < expit(lp)).astype(float)
        res = stepwise_aic(cand, r, family="logistic")
        best_aic, best_set = self._exhaustive_best(cand, r, "logistic")
        assert set(res.selected) == set(best_set)
        assert res.aic == pytest.approx(best_aic, rel=1e-8)

    def test_backward_pass_prunes_redundant_term(self):
        # x_sum enters first (it alone explains most of y) but becomes
        # redundant once x0 and x1 are both in; only the pruning pass can
        # remove it again.
        rng = np.random.default_rng(12)
        n = 500
        x0 = rng.normal(size=n)
        x1 = rng.normal(size=n)
        cand = {"x0": x0, "x1": x1, "x_sum": x0 + x1 + 0.5 * rng.normal(size=n)}
        y = x0 + x1 + 0.1 * rng.normal(size=n)
        both = stepwise_aic(cand, y, family="linear")
        forward = stepwise_aic(cand, y, family="linear", forward_only=True)
        best_aic, best_set = self._exhaustive_best(cand, y, "linear")
        assert set(both.selected) == set(best_set) == {"x0", "x1"}
        assert both.aic == pytest.approx(best_aic)
        assert "x_sum" in forward.selected
        assert forward.aic > both.aic

    def test_failing_candidate_skipped_with_warning(self):
        rng = np.random.default_rng(14)
        n = 100
        cand = {"const": np.ones(n), "x0": rng.normal(size=n)}
        y = 3.0 * cand["x0"] + rng.normal(size=n)
        res = stepwise_aic(cand, y, family="linear")
        assert res.selected == ("x0",)
        assert any("skipped" in w for w in res.warnings)

    def test_pure_noise_selects_nothing(self):
        rng = np.random.default_rng(15)
        n = 500
        cand = {"x0": rng.normal(size=n)}
        y = rng.normal(size=n)
        res = stepwise_aic(cand, y, family="linear")
        best_aic, best_set = self._exhaustive_best(cand, y, "linear")
        assert set(res.selected) == set(best_set)
