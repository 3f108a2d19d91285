"""Gaussian posterior approximation and bootstrap percentile intervals."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bayesdwd import (
    Dataset,
    IntervalTable,
    LaplaceApprox,
    MethodConfig,
    ModelState,
    ResourceBudgetError,
    ScenarioSpec,
    bootstrap_intervals,
    laplace_curvature,
    laplace_fit,
    laplace_intervals,
    objective_grad,
    run_scenario,
    scores,
    solve_mode,
)
from oracles import fd_hessian_from_gradient


def smooth_instance(seed, d=3, n=25, lam=1.0):
    """Random labeled problem whose modal scores stay away from the knot."""
    rng = np.random.default_rng(seed)
    while True:
        X = rng.standard_normal((d, n))
        y = rng.choice([-1.0, 1.0], size=n)
        if abs(y.sum()) == n:
            continue
        data = Dataset(X, y, P1=0.5)
        mode = solve_mode(data, lam)
        if np.min(np.abs(scores(mode, data).signed - 0.5)) >= 0.05:
            return data, mode


class TestIntervalTable:
    def test_validation(self):
        with pytest.raises(ValueError):
            IntervalTable(("a",), np.zeros(2), np.zeros(2), np.zeros(2), "clt")
        with pytest.raises(ValueError):
            IntervalTable(("a",), np.zeros(1), np.ones(1), np.zeros(1), "clt")

    def test_covers_closed_endpoints(self):
        t = IntervalTable(
            ("a", "b", "c"),
            np.zeros(3),
            np.array([0.0, 0.0, 0.0]),
            np.array([1.0, 1.0, 1.0]),
            "clt",
        )
        hits = t.covers(np.array([0.0, 1.0, 1.0001]))
        assert hits.tolist() == [True, True, False]

    def test_select_prefix(self):
        t = IntervalTable(
            ("beta_1", "beta0", "score_1"),
            np.arange(3.0),
            np.arange(3.0),
            np.arange(3.0),
            "boot",
        )
        sub = t.select("beta_")
        assert sub.params == ("beta_1",)
        assert sub.estimate[0] == 0.0


class TestLaplaceApproxValidation:
    def test_asymmetric_cov_rejected(self):
        mode = ModelState(np.zeros(2), 0.0, 1.0)
        cov = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(ValueError):
            LaplaceApprox(mode, cov, np.array([], dtype=int))

    def test_nonpositive_diagonal_rejected(self):
        mode = ModelState(np.zeros(2), 0.0, 1.0)
        cov = np.diag([1.0, 0.0])
        with pytest.raises(ValueError):
            LaplaceApprox(mode, cov, np.array([], dtype=int))


class TestCurvature:
    def test_empty_active_set_gives_prior_curvature(self):
        # all signed scores at the linear branch: only the penalty curves
        data = Dataset(np.ones((2, 4)), np.array([1.0, 1.0, -1.0, -1.0]), P1=0.5)
        state = ModelState(np.zeros(2), 0.0, 2.0)
        H, active = laplace_curvature(data, state)
        assert active.size == 0
        assert_allclose(H, 4 * 2.0 * np.eye(2), rtol=0.0, atol=0.0)

    def test_single_active_sample_pinned(self):
        # one sample at signed score 1: H = n*lam + x^2 / 2
        data = Dataset(np.array([[1.0]]), np.array([1.0]), P1=0.5)
        state = ModelState(np.array([1.0]), 0.0, 1.0)
        H, active = laplace_curvature(data, state)
        assert active.tolist() == [0]
        assert_allclose(H, [[1.0 + 0.5]], rtol=1e-15)

    def test_knot_sample_excluded(self):
        # signed score exactly at the knot contributes no curvature
        data = Dataset(np.array([[1.0]]), np.array([1.0]), P1=0.5)
        state = ModelState(np.array([0.5]), 0.0, 1.0)
        _, active = laplace_curvature(data, state)
        assert active.size == 0

    def test_matches_fd_hessian_of_objective(self):
        for seed in range(4):
            data, mode = smooth_instance(seed)
            H, _ = laplace_curvature(data, mode)

            def grad(b):
                return objective_grad(ModelState(b, mode.beta0, mode.lam), data)[0]

            H_fd = data.n * fd_hessian_from_gradient(grad, mode.beta)
            assert_allclose(H, H_fd, rtol=1e-5, atol=1e-7)

    def test_requires_labels_and_positive_lambda(self):
        y = np.array([1.0, np.nan])
        data = Dataset(np.zeros((1, 2)), y, P1=0.5)
        with pytest.raises(ValueError):
            laplace_curvature(data, ModelState(np.zeros(1), 0.0, 1.0))
        full = Dataset(np.zeros((1, 2)), np.array([1.0, -1.0]), P1=0.5)
        with pytest.raises(ValueError):
            laplace_curvature(full, ModelState(np.zeros(1), 0.0, 0.0))


class TestLaplaceFit:
    def test_covariance_shrinks_with_lambda(self):
        data, _ = smooth_instance(10)
        v_small = np.diag(laplace_fit(data, 0.5).cov_beta)
        v_large = np.diag(laplace_fit(data, 5.0).cov_beta)
        assert np.all(v_large < v_small)

    def test_extended_keeps_coefficient_covariance(self):
        data, _ = smooth_instance(11)
        plain = laplace_fit(data, 1.0)
        ext = laplace_fit(data, 1.0, extended=True)
        assert plain.var_beta0 is None
        assert ext.var_beta0 is not None and ext.var_beta0 > 0.0
        assert_allclose(ext.cov_beta, plain.cov_beta, rtol=0.0, atol=0.0)
        assert_allclose(ext.mode.beta, plain.mode.beta, rtol=0.0, atol=0.0)

    def test_deterministic(self):
        data, _ = smooth_instance(12)
        a = laplace_fit(data, 1.0)
        b = laplace_fit(data, 1.0)
        assert np.array_equal(a.cov_beta, b.cov_beta)
        assert np.array_equal(a.active_set, b.active_set)

    def test_fixed_intercept(self):
        data, _ = smooth_instance(13)
        approx = laplace_fit(data, 1.0, fixed_beta0=0.0)
        assert approx.mode.beta0 == 0.0
        assert approx.var_beta0 is None
        with pytest.raises(ValueError, match="fixed intercept"):
            laplace_fit(data, 1.0, extended=True, fixed_beta0=0.0)


class TestLaplaceIntervals:
    def unit_approx(self, d=2, beta0=0.0, var_beta0=None):
        mode = ModelState(np.zeros(d), beta0, 1.0)
        return LaplaceApprox(mode, np.eye(d), np.array([], dtype=int), var_beta0)

    def test_standard_normal_quantile_pinned(self):
        t = laplace_intervals(self.unit_approx(), level=0.95)
        assert t.params == ("beta_1", "beta_2")
        assert_allclose(t.upper, [1.959964, 1.959964], atol=1e-5)
        assert_allclose(t.lower, -t.upper, rtol=1e-15)
        assert t.method == "clt"

    def test_intercept_row_only_when_extended(self):
        t = laplace_intervals(self.unit_approx(var_beta0=4.0), level=0.95)
        assert "beta0" in t.params
        i = t.params.index("beta0")
        # sd = 2, so the half-width doubles the coefficient half-width
        assert t.upper[i] == pytest.approx(2 * 1.959964, abs=1e-4)

    def test_score_rows_shift_by_intercept(self):
        mode = ModelState(np.array([1.0, -1.0]), 0.7, 1.0)
        approx = LaplaceApprox(mode, np.diag([1.0, 4.0]), np.array([], dtype=int))
        newX = np.eye(2)
        t = laplace_intervals(approx, level=0.95, newX=newX)
        s = t.select("score_")
        assert_allclose(s.estimate, [1.0 + 0.7, -1.0 + 0.7], rtol=1e-15)
        # score variance along e_j is cov[j, j]
        assert_allclose(s.width, [2 * 1.959964 * 1.0, 2 * 1.959964 * 2.0], atol=1e-4)

    def test_level_validation(self):
        with pytest.raises(ValueError):
            laplace_intervals(self.unit_approx(), level=0.0)

    def test_newx_shape_checked(self):
        with pytest.raises(ValueError):
            laplace_intervals(self.unit_approx(), newX=np.zeros((3, 2)))


class TestBootstrap:
    def test_two_point_distinct_classes_zero_width(self):
        # any two-class resample of two distinct one-per-class samples is
        # the original dataset, so every refit agrees with the full fit
        data = Dataset(np.array([[-1.0, 1.0]]), np.array([-1.0, 1.0]), P1=0.5)
        res = bootstrap_intervals(data, 1.0, B=2, seed=0)
        b = res.intervals.select("beta_")
        assert_allclose(b.width, [0.0], atol=1e-9)
        assert res.replicates.shape == (2, 2)

    def test_deterministic_in_seed(self):
        rng = np.random.default_rng(20)
        data = Dataset(rng.standard_normal((2, 12)),
                       np.array([1.0, -1.0] * 6), P1=0.5)
        a = bootstrap_intervals(data, 1.0, B=8, seed=5)
        b = bootstrap_intervals(data, 1.0, B=8, seed=5)
        assert np.array_equal(a.replicates, b.replicates)
        assert a.n_redraws == b.n_redraws

    def test_fixed_intercept_degenerate_row(self):
        rng = np.random.default_rng(23)
        data = Dataset(rng.standard_normal((2, 14)),
                       np.array([1.0, -1.0] * 7), P1=0.5)
        res = bootstrap_intervals(data, 1.0, B=10, seed=2, fixed_beta0=-0.4)
        assert np.all(res.replicates[:, 2] == -0.4)
        row = res.intervals.select("beta0")
        assert row.estimate[0] == -0.4
        assert_allclose(row.width, [0.0], atol=0.0)

    def test_unbalanced_labels_trigger_redraws(self):
        # 19:1 labels: a resample misses the singleton with prob ~0.36
        rng = np.random.default_rng(21)
        y = np.ones(20)
        y[0] = -1.0
        data = Dataset(rng.standard_normal((2, 20)), y, P1=0.5)
        res = bootstrap_intervals(data, 1.0, B=40, seed=0)
        assert res.n_redraws > 0
        assert np.all(np.isfinite(res.replicates))

    def test_redraw_budget_exhaustion(self, monkeypatch):
        # force every resample to a single class: the redraw cap must trip
        class AlwaysFirst:
            def integers(self, lo, hi, size):
                return np.zeros(size, dtype=int)

        import bayesdwd.laplace as lap

        monkeypatch.setattr(lap, "substream", lambda *a: AlwaysFirst())
        data = Dataset(np.array([[-1.0, 1.0]]), np.array([-1.0, 1.0]), P1=0.5)
        with pytest.raises(ResourceBudgetError):
            bootstrap_intervals(data, 1.0, B=2, seed=0)

    def test_interval_table_layout(self):
        rng = np.random.default_rng(22)
        data = Dataset(rng.standard_normal((3, 10)),
                       np.array([1.0, -1.0] * 5), P1=0.5)
        res = bootstrap_intervals(data, 1.0, B=6, seed=1)
        t = res.intervals
        assert t.method == "boot"
        assert t.params[:4] == ("beta_1", "beta_2", "beta_3", "beta0")
        assert len(t) == 3 + 1 + 10
        assert len(t.select("score_")) == 10

    def test_b_validation(self):
        data = Dataset(np.array([[-1.0, 1.0]]), np.array([-1.0, 1.0]), P1=0.5)
        with pytest.raises(ValueError):
            bootstrap_intervals(data, 1.0, B=1)


class TestCltCoverage:
    @pytest.mark.slow
    def test_uniform_scenario_coverage_in_band(self):
        # strong-penalty regime where the Gaussian approximation is honest
        spec = ScenarioSpec(
            kind="assumed-uniform",
            d=20,
            n=100,
            lambda_true=10.0,
            replications=100,
            seed=0,
        )
        method = MethodConfig(mcmc=False, clt=True, boot=False, fixed_lambda=10.0)
        report = run_scenario(spec, method)
        cov = np.mean([r.coverage_clt_beta for r in report.records])
        assert 0.91 <= cov <= 0.99
