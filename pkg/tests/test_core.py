"""Loss, objective, scores, and the mode solver."""

from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bayesdwd import (
    ConvergenceError,
    Dataset,
    ModelState,
    dwd_loss,
    dwd_loss_grad,
    objective,
    objective_grad,
    scores,
    solve_mode,
)
from oracles import (
    fd_gradient,
    grid_minimize_objective,
    loss_ref,
    objective_ref,
)


def random_labeled(rng, d, n):
    X = rng.standard_normal((d, n))
    y = rng.choice([-1.0, 1.0], size=n)
    while abs(y.sum()) == n:  # keep both classes present
        y = rng.choice([-1.0, 1.0], size=n)
    return Dataset(X, y, P1=0.5)


class TestDwdLoss:
    def test_pinned_values(self):
        assert dwd_loss(0.0) == 1.0
        assert dwd_loss(0.5) == 0.5
        assert dwd_loss(-1.0) == 2.0
        assert dwd_loss(2.0) == 0.125

    def test_positive_everywhere(self):
        u = np.linspace(-50.0, 50.0, 20001)
        assert np.all(dwd_loss(u) > 0.0)

    def test_knot_continuity(self):
        eps = 1e-12
        assert abs(dwd_loss(0.5 - eps) - dwd_loss(0.5 + eps)) < 1e-11
        assert abs(dwd_loss_grad(0.5 - eps) - dwd_loss_grad(0.5 + eps)) < 1e-11
        # both one-sided derivatives at the knot equal -1
        assert dwd_loss_grad(0.5) == -1.0

    def test_convexity_random_triples(self):
        rng = np.random.default_rng(101)
        for _ in range(500):
            u1, u2 = rng.uniform(-10.0, 10.0, size=2)
            t = rng.uniform()
            lhs = dwd_loss(t * u1 + (1.0 - t) * u2)
            rhs = t * dwd_loss(u1) + (1.0 - t) * dwd_loss(u2)
            assert lhs <= rhs + 1e-12

    def test_matches_reference(self):
        rng = np.random.default_rng(7)
        for u in rng.uniform(-5.0, 5.0, size=200):
            assert_allclose(dwd_loss(u), loss_ref(u), rtol=0.0, atol=0.0)

    def test_grad_pinned_values(self):
        assert dwd_loss_grad(0.5) == -1.0
        assert dwd_loss_grad(1.0) == -0.25
        assert dwd_loss_grad(-3.0) == -1.0

    def test_grad_matches_fd_away_from_knot(self):
        rng = np.random.default_rng(8)
        h = 1e-7
        checked = 0
        while checked < 100:
            u = rng.uniform(-4.0, 4.0)
            if abs(u - 0.5) < 1e-3:
                continue
            fd = (dwd_loss(u + h) - dwd_loss(u - h)) / (2.0 * h)
            assert_allclose(dwd_loss_grad(u), fd, rtol=1e-6)
            checked += 1

    def test_nonfinite_rejected(self):
        for bad in (np.nan, np.inf, -np.inf):
            with pytest.raises(ValueError):
                dwd_loss(bad)
            with pytest.raises(ValueError):
                dwd_loss_grad(bad)
        with pytest.raises(ValueError):
            dwd_loss(np.array([0.0, np.nan]))


class TestDataset:
    def test_basic_fields(self):
        X = np.zeros((2, 4))
        y = np.array([1.0, -1.0, np.nan, 1.0])
        data = Dataset(X, y, P1=0.3)
        assert data.d == 2 and data.n == 4
        assert data.n_labeled == 3
        assert not data.is_fully_labeled
        assert list(data.labeled_mask) == [True, True, False, True]
        sub = data.labeled_subset()
        assert sub.n == 3 and sub.is_fully_labeled

    def test_validation(self):
        X = np.zeros((2, 3))
        with pytest.raises(ValueError):
            Dataset(X, np.array([1.0, 2.0, -1.0]), P1=0.5)  # bad label value
        with pytest.raises(ValueError):
            Dataset(X, np.array([1.0, -1.0]), P1=0.5)  # length mismatch
        for bad_p1 in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                Dataset(X, np.array([1.0, -1.0, 1.0]), P1=bad_p1)


class TestObjective:
    def test_zero_state_gives_one(self):
        rng = np.random.default_rng(0)
        data = random_labeled(rng, 3, 7)
        st = ModelState(np.zeros(3), 0.0, 4.2)
        assert objective(st, data) == 1.0

    def test_single_point_pinned(self):
        data = Dataset(np.array([[1.0]]), np.array([1.0]), P1=0.5)
        st = ModelState(np.array([1.0]), 0.0, 2.0)
        # V(1) + (2/2)*1 = 0.25 + 1
        assert_allclose(objective(st, data), 1.25, rtol=0.0, atol=0.0)

    def test_matches_extended_precision_reference(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            data = random_labeled(rng, 3, 5)
            st = ModelState(rng.standard_normal(3), float(rng.standard_normal()), 0.7)
            ref = objective_ref(st.beta, st.beta0, st.lam, data.X, data.y)
            assert_allclose(objective(st, data), ref, rtol=1e-14)

    def test_unlabeled_rejected(self):
        data = Dataset(np.zeros((1, 2)), np.array([1.0, np.nan]), P1=0.5)
        st = ModelState(np.zeros(1), 0.0, 1.0)
        with pytest.raises(ValueError):
            objective(st, data)
        with pytest.raises(ValueError):
            objective_grad(st, data)


class TestObjectiveGrad:
    def test_zero_state_closed_form(self):
        rng = np.random.default_rng(3)
        data = random_labeled(rng, 4, 9)
        st = ModelState(np.zeros(4), 0.0, 1.3)
        g_beta, g_beta0 = objective_grad(st, data)
        # every score is 0: linear branch, V' = -1
        expected = -(data.X * data.y).mean(axis=1) + st.lam * st.beta
        assert_allclose(g_beta, expected, rtol=1e-14)
        assert_allclose(g_beta0, -float(data.y.mean()), rtol=1e-14)

    def test_balanced_labels_zero_intercept_grad(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((2, 6))
        y = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
        st = ModelState(np.zeros(2), 0.0, 1.0)
        _, g_beta0 = objective_grad(st, Dataset(X, y, P1=0.5))
        assert abs(g_beta0) <= 1e-15  # signs cancel up to summation rounding

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 100:
            data = random_labeled(rng, 3, 8)
            st = ModelState(rng.standard_normal(3), float(rng.standard_normal()), 0.5)
            signed = scores(st, data).signed
            if np.min(np.abs(signed - 0.5)) < 1e-3:
                continue

            def f(z):
                return objective(ModelState(z[:-1], float(z[-1]), st.lam), data)

            z0 = np.append(st.beta, st.beta0)
            fd = fd_gradient(f, z0, h=1e-6)
            g_beta, g_beta0 = objective_grad(st, data)
            assert_allclose(np.append(g_beta, g_beta0), fd, rtol=1e-6, atol=1e-10)
            checked += 1


class TestScores:
    def test_zero_beta(self):
        rng = np.random.default_rng(1)
        data = random_labeled(rng, 3, 5)
        st = ModelState(np.zeros(3), 1.7, 1.0)
        assert_allclose(scores(st, data).u, np.full(5, 1.7), rtol=0.0, atol=0.0)

    def test_identity_design(self):
        beta = np.array([0.3, -1.2, 0.8])
        data = Dataset(np.eye(3), np.array([1.0, -1.0, 1.0]), P1=0.5)
        st = ModelState(beta, 0.25, 1.0)
        assert_allclose(scores(st, data).u, beta + 0.25, rtol=1e-15)

    def test_signed_scores(self):
        rng = np.random.default_rng(2)
        data = random_labeled(rng, 2, 6)
        st = ModelState(rng.standard_normal(2), 0.1, 1.0)
        s = scores(st, data)
        assert_allclose(s.signed, data.y * s.u, rtol=0.0, atol=0.0)

    def test_matches_longdouble_reference(self):
        rng = np.random.default_rng(9)
        data = random_labeled(rng, 4, 7)
        st = ModelState(rng.standard_normal(4), float(rng.standard_normal()), 1.0)
        ref = [
            float(
                sum(
                    np.longdouble(data.X[j, i]) * np.longdouble(st.beta[j])
                    for j in range(4)
                )
                + np.longdouble(st.beta0)
            )
            for i in range(7)
        ]
        assert_allclose(scores(st, data).u, ref, rtol=1e-14)

    def test_dimension_mismatch(self):
        data = Dataset(np.zeros((2, 3)), np.array([1.0, -1.0, 1.0]), P1=0.5)
        st = ModelState(np.zeros(3), 0.0, 1.0)
        with pytest.raises(ValueError):
            scores(st, data)


class TestSolveMode:
    def test_symmetric_two_point(self):
        data = Dataset(np.array([[-1.0, 1.0]]), np.array([-1.0, 1.0]), P1=0.5)
        st = solve_mode(data, 1.0)
        assert st.beta[0] > 0.0
        assert abs(st.beta0) < 1e-6

    def test_huge_penalty_shrinks_to_zero(self):
        rng = np.random.default_rng(21)
        data = random_labeled(rng, 3, 12)
        st = solve_mode(data, 1e6)
        assert np.linalg.norm(st.beta) < 1e-5

    def test_single_class_rejected(self):
        data = Dataset(np.ones((1, 3)), np.ones(3), P1=0.5)
        with pytest.raises(ValueError):
            solve_mode(data, 1.0)

    def test_lambda_zero_rules(self):
        rng = np.random.default_rng(22)
        wide = random_labeled(rng, 5, 4)  # d >= n
        with pytest.raises(ValueError):
            solve_mode(wide, 0.0)
        tall = random_labeled(rng, 2, 30)  # full-rank tall design
        st = solve_mode(tall, 0.0)
        assert np.all(np.isfinite(st.beta))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(23)
        data = random_labeled(rng, 3, 15)
        perm = rng.permutation(15)
        permuted = Dataset(data.X[:, perm], data.y[perm], P1=0.5)
        a = objective(solve_mode(data, 0.5), data)
        b = objective(solve_mode(permuted, 0.5), permuted)
        assert abs(a - b) < 1e-8

    def test_monotone_shrinkage(self):
        rng = np.random.default_rng(24)
        for _ in range(10):
            data = random_labeled(rng, 3, 20)
            lams = [0.05, 0.2, 1.0, 5.0, 25.0]
            norms = [float(np.linalg.norm(solve_mode(data, lam).beta)) for lam in lams]
            for small, large in zip(norms, norms[1:]):
                assert small >= large - 1e-9

    def test_convergence_error_carries_best_iterate(self):
        rng = np.random.default_rng(25)
        data = random_labeled(rng, 3, 20)
        with pytest.raises(ConvergenceError) as info:
            solve_mode(data, 1.0, max_iter=1)
        best = info.value.best
        assert best is not None
        assert np.isfinite(objective(best, data))

    def test_warm_start_accepted(self):
        rng = np.random.default_rng(26)
        data = random_labeled(rng, 3, 20)
        st = solve_mode(data, 1.0)
        again = solve_mode(data, 1.0, init=st)
        assert_allclose(objective(again, data), objective(st, data), rtol=0.0, atol=1e-12)

    def test_fixed_intercept_pins_value(self):
        rng = np.random.default_rng(27)
        data = random_labeled(rng, 3, 20)
        free = solve_mode(data, 1.0)
        for b0 in (-0.7, 0.0, free.beta0):
            st = solve_mode(data, 1.0, fixed_beta0=b0)
            assert st.beta0 == b0
            # Constrained optimum can't beat the free one, and pinning at
            # the free optimum's intercept must reproduce its value.
            assert objective(st, data) >= objective(free, data) - 1e-12
        pinned = solve_mode(data, 1.0, fixed_beta0=free.beta0)
        assert_allclose(
            objective(pinned, data), objective(free, data), rtol=0.0, atol=1e-9
        )

    def test_fixed_intercept_beats_coordinate_perturbations(self):
        rng = np.random.default_rng(28)
        data = random_labeled(rng, 2, 16)
        st = solve_mode(data, 0.5, fixed_beta0=0.3)
        f = objective(st, data)
        for _ in range(60):
            wobble = st.beta + 1e-3 * rng.standard_normal(2)
            f_w = objective(ModelState(wobble, 0.3, 0.5), data)
            assert f_w >= f - 1e-12

    def test_fixed_intercept_warm_start_and_validation(self):
        rng = np.random.default_rng(29)
        data = random_labeled(rng, 3, 18)
        st = solve_mode(data, 1.0, fixed_beta0=0.1)
        again = solve_mode(data, 1.0, fixed_beta0=0.1, init=st)
        assert_allclose(again.beta, st.beta, rtol=0.0, atol=1e-10)
        with pytest.raises(ValueError, match="finite"):
            solve_mode(data, 1.0, fixed_beta0=float("nan"))


class TestSolveModeAgainstGridOracle:
    def test_refinement_oracle_small_batch(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            data = random_labeled(rng, 2, 10)
            for lam in (0.1, 1.0, 10.0):
                oracle_val, _ = grid_minimize_objective(data.X, data.y, lam)
                got = objective(solve_mode(data, lam), data)
                assert got <= oracle_val + 1e-6

    @pytest.mark.slow
    def test_dense_grid_then_refine(self):
        # One instance against a dense lattice on [-3, 3]^3 at step 0.01,
        # followed by local refinement around its argmin.
        rng = np.random.default_rng(5)
        data = random_labeled(rng, 2, 10)
        lam = 1.0
        axis = np.arange(-3.0, 3.0 + 1e-12, 0.01)
        b2g, b0g = np.meshgrid(axis, axis, indexing="ij")
        B2, B0 = b2g.ravel(), b0g.ravel()
        best, arg = np.inf, None
        for b1 in axis:
            u = data.X[0][:, None] * b1 + data.X[1][:, None] * B2[None, :] + B0[None, :]
            s = data.y[:, None] * u
            v = np.where(s <= 0.5, 1.0 - s, 1.0 / (4.0 * np.maximum(s, 0.25)))
            vals = v.mean(axis=0) + 0.5 * lam * (b1 * b1 + B2**2)
            k = int(np.argmin(vals))
            if vals[k] < best:
                best, arg = float(vals[k]), (b1, float(B2[k]), float(B0[k]))
        # local refinement: shrink a 41-point box around the dense argmin
        center = np.array(arg)
        spacing = 0.01
        for _ in range(6):
            half = 2.0 * spacing
            axes = [np.linspace(c - half, c + half, 41) for c in center]
            g1, g2, g0 = np.meshgrid(*axes, indexing="ij")
            u = (
                data.X[0][:, None] * g1.ravel()[None, :]
                + data.X[1][:, None] * g2.ravel()[None, :]
                + g0.ravel()[None, :]
            )
            s = data.y[:, None] * u
            v = np.where(s <= 0.5, 1.0 - s, 1.0 / (4.0 * np.maximum(s, 0.25)))
            vals = v.mean(axis=0) + 0.5 * lam * (g1.ravel() ** 2 + g2.ravel() ** 2)
            k = int(np.argmin(vals))
            best = min(best, float(vals[k]))
            center = np.array([g1.ravel()[k], g2.ravel()[k], g0.ravel()[k]])
            spacing = half / 20.0
        got = objective(solve_mode(data, lam), data)
        assert abs(got - best) <= 1e-6
