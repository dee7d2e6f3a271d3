import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hoids.optimizer import (LineSearchError, Objective, OptimizerError, QNConfig, backtrack,
                             bfgs_update, minimize)


def quadratic(A, b):
    def fg(w):
        Aw = A @ w
        return 0.5 * float(w @ Aw) - float(b @ w), Aw - b
    return Objective(len(b), fg)


def wishart_spd(rng, d):
    B = rng.standard_normal((d, d))
    return B @ B.T / d + np.eye(d)


def iterations_to(obj, w_star, tol=1e-6, max_iters=500):
    hit = []

    def cb(k, w, f):
        if not hit and np.linalg.norm(w - w_star) < tol:
            hit.append(k)
    _, trace = minimize(obj, np.zeros(len(w_star)), QNConfig(epsilon=1e-12, max_iters=max_iters),
                        callback=cb)
    return (hit[0] if hit else None), trace


class TestBFGSUpdate:
    def test_secant_already_satisfied_gives_identity(self):
        S = bfgs_update(np.eye(2), np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        assert np.allclose(S, np.eye(2), atol=1e-15)

    def test_zero_curvature_resets(self):
        S0 = 3 * np.eye(2)
        S = bfgs_update(S0, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.array_equal(S, np.eye(2))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_secant_condition(self, seed, d):
        rng = np.random.default_rng(seed)
        S = wishart_spd(rng, d)
        delta = rng.standard_normal(d)
        gamma = rng.standard_normal(d)
        if gamma @ delta <= 0:
            gamma = -gamma
        if gamma @ delta < 1e-3 * np.linalg.norm(delta) * np.linalg.norm(gamma):
            return
        S1 = bfgs_update(S, delta, gamma)
        assert np.allclose(S1 @ gamma, delta, rtol=1e-7, atol=1e-9)
        assert np.allclose(S1, S1.T)
        assert np.all(np.linalg.eigvalsh(S1) > 0)


class TestBacktrack:
    def test_hand_armijo_example(self):
        def f(w):
            return float(w[0] ** 2), 2 * w
        alpha, f_new, _ = backtrack(f, np.array([1.0]), np.array([-2.0]), np.array([2.0]),
                                    cfg=QNConfig(ls_c=1e-4))
        assert alpha == 0.5 and f_new == 0.0

    def test_linear_region_accepts_unit_step(self):
        def f(w):
            return float(3 * w[0]), np.array([3.0])
        alpha, _, _ = backtrack(f, np.array([0.0]), np.array([-3.0]), np.array([3.0]),
                                cfg=QNConfig(ls_c=1e-8))
        assert alpha == 1.0

    def test_ascent_direction_is_rejected(self):
        def f(w):
            return float(w @ w), 2 * w
        with pytest.raises(ValueError, match="descent"):
            backtrack(f, np.array([1.0]), np.array([1.0]), np.array([2.0]))

    def test_exhausted_trials(self):
        def f(w):
            return (0.0 if w[0] == 0 else 1.0), np.array([1.0])
        with pytest.raises(LineSearchError):
            backtrack(f, np.array([0.0]), np.array([-1.0]), np.array([1.0]),
                      cfg=QNConfig(ls_max_steps=5))


class TestMinimize:
    def test_shifted_bowl(self):
        c = np.array([1.5, -2.0, 0.25])

        def fg(w):
            return float((w - c) @ (w - c)), 2 * (w - c)
        w, trace = minimize(Objective(3, fg), np.zeros(3))
        assert np.allclose(w, c, atol=1e-5) and trace.converged

    def test_inverse_hessian_reaches_half_identity(self):
        # f = |w - c|^2 has Hessian 2I; secant pairs along a basis recover I/2
        rng = np.random.default_rng(0)
        S = np.eye(3)
        for delta in np.linalg.qr(rng.standard_normal((3, 3)))[0].T:
            S = bfgs_update(S, delta, 2 * delta)
        assert np.allclose(S, 0.5 * np.eye(3), atol=1e-12)

    def test_start_at_minimizer(self):
        def fg(w):
            return float(w @ w), 2 * w
        w, trace = minimize(Objective(2, fg), np.zeros(2))
        assert trace.iterations <= 1 and np.array_equal(w, np.zeros(2))

    def test_wrong_dimension(self):
        with pytest.raises(OptimizerError):
            minimize(Objective(3, lambda w: (0.0, w)), np.zeros(2))

    def test_nonfinite_start(self):
        with pytest.raises(OptimizerError):
            minimize(Objective(1, lambda w: (float("nan"), w)), np.zeros(1))

    def test_config_validation(self):
        for bad in ({"epsilon": 0}, {"max_iters": 0}, {"ls_shrink": 1.0}, {"ls_c": 0}):
            with pytest.raises(ValueError):
                QNConfig(**bad)

    def test_trace_csv(self, tmp_path):
        _, trace = minimize(quadratic(np.diag([1.0, 4.0]), np.ones(2)), np.zeros(2))
        p = tmp_path / "t.csv"
        trace.write_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "iteration,objective,step_norm"
        assert len(lines) == len(trace.values) + 1

    @given(st.integers(0, 2**32 - 1), st.integers(1, 20))
    def test_quadratic_bound_and_monotone(self, seed, d):
        rng = np.random.default_rng(seed)
        A = wishart_spd(rng, d)
        b = rng.standard_normal(d)
        w_star = np.linalg.solve(A, b)
        k, trace = iterations_to(quadratic(A, b), w_star)
        assert k is not None and k <= 2 * d + 5
        assert all(b2 <= a for a, b2 in zip(trace.values, trace.values[1:]))

    @pytest.mark.xfail(strict=True, reason="ill-conditioned spectra can need more than 2d+5 "
                       "Armijo-BFGS iterations; recorded as a known limitation")
    def test_quadratic_bound_ill_conditioned(self):
        failures = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            d = int(rng.integers(2, 21))
            Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            A = Q @ np.diag(np.exp(rng.uniform(np.log(0.1), np.log(10.0), d))) @ Q.T
            b = rng.standard_normal(d)
            k, _ = iterations_to(quadratic(A, b), np.linalg.solve(A, b))
            failures += k is None or k > 2 * d + 5
        assert failures == 0
