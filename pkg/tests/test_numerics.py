import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndthermo.errors import NonFiniteObjective, NonFiniteResidual, NotPositiveDefinite
from ndthermo.numerics import (LeastSquaresProblem, cholesky, fd_gradient, least_squares,
                               log_det, maximize, solve_chol)
from oracles import gauss_jordan_inverse, permutation_det


def random_spd(rng, n):
    b = rng.standard_normal((n, n))
    return b.T @ b + np.eye(n)


# -- Cholesky -----------------------------------------------------------------

def test_cholesky_examples():
    f = cholesky(np.eye(4))
    assert np.array_equal(f.lower, np.eye(4)) and f.jitter_used == 0.0
    f = cholesky([[4.0, 2.0], [2.0, 3.0]])
    assert np.allclose(f.lower, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)


def test_cholesky_reconstruction_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 51))
        a = random_spd(rng, n)
        f = cholesky(a)
        err = np.linalg.norm(f.lower @ f.lower.T - (a + f.jitter_used * np.eye(n)))
        assert err / np.linalg.norm(a) < 1e-10


def test_cholesky_jitter_and_failure():
    singular = np.ones((3, 3))
    with pytest.raises(NotPositiveDefinite):
        cholesky(singular)
    f = cholesky(singular, max_jitter=1e-6)
    assert 0 < f.jitter_used <= 1e-6
    err = np.linalg.norm(f.lower @ f.lower.T - (singular + f.jitter_used * np.eye(3)))
    assert err / np.linalg.norm(singular) < 1e-10
    with pytest.raises(NotPositiveDefinite):
        cholesky(-np.eye(2), max_jitter=1e-3)
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, np.nan], [np.nan, 1.0]])


def test_solve_examples():
    rng = np.random.default_rng(1)
    b = rng.standard_normal(4)
    assert np.array_equal(solve_chol(cholesky(np.eye(4)), b), b)
    a = random_spd(rng, 3)
    b = rng.standard_normal(3)
    assert np.allclose(solve_chol(cholesky(a), b), gauss_jordan_inverse(a) @ b, atol=1e-10)
    a = random_spd(rng, 20)
    b = rng.standard_normal(20)
    x = solve_chol(cholesky(a), b)
    assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-9
    with pytest.raises(ValueError):
        solve_chol(cholesky(a), np.ones(3))


def test_log_det_examples():
    assert log_det(cholesky(np.eye(5))) == 0.0
    assert log_det(cholesky(np.diag([2.0, 8.0]))) == pytest.approx(math.log(16.0), abs=1e-15)


def test_log_det_against_permutation_expansion():
    rng = np.random.default_rng(2)
    for n in range(1, 7):
        for _ in range(5):
            a = random_spd(rng, n)
            det = permutation_det(a)
            assert abs(log_det(cholesky(a)) - math.log(det)) / abs(math.log(det)) < 1e-8 \
                or abs(log_det(cholesky(a)) - math.log(det)) < 1e-12


# -- Levenberg-Marquardt ---------------------------------------------------------

def strictly_decreasing(history):
    return all(b < a for a, b in zip(history, history[1:]))


def test_linear_problem():
    c = np.array([1.5, -2.0, 3.25])
    x0 = np.array([10.0, 10.0, 10.0])
    x, sse, rep = least_squares(LeastSquaresProblem(lambda t: t - c, x0))
    assert np.allclose(x, c, atol=1e-12)
    assert rep.converged
    assert strictly_decreasing(rep.sse_history)
    # each damped step leaves a fraction lambda/(1+lambda) of the error:
    # 1e-3 then 1e-4, so two accepted steps land within 1e-7 of c
    x2, _, rep2 = least_squares(LeastSquaresProblem(lambda t: t - c, x0, max_iter=2))
    assert rep2.n_accepted == 2
    assert np.linalg.norm(x2 - c) <= 2e-7 * np.linalg.norm(x0 - c)


def test_exponential_decay_fit():
    t = np.linspace(0, 4, 30)
    y = 2.0 * np.exp(-1.3 * t) + 0.5
    res = lambda p: p[0] * np.exp(-p[1] * t) + p[2] - y  # noqa: E731
    x, sse, rep = least_squares(LeastSquaresProblem(res, [1.0, 0.5, 0.0]))
    assert np.allclose(x, [2.0, 1.3, 0.5], atol=1e-8)
    assert rep.lambda_init == 1e-3 and rep.nu == 10.0
    assert strictly_decreasing(rep.sse_history)


def test_rosenbrock_with_bounds_stays_inside():
    res = lambda p: np.array([10 * (p[1] - p[0] ** 2), 1 - p[0]])  # noqa: E731
    lo, hi = [-2.0, -2.0], [0.8, 2.0]
    x, _, rep = least_squares(LeastSquaresProblem(res, [-1.2, 1.0], lower=lo, upper=hi))
    assert np.all(x >= lo) and np.all(x <= hi)
    assert x[0] == pytest.approx(0.8, abs=1e-6)
    assert strictly_decreasing(rep.sse_history)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_sse_monotone_on_random_problems(seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(-1, 1, 25)
    true = rng.uniform(0.5, 2.0, 3)
    y = true[0] * np.sin(true[1] * t + true[2]) + 0.01 * rng.standard_normal(t.size)
    res = lambda p: p[0] * np.sin(p[1] * t + p[2]) - y  # noqa: E731
    x0 = rng.uniform(0.1, 3.0, 3)
    x, _, rep = least_squares(LeastSquaresProblem(res, x0, lower=[0, 0, -4], upper=[5, 5, 4]))
    assert strictly_decreasing(rep.sse_history)
    assert np.all(x >= [0, 0, -4]) and np.all(x <= [5, 5, 4])


def test_least_squares_errors():
    with pytest.raises(NonFiniteResidual):
        least_squares(LeastSquaresProblem(lambda p: np.array([np.nan]), [0.0]))
    with pytest.raises(ValueError):
        least_squares(LeastSquaresProblem(lambda p: p, [5.0], lower=[0.0], upper=[1.0]))


# -- maximize ------------------------------------------------------------------------

def test_concave_quadratic():
    c = np.array([0.3, -1.2, 2.0])
    obj = lambda x: -float(np.sum((x - c) ** 2))  # noqa: E731
    res = maximize(obj, [np.zeros(3), np.full(3, 4.0)], [-5] * 3, [5] * 3)
    assert np.allclose(res.x, c, atol=1e-6)


def test_bimodal_returns_higher_mode():
    obj = lambda x: float(np.exp(-(x[0] + 2) ** 2) + 1.5 * np.exp(-(x[0] - 2) ** 2 / 0.5))  # noqa
    grid = np.linspace(-5, 5, 200_001)
    oracle = grid[np.argmax(np.exp(-(grid + 2) ** 2) + 1.5 * np.exp(-(grid - 2) ** 2 / 0.5))]
    res = maximize(obj, [np.array([-3.0]), np.array([3.0])], [-5], [5])
    assert res.start_index == 1
    assert res.x[0] == pytest.approx(oracle, abs=1e-4)
    assert res.value >= max(res.all_values) - 1e-15


def test_maximize_respects_box():
    res = maximize(lambda x: float(x[0] + x[1]), [np.array([0.0, 0.0])], [-1, -1], [1, 2])
    assert np.allclose(res.x, [1, 2])


def test_maximize_errors():
    with pytest.raises(NonFiniteObjective):
        maximize(lambda x: math.nan, [np.zeros(1)], [-1], [1])
    with pytest.raises(ValueError):
        maximize(lambda x: 0.0, [np.array([3.0])], [-1], [1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_fd_gradient_matches_analytic(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal(4)
    x = rng.uniform(-1, 1, 4)
    f = lambda z: float(np.sin(a @ z).sum() + b @ z + 0.5 * z @ z)  # noqa: E731
    g = a.T @ np.cos(a @ x) + b + x
    fd = fd_gradient(f, x)
    assert np.linalg.norm(fd - g) <= 1e-4 * max(np.linalg.norm(g), 1e-12)


def test_bit_identical_reruns():
    rng = np.random.default_rng(5)
    a = random_spd(rng, 10)
    assert cholesky(a).lower.tobytes() == cholesky(a.copy()).lower.tobytes()
    t = np.linspace(0, 1, 20)
    res = lambda p: p[0] * t ** 2 + p[1] - np.cos(t)  # noqa: E731
    x1 = least_squares(LeastSquaresProblem(res, [0.0, 0.0]))[0]
    x2 = least_squares(LeastSquaresProblem(res, [0.0, 0.0]))[0]
    assert x1.tobytes() == x2.tobytes()
