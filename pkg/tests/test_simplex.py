import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from causalot import kernels
from causalot.simplex import LPProblem, coo_to_csc, dense_to_csc, independent_rows, solve_lp


@pytest.fixture(params=["cython", "python"])
def backend(request, monkeypatch):
    mod = kernels.backend_module(request.param)
    for name in ("price", "ratio_test", "eta_update"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


def random_lp(rng, m, n, redundant=0):
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, n) * (rng.uniform(size=n) < 0.6)
    if redundant:
        A = np.vstack([A, rng.normal(size=(redundant, m)) @ A])
    b = A @ x0
    c = rng.normal(size=n) + np.abs(A).sum(0) * 0.1
    # keep the LP bounded: c in the cone of the rows plus a positive part
    c = A.T @ rng.normal(size=A.shape[0]) + rng.uniform(0.1, 1.0, n)
    return c, A, b


def test_csc_conversions_agree():
    A = np.array([[1.0, 0, 2], [0, 3, 0]])
    p = LPProblem(np.zeros(3), dense_to_csc(A), np.zeros(2))
    np.testing.assert_array_equal(p.dense(), A)
    r, c = np.nonzero(A)
    q = LPProblem(np.zeros(3), coo_to_csc(r[::-1], c[::-1], A[r, c][::-1], A.shape), np.zeros(2))
    np.testing.assert_array_equal(q.dense(), A)
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(p.matvec(x), A @ x)
    np.testing.assert_allclose(p.rmatvec(np.array([1.0, -1.0])), A.T @ [1, -1])


def test_small_known_lp(backend):
    # min -x1 - 2x2 st x1 + x2 + s1 = 4, x1 + 3x2 + s2 = 6
    A = np.array([[1.0, 1, 1, 0], [1, 3, 0, 1]])
    sol = solve_lp(LPProblem(np.array([-1.0, -2, 0, 0]), A, np.array([4.0, 6])))
    assert sol.status == "optimal"
    assert sol.value == pytest.approx(-5.0)
    np.testing.assert_allclose(sol.x[:2], [3.0, 1.0])
    assert sol.duality_gap < 1e-12


def test_beale_cycling_example(backend):
    # classic degenerate LP on which textbook Dantzig pricing cycles
    A = np.array(
        [
            [0.25, -8, -1, 9, 1, 0, 0],
            [0.5, -12, -0.5, 3, 0, 1, 0],
            [0, 0, 1, 0, 0, 0, 1],
        ]
    )
    c = np.array([-0.75, 20, -0.5, 6, 0, 0, 0])
    sol = solve_lp(LPProblem(c, A, np.array([0.0, 0, 1])))
    assert sol.status == "optimal"
    assert sol.value == pytest.approx(-1.25)


def test_infeasible_and_unbounded(backend):
    A = np.array([[1.0, 1.0]])
    assert solve_lp(LPProblem(np.ones(2), A, np.array([-1.0]))).status == "infeasible"
    A = np.array([[1.0, -1.0]])
    assert solve_lp(LPProblem(np.array([-1.0, 0.0]), A, np.array([1.0]))).status == "unbounded"


def test_negative_rhs(backend):
    A = np.array([[-1.0, -1.0, 1.0]])
    sol = solve_lp(LPProblem(np.array([1.0, 2.0, 0.0]), A, np.array([-2.0])))
    assert sol.value == pytest.approx(2.0)
    assert sol.y[0] * -2.0 == pytest.approx(sol.value)


def test_redundant_rows_presolve(backend):
    rng = np.random.default_rng(3)
    c, A, b = random_lp(rng, 60, 150, redundant=20)
    p = LPProblem(c, A, b)
    keep = independent_rows(p)
    assert len(keep) == 60
    sol = solve_lp(p)
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert sol.value == pytest.approx(ref.fun, abs=1e-7)
    assert sol.primal_residual < 1e-8
    assert sol.duality_gap < 1e-8
    assert sol.min_reduced_cost > -1e-8


@settings(max_examples=25)
@given(st.integers(1, 12), st.integers(0, 20), st.integers(0, 2**32 - 1))
def test_matches_highs(m, extra, seed):
    rng = np.random.default_rng(seed)
    n = m + extra + 1
    c, A, b = random_lp(rng, m, n)
    sol = solve_lp(LPProblem(c, A, b))
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert sol.status == "optimal"
    assert sol.value == pytest.approx(ref.fun, rel=1e-8, abs=1e-8)
    # optimality certificate: primal and dual feasibility with equal objectives
    assert sol.primal_residual < 1e-8
    assert sol.min_reduced_cost > -1e-8
    assert sol.duality_gap < 1e-8 * (1 + abs(sol.value))
    assert np.all(sol.x >= 0)
