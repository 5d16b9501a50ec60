import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalot.causal_lp import Coupling, check_causality, identity_coupling, product_coupling, solve_causal
from causalot.pathspace import (
    AtomLabeling,
    ValidationError,
    build_binomial,
    enlarge_initial,
    full_information,
    natural_filtration,
)
from causalot.stopping import (
    Payoff,
    RandStopTime,
    all_pure_values,
    builtin_payoff,
    model_sensitivity_stopping,
    optimal_stopping,
    project_rst,
    projection_identity_check,
    random_rst,
    rst_lp_value,
    time_payoff,
    transfer_gap,
    value_of_info_stopping,
)

from conftest import random_payoff, sign_setup, terminal_setup
from oracles import swap_coupling


# frozen from exhaustive enumeration over pure stopping rules (all_pure_values)
@pytest.mark.parametrize(
    "name, expected",
    [("neg_running_max", -1 / np.sqrt(3)), ("neg_positive_part", -np.sqrt(3) / 4), ("terminal_abs", 0.0)],
)
def test_frozen_values_n3(name, expected):
    t = build_binomial(3, 1.0)
    F = natural_filtration(t)
    p = builtin_payoff(t, name)
    assert all_pure_values(t, F, p) == pytest.approx(expected, abs=1e-12)
    assert optimal_stopping(t, F, p).value == pytest.approx(expected, abs=1e-12)
    assert rst_lp_value(t, F, p) == pytest.approx(expected, abs=1e-9)


def test_constant_and_time_payoffs():
    t = build_binomial(3, 1.0)
    F = natural_filtration(t)
    assert rst_lp_value(t, F, np.full((4, 8), 2.5)) == pytest.approx(2.5)
    r = optimal_stopping(t, F, time_payoff(t))
    assert r.value == 0.0
    np.testing.assert_array_equal(r.tau, 0)


def test_ties_stop():
    t = build_binomial(2, 1.0)
    r = optimal_stopping(t, natural_filtration(t), np.zeros((3, 4)))
    assert np.all(r.stop)


def test_full_information_is_pathwise_minimum():
    t = build_binomial(4, 1.0)
    p = builtin_payoff(t, "neg_running_max")
    v = optimal_stopping(t, full_information(t), p).value
    assert v == pytest.approx(float(t.leaf_prob @ p.ell.min(axis=0)))


def test_payoff_checks():
    t = build_binomial(2, 1.0)
    with pytest.raises(ValidationError, match="shape"):
        Payoff(np.zeros((2, 4)), 1.0).check(t)
    ell = np.zeros((3, 4))
    ell[0] = [0, 0, 0, 1]
    with pytest.raises(ValidationError, match="path up to time"):
        Payoff(ell, 10.0).check(t)
    with pytest.raises(ValidationError, match="Lipschitz"):
        Payoff(5 * t.leaf_paths.T, 1.0).check(t)
    with pytest.raises(ValidationError):
        builtin_payoff(t, "nope")


def test_rst_invariants():
    t = build_binomial(2, 1.0)
    F = natural_filtration(t)
    with pytest.raises(ValidationError, match="nondecreasing"):
        RandStopTime(np.array([[0.5] * 4, [0.2] * 4, [1.0] * 4]), F)
    with pytest.raises(ValidationError, match="end at 1"):
        RandStopTime(np.array([[0.0] * 4, [0.2] * 4, [0.9] * 4]), F)
    with pytest.raises(ValidationError, match="adapted"):
        RandStopTime(np.array([[0, 0, 0, 0.5], [1.0] * 4, [1.0] * 4]), F)
    # mass at time 0 is allowed
    s = RandStopTime(np.array([[0.3] * 4, [0.3] * 4, [1.0] * 4]), F)
    assert s.increments[0, 0] == pytest.approx(0.3)


def test_projection_of_deterministic_time():
    t, F, G, _ = sign_setup(3)
    sigma = RandStopTime.pure(np.full(8, 2), G)
    pi = product_coupling(t, t)
    proj = project_rst(pi, sigma, F)
    np.testing.assert_allclose(proj.sigma, sigma.sigma)


def test_projection_identity_coupling_same_filtration():
    t = build_binomial(3, 1.0)
    F = natural_filtration(t)
    sigma = random_rst(F, np.random.default_rng(0))
    proj = project_rst(identity_coupling(t), sigma, F)
    np.testing.assert_allclose(proj.sigma, sigma.sigma, atol=1e-15)


def test_projection_rejects_non_causal():
    t = build_binomial(2, 1.0)
    F = natural_filtration(t)
    pi = Coupling(swap_coupling(t), t, t, t.leaf_prob, t.leaf_prob)
    with pytest.raises(ValidationError, match="causal"):
        project_rst(pi, random_rst(F, np.random.default_rng(0)), F)


def test_swap_counterexample_frozen():
    t = build_binomial(2, 1.0)
    F = natural_filtration(t)
    pi = Coupling(swap_coupling(t), t, t, t.leaf_prob, t.leaf_prob)
    assert check_causality(pi, F, F) == pytest.approx(0.125)
    # Lam_k = 1{target first step is up} for k >= 1; the source learns it only at time 2
    up = (t.leaf_increments[:, 0] > 0).astype(float)
    Lam = np.zeros((3, 4, 4))
    Lam[1:] = up[None, None, :]
    assert projection_identity_check(pi, Lam, F) == pytest.approx(0.5)


def test_projection_identity_source_only_process():
    t, F, G, _ = sign_setup(3)
    rng = np.random.default_rng(1)
    _, cp, _ = solve_causal(t, F, t, G, rng.normal(size=(8, 8)))
    src = np.stack([rng.normal(size=F.n_atoms(k))[F.labels[k]] for k in range(4)])
    Lam = np.repeat(src[:, :, None], 8, axis=2)
    assert projection_identity_check(cp, Lam, F) < 1e-12


def test_information_bound_sign_n4():
    t, F, G, _ = sign_setup(4)
    p = builtin_payoff(t, "neg_positive_part")
    r = value_of_info_stopping(t, F, G, p)
    assert r.holds
    assert 0.0 <= r.difference <= r.K * r.transport + 1e-9


def test_information_bound_trivial_and_full():
    t = build_binomial(3, 1.0)
    F = natural_filtration(t)
    p = builtin_payoff(t, "neg_running_max")
    r = value_of_info_stopping(t, F, F, p)
    assert r.difference == 0.0 and r.transport == pytest.approx(0.0, abs=1e-12)
    r = value_of_info_stopping(t, F, full_information(t), p)
    assert r.holds
    assert r.v_large == pytest.approx(float(t.leaf_prob @ p.ell.min(axis=0)))


def test_model_sensitivity_symmetric_and_trivial():
    t = build_binomial(3, 1.0)
    F = natural_filtration(t)
    nu = build_binomial(3, 1.0, p=0.6).leaf_prob
    p = builtin_payoff(t, "neg_running_max")
    a = model_sensitivity_stopping(t, F, t.leaf_prob, nu, p)
    b = model_sensitivity_stopping(t, F, nu, t.leaf_prob, p)
    assert a.holds and b.holds
    assert a.transport == pytest.approx(b.transport, abs=1e-10)
    assert a.difference == pytest.approx(-b.difference)
    same = model_sensitivity_stopping(t, F, nu, nu, p)
    assert same.difference == 0.0 and same.transport == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=20)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_dp_equals_lp_equals_enumeration(N, seed):
    rng = np.random.default_rng(seed)
    t = build_binomial(N, 1.0, p=float(rng.uniform(0.2, 0.8)))
    F = natural_filtration(t)
    lab = rng.integers(0, 2, t.n_leaves)
    H = enlarge_initial(F, AtomLabeling.from_labels(lab, t.leaf_prob)) if seed % 2 else F
    p = random_payoff(rng, t)
    v = optimal_stopping(t, H, p).value
    assert rst_lp_value(t, H, p) == pytest.approx(v, abs=1e-9)
    if sum(H.n_atoms(k) for k in range(N)) <= 12:
        assert all_pure_values(t, H, p) == pytest.approx(v, abs=1e-12)
    # any randomized rule does no better
    assert random_rst(H, rng).evaluate(p.ell, t.leaf_prob) >= v - 1e-12


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_refinement_lowers_value(seed):
    rng = np.random.default_rng(seed)
    t = build_binomial(3, 1.0)
    F = natural_filtration(t)
    G = enlarge_initial(F, AtomLabeling.from_labels(rng.integers(0, 3, 8), t.leaf_prob))
    p = random_payoff(rng, t)
    assert optimal_stopping(t, G, p).value <= optimal_stopping(t, F, p).value + 1e-12


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_transfer_and_projection_identity(seed):
    rng = np.random.default_rng(seed)
    t, F, G, _ = (terminal_setup if seed % 2 else sign_setup)(3)
    _, cp, _ = solve_causal(t, F, t, G, rng.normal(size=(8, 8)))
    sigma = random_rst(G, rng)
    proj = project_rst(cp, sigma, F)
    ell = rng.normal(size=(4, 8))
    ell = np.stack([ell[k][F.labels[k]] for k in range(4)])  # F-adapted
    assert transfer_gap(cp, sigma, proj, ell) <= 1e-12
    Lam = np.repeat(sigma.sigma[:, None, :], 8, axis=1)
    assert projection_identity_check(cp, Lam, F) <= 1e-12
