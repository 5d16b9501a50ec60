import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from causalot.pathspace import (
    AtomLabeling,
    CapacityError,
    FiltrationSeq,
    ValidationError,
    build_binomial,
    enlarge_initial,
    enlarge_progressive,
    first_hitting_time,
    from_edges,
    full_information,
    last_zero_time,
    load_tree,
    natural_filtration,
    sign_labels,
    terminal_value_labels,
)

from conftest import random_tree


def test_binomial_shape_and_mass():
    t = build_binomial(3, 1.0)
    assert t.n_leaves == 8
    assert t.n_nodes == 15
    assert t.leaf_prob == pytest.approx(np.full(8, 0.125))
    h = np.sqrt(1 / 3)
    np.testing.assert_allclose(t.leaf_paths[0], [0, h, 2 * h, 3 * h])
    np.testing.assert_allclose(t.leaf_paths[-1], [0, -h, -2 * h, -3 * h])
    assert t.T == pytest.approx(1.0)


def test_binomial_biased_probabilities():
    t = build_binomial(2, 2.0, p=0.7)
    np.testing.assert_allclose(t.leaf_prob, [0.49, 0.21, 0.21, 0.09])
    assert t.dt == 1.0


def test_leaf_cap():
    with pytest.raises(CapacityError):
        build_binomial(17, 1.0)
    with pytest.raises(CapacityError):
        build_binomial(4, 1.0, leaf_cap=8)


@pytest.mark.parametrize(
    "edges, msg",
    [
        ([(0, 1, 1.0, 0.5), (0, 2, -1.0, 0.4)], "sum"),
        ([(0, 1, 1.0, 0.5), (0, 2, -1.0, 0.5), (1, 3, 0.0, 1.0)], "depth"),
        ([(0, 1, 1.0, 1.5)], "outside"),
        ([(0, 1, 1.0, 1.0), (0, 1, 1.0, 1.0)], "parents"),
    ],
)
def test_malformed_edges(edges, msg):
    with pytest.raises(ValidationError, match=msg):
        from_edges(1, 1.0, edges)


def test_json_roundtrip(tmp_path):
    t = build_binomial(3, 1.0, p=0.3)
    lab = sign_labels(t)
    path = tmp_path / "t.json"
    path.write_text(json.dumps(t.to_json(lab)))
    t2, lab2 = load_tree(path)
    np.testing.assert_allclose(t2.leaf_prob, t.leaf_prob)
    np.testing.assert_allclose(t2.leaf_paths, t.leaf_paths)
    np.testing.assert_array_equal(lab2, lab)


def test_natural_filtration_atoms():
    t = build_binomial(3, 1.0)
    F = natural_filtration(t)
    assert [F.n_atoms(k) for k in range(4)] == [1, 2, 4, 8]
    F.check_against(t)


def test_filtration_rejects_non_refining():
    with pytest.raises(ValidationError, match="refine"):
        FiltrationSeq((np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]), np.arange(4)))
    with pytest.raises(ValidationError, match="singletons"):
        FiltrationSeq((np.zeros(4, int), np.array([0, 0, 1, 1])))


def test_sign_enlargement_atoms():
    t = build_binomial(2, 1.0)
    F = natural_filtration(t)
    G = enlarge_initial(F, AtomLabeling.from_labels(sign_labels(t), t.leaf_prob))
    # leaves: ++, +-, -+, --; terminal zero counts as the positive class
    assert G.n_atoms(0) == 2
    assert G.n_atoms(1) == 3
    assert G.refines(F)
    G.check_against(t)


def test_labeling_drops_zero_mass_classes():
    prob = np.array([0.5, 0.5, 0.0, 0.0])
    L = AtomLabeling.from_labels([3, 3, 7, 9], prob)
    assert L.m == 1
    np.testing.assert_array_equal(L.label, [0, 0, 0, 0])


def test_labeling_class_cap():
    n = 80
    with pytest.raises(ValidationError, match="64"):
        AtomLabeling.from_labels(np.arange(n), np.full(n, 1 / n))


def test_terminal_value_labels_binomial():
    t = build_binomial(3, 1.0)
    assert len(np.unique(terminal_value_labels(t))) == 4


def test_last_zero_and_first_hitting():
    t = build_binomial(4, 1.0)
    lz = last_zero_time(t)
    fh = first_hitting_time(t)
    P = t.leaf_paths
    for x in range(t.n_leaves):
        zeros = np.flatnonzero(np.abs(P[x]) < 1e-12)
        assert lz[x] == zeros.max()
        later = zeros[zeros >= 1]
        assert fh[x] == (later.min() if len(later) else 4)


def test_progressive_enlargement_by_stopping_time_adds_nothing():
    t = build_binomial(4, 1.0)
    F = natural_filtration(t)
    G = enlarge_progressive(F, first_hitting_time(t))
    assert G.same_as(F)


def test_progressive_enlargement_by_last_zero_splits_atoms():
    t = build_binomial(4, 1.0)
    F = natural_filtration(t)
    G = enlarge_progressive(F, last_zero_time(t))
    assert G.refines(F)
    assert not G.same_as(F)
    assert G.n_atoms(2) > F.n_atoms(2)


def test_full_information():
    t = build_binomial(2, 1.0)
    G = full_information(t)
    assert all(G.n_atoms(k) == 4 for k in range(3))


def test_with_leaf_prob_keeps_skeleton():
    t = build_binomial(2, 1.0)
    nu = np.array([0.1, 0.2, 0.3, 0.4])
    t2 = t.with_leaf_prob(nu)
    np.testing.assert_allclose(t2.leaf_prob, nu)
    np.testing.assert_allclose(t2.prob[list(t2.children[0])], [0.3, 0.7])


@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_random_tree_invariants(N, seed):
    t = random_tree(np.random.default_rng(seed), N)
    assert t.leaf_prob.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.diff(t.leaf_paths, axis=1), t.leaf_increments)
    node_p = t.node_prob()
    for k in range(N + 1):
        assert node_p[t.nodes_at(k)].sum() == pytest.approx(1.0, abs=1e-12)


@given(st.integers(1, 5), st.lists(st.integers(0, 3), min_size=32, max_size=32))
def test_initial_enlargement_refines(N, raw):
    t = build_binomial(N, 1.0)
    lab = np.array(raw[: t.n_leaves])
    F = natural_filtration(t)
    G = enlarge_initial(F, AtomLabeling.from_labels(lab, t.leaf_prob))
    assert G.refines(F)
    assert G.n_atoms(0) == len(np.unique(lab))
    G.check_against(t)
