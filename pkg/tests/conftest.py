import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

from causalot.pathspace import (  # noqa: E402
    AtomLabeling,
    build_binomial,
    enlarge_initial,
    natural_filtration,
    sign_labels,
    terminal_value_labels,
)


def sign_setup(N, T=1.0):
    tree = build_binomial(N, T)
    F = natural_filtration(tree)
    L = AtomLabeling.from_labels(sign_labels(tree), tree.leaf_prob)
    return tree, F, enlarge_initial(F, L), L


def terminal_setup(N, T=1.0):
    tree = build_binomial(N, T)
    F = natural_filtration(tree)
    L = AtomLabeling.from_labels(terminal_value_labels(tree), tree.leaf_prob)
    return tree, F, enlarge_initial(F, L), L


def random_tree(rng, N, branch=(2, 3), T=1.0):
    """Non-recombining tree with random branching, increments and edge probabilities."""
    edges = []
    frontier = [0]
    nxt = 1
    for _ in range(N):
        new = []
        for v in frontier:
            b = int(rng.integers(branch[0], branch[1] + 1))
            p = rng.dirichlet(np.ones(b))
            p = np.maximum(p, 0.02)
            p /= p.sum()
            for i in range(b):
                edges.append((v, nxt, float(rng.normal()), float(p[i])))
                new.append(nxt)
                nxt += 1
        frontier = new
    from causalot.pathspace import from_edges

    return from_edges(N, T / N, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_payoff(rng, tree):
    """Random sup-Lipschitz payoff: a signed mix of 1-Lipschitz path functionals plus a time trend."""
    from causalot.stopping import Payoff

    P = tree.leaf_paths.T
    parts = [P, np.maximum.accumulate(P, axis=0), np.minimum.accumulate(P, axis=0), np.abs(P),
             np.maximum(P - rng.normal(scale=0.5), 0.0)]
    w = rng.normal(size=len(parts))
    ell = sum(wi * p for wi, p in zip(w, parts))
    ell = ell + rng.normal(scale=0.3, size=(tree.steps + 1, 1)) * np.arange(tree.steps + 1)[:, None] / tree.steps
    return Payoff(ell, float(np.abs(w).sum()), "random")
