"""Discrete path spaces: scenario trees, leaf measures and filtrations.

A :class:`ScenarioTree` is a non-recombining rooted tree whose depth-``N``
leaves are the discrete paths. Filtrations are sequences of leaf partitions,
stored as integer atom labels per leaf (one label array per time step).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

LEAF_CAP = 2**16
PROB_TOL = 1e-12


class CapacityError(ValueError):
    """Raised when a construction would exceed a configured size cap."""


class ValidationError(ValueError):
    """Raised when a structure violates one of its invariants."""


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Finite rooted tree carrying a discrete path measure.

    Node arrays are indexed by node id with the root at id 0. ``incr`` and
    ``prob`` describe the edge from a node's parent (root entries are 0 and 1).
    """

    steps: int
    dt: float
    parent: np.ndarray
    depth: np.ndarray
    value: np.ndarray
    incr: np.ndarray
    prob: np.ndarray
    children: tuple
    leaves: np.ndarray
    leaf_prob: np.ndarray
    # (n_leaves, N+1) node id of each leaf's ancestor at depth k
    ancestors: np.ndarray = field(repr=False)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def T(self) -> float:
        return self.steps * self.dt

    @property
    def leaf_paths(self) -> np.ndarray:
        """Cumulative values along each leaf path, shape (n_leaves, N+1)."""
        return self.value[self.ancestors]

    @property
    def leaf_increments(self) -> np.ndarray:
        """Increments along each leaf path, shape (n_leaves, N)."""
        return self.incr[self.ancestors[:, 1:]]

    def nodes_at(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.depth == k)

    def node_prob(self) -> np.ndarray:
        """Unconditional probability of reaching each node."""
        out = np.zeros(self.n_nodes)
        np.add.at(out, self.ancestors, self.leaf_prob[:, None])
        return out

    def with_edge_probs(self, prob: Sequence[float]) -> "ScenarioTree":
        """Same skeleton, new edge probabilities (a different path measure)."""
        prob = np.asarray(prob, dtype=float)
        edges = [
            (int(self.parent[v]), v, float(self.incr[v]), float(prob[v]))
            for v in range(1, self.n_nodes)
        ]
        return from_edges(self.steps, self.dt, edges)

    def with_leaf_prob(self, leaf_prob: Sequence[float]) -> "ScenarioTree":
        """Same skeleton carrying an arbitrary leaf measure.

        Edge probabilities are recomputed as conditional probabilities; nodes
        of zero mass get uniform edge probabilities so the tree stays valid.
        """
        leaf_prob = np.asarray(leaf_prob, dtype=float)
        node_p = np.zeros(self.n_nodes)
        np.add.at(node_p, self.ancestors, leaf_prob[:, None])
        prob = np.ones(self.n_nodes)
        for v in range(self.n_nodes):
            kids = self.children[v]
            if not kids:
                continue
            if node_p[v] > 0:
                prob[list(kids)] = node_p[list(kids)] / node_p[v]
            else:
                prob[list(kids)] = 1.0 / len(kids)
        tree = self.with_edge_probs(prob)
        # keep the exact leaf weights, the edge products may round differently
        object.__setattr__(tree, "leaf_prob", leaf_prob.copy())
        return tree

    def to_json(self, labels: Sequence[int] | None = None) -> dict:
        edges = [
            {
                "parent": int(self.parent[v]),
                "child": int(v),
                "incr": float(self.incr[v]),
                "prob": float(self.prob[v]),
            }
            for v in range(1, self.n_nodes)
        ]
        out = {"steps": self.steps, "dt": self.dt, "edges": edges}
        if labels is not None:
            out["labels"] = [int(v) for v in labels]
        return out


def from_edges(
    steps: int,
    dt: float,
    edges: Iterable,
    *,
    leaf_cap: int = LEAF_CAP,
) -> ScenarioTree:
    """Build a tree from an edge list.

    ``edges`` holds ``(parent, child, incr, prob)`` tuples or mappings with
    those keys. Node 0 is the root; node ids must be ``0..n-1``.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    rows = []
    for e in edges:
        if isinstance(e, Mapping):
            rows.append((int(e["parent"]), int(e["child"]), float(e["incr"]), float(e["prob"])))
        else:
            p, c, d, q = e
            rows.append((int(p), int(c), float(d), float(q)))
    n = len(rows) + 1
    parent = np.full(n, -1, dtype=np.int64)
    incr = np.zeros(n)
    prob = np.ones(n)
    kids: list[list[int]] = [[] for _ in range(n)]
    seen = np.zeros(n, dtype=bool)
    for p, c, d, q in rows:
        if not (0 <= p < n and 1 <= c < n):
            raise ValidationError(f"edge ({p}, {c}) refers to an unknown node")
        if seen[c]:
            raise ValidationError(f"node {c} has two parents")
        if not 0 < q <= 1:
            raise ValidationError(f"edge probability {q} outside (0, 1]")
        seen[c] = True
        parent[c], incr[c], prob[c] = p, d, q
        kids[p].append(c)
    depth = np.full(n, -1, dtype=np.int64)
    value = np.zeros(n)
    depth[0] = 0
    order = [0]
    for v in order:
        for c in sorted(kids[v]):
            depth[c] = depth[v] + 1
            value[c] = value[v] + incr[c]
            order.append(c)
    if len(order) != n:
        raise ValidationError("edge list is not a tree rooted at node 0")
    for v in range(n):
        if kids[v]:
            s = prob[kids[v]].sum()
            if abs(s - 1.0) > PROB_TOL:
                raise ValidationError(f"edge probabilities out of node {v} sum to {s}")
        elif depth[v] != steps:
            raise ValidationError(f"leaf {v} has depth {depth[v]}, expected {steps}")
    if depth.max() != steps:
        raise ValidationError("tree depth does not match steps")
    leaves = np.array([v for v in order if depth[v] == steps], dtype=np.int64)
    if len(leaves) > leaf_cap:
        raise CapacityError(f"{len(leaves)} leaves exceed the cap of {leaf_cap}")
    anc = np.empty((len(leaves), steps + 1), dtype=np.int64)
    anc[:, steps] = leaves
    for k in range(steps - 1, -1, -1):
        anc[:, k] = parent[anc[:, k + 1]]
    leaf_prob = np.prod(prob[anc[:, 1:]], axis=1)
    if abs(leaf_prob.sum() - 1.0) > PROB_TOL:
        raise ValidationError("leaf probabilities do not sum to 1")
    return ScenarioTree(
        steps=int(steps),
        dt=float(dt),
        parent=parent,
        depth=depth,
        value=value,
        incr=incr,
        prob=prob,
        children=tuple(tuple(sorted(k)) for k in kids),
        leaves=leaves,
        leaf_prob=leaf_prob,
        ancestors=anc,
    )


def build_binomial(N: int, T: float, p: float = 0.5, *, leaf_cap: int = LEAF_CAP) -> ScenarioTree:
    """Symmetric random-walk tree with increments ``±sqrt(T/N)``.

    ``p`` is the up-probability; ``p=0.5`` discretizes Wiener measure.
    Children are ordered (up, down).
    """
    if N < 1 or not T > 0:
        raise ValidationError("need N >= 1 and T > 0")
    if 2**N > leaf_cap:
        raise CapacityError(f"2^{N} leaves exceed the cap of {leaf_cap}")
    h = np.sqrt(T / N)
    edges = []
    frontier = [0]
    nxt = 1
    for _ in range(N):
        new = []
        for v in frontier:
            edges.append((v, nxt, h, p))
            edges.append((v, nxt + 1, -h, 1.0 - p))
            new += [nxt, nxt + 1]
            nxt += 2
        frontier = new
    return from_edges(N, T / N, edges, leaf_cap=leaf_cap)


def load_tree(path) -> tuple[ScenarioTree, np.ndarray | None]:
    """Read the JSON tree format; returns the tree and optional leaf labels."""
    with open(path) as fh:
        data = json.load(fh)
    tree = from_edges(int(data["steps"]), float(data["dt"]), data["edges"])
    labels = data.get("labels")
    return tree, (np.asarray(labels, dtype=np.int64) if labels is not None else None)


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel atoms 0..n-1 in order of first occurrence."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[inv.ravel()]


def _refines(fine: np.ndarray, coarse: np.ndarray) -> bool:
    """True if every atom of ``fine`` sits inside one atom of ``coarse``."""
    pairs = np.unique(np.stack([fine, coarse], axis=1), axis=0)
    return len(pairs) == len(np.unique(fine))


@dataclass(frozen=True, eq=False)
class FiltrationSeq:
    """Partitions ``P_0 .. P_N`` of the leaf set, as per-leaf atom labels."""

    labels: tuple
    kind: str = "natural"

    def __post_init__(self):
        labs = tuple(_canonical(np.asarray(l)) for l in self.labels)
        object.__setattr__(self, "labels", labs)
        n = len(labs[0])
        if any(len(l) != n for l in labs):
            raise ValidationError("partitions cover different leaf sets")
        for k in range(len(labs) - 1):
            if not _refines(labs[k + 1], labs[k]):
                raise ValidationError(f"P_{k + 1} does not refine P_{k}")
        if len(np.unique(labs[-1])) != n:
            raise ValidationError("terminal partition must be singletons")

    @property
    def steps(self) -> int:
        return len(self.labels) - 1

    def n_atoms(self, k: int) -> int:
        return int(self.labels[k].max()) + 1

    def atoms(self, k: int) -> list[np.ndarray]:
        lab = self.labels[k]
        order = np.argsort(lab, kind="stable")
        splits = np.flatnonzero(np.diff(lab[order])) + 1
        return np.split(order, splits)

    def indicator(self, k: int) -> np.ndarray:
        """Leaf-by-atom 0/1 matrix for time ``k``."""
        lab = self.labels[k]
        M = np.zeros((len(lab), self.n_atoms(k)))
        M[np.arange(len(lab)), lab] = 1.0
        return M

    def same_as(self, other: "FiltrationSeq") -> bool:
        return len(self.labels) == len(other.labels) and all(
            np.array_equal(a, b) for a, b in zip(self.labels, other.labels)
        )

    def refines(self, other: "FiltrationSeq") -> bool:
        return all(_refines(a, b) for a, b in zip(self.labels, other.labels))

    def check_against(self, tree: ScenarioTree) -> None:
        """Assert the enlargement invariants relative to the tree's natural filtration."""
        if self.steps != tree.steps or len(self.labels[0]) != tree.n_leaves:
            raise ValidationError("filtration does not match the tree")
        nat = tree.ancestors
        for k, lab in enumerate(self.labels):
            if not _refines(lab, nat[:, k]):
                raise ValidationError(f"P_{k} does not refine the natural partition at depth {k}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "partitions": [l.tolist() for l in self.labels]}

    @classmethod
    def from_json(cls, data: Mapping) -> "FiltrationSeq":
        return cls(tuple(np.asarray(p, dtype=np.int64) for p in data["partitions"]), data.get("kind", "enlarged"))


def natural_filtration(tree: ScenarioTree) -> FiltrationSeq:
    return FiltrationSeq(tuple(tree.ancestors[:, k] for k in range(tree.steps + 1)), "natural")


@dataclass(frozen=True, eq=False)
class AtomLabeling:
    """Finite labeling of the leaves with class probabilities under ``leaf_prob``.

    Classes of zero probability are dropped and labels re-indexed ``0..m-1``.
    """

    label: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_labels(cls, labels: Sequence, leaf_prob: np.ndarray) -> "AtomLabeling":
        labels = np.asarray(labels)
        if len(labels) != len(leaf_prob):
            raise ValidationError("labels must cover every leaf")
        canon = _canonical(labels)
        probs = np.bincount(canon, weights=leaf_prob)
        keep = probs > 0
        # zero-mass classes only contain zero-mass leaves; fold them into class 0
        remap = np.cumsum(keep) - 1
        lab = np.where(keep[canon], remap[canon], 0)
        probs = probs[keep]
        if len(probs) > 64:
            raise ValidationError("at most 64 label classes are supported")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValidationError("class probabilities do not sum to 1")
        return cls(lab.astype(np.int64), probs)

    @property
    def m(self) -> int:
        return len(self.probs)


def sign_labels(tree: ScenarioTree) -> np.ndarray:
    """Terminal-sign labeling; a terminal value of 0 goes to the positive class."""
    terminal = tree.value[tree.leaves]
    return np.where(terminal >= -1e-12, 0, 1)


def terminal_value_labels(tree: ScenarioTree, decimals: int = 9) -> np.ndarray:
    """Label each leaf by its (rounded) terminal value."""
    return _canonical(np.round(tree.value[tree.leaves], decimals))


def enlarge_initial(F: FiltrationSeq, L: AtomLabeling | Sequence[int]) -> FiltrationSeq:
    """``G_k`` atoms are ``F_k`` atoms intersected with the label classes."""
    lab = L.label if isinstance(L, AtomLabeling) else np.asarray(L)
    if len(lab) != len(F.labels[0]):
        raise ValidationError("labeling is defined on a different leaf set")
    parts = []
    for f in F.labels:
        parts.append(_canonical(f * (int(lab.max()) + 1) + lab))
    return FiltrationSeq(tuple(parts), "enlarged")


def enlarge_progressive(F: FiltrationSeq, tau: Sequence[int]) -> FiltrationSeq:
    """``G_k = F_k`` joined with ``sigma(min(tau, k))``."""
    tau = np.asarray(tau, dtype=np.int64)
    if len(tau) != len(F.labels[0]):
        raise ValidationError("tau is defined on a different leaf set")
    N = F.steps
    parts = []
    for k, f in enumerate(F.labels):
        parts.append(_canonical(f * (N + 2) + np.minimum(tau, k)))
    return FiltrationSeq(tuple(parts), "enlarged")


def full_information(tree: ScenarioTree) -> FiltrationSeq:
    """Every leaf revealed from time 0."""
    ident = np.arange(tree.n_leaves)
    return FiltrationSeq(tuple(ident for _ in range(tree.steps + 1)), "enlarged")


def last_zero_time(tree: ScenarioTree, tol: float = 1e-12) -> np.ndarray:
    """Index of the last step at which each leaf path sits at 0."""
    paths = tree.leaf_paths
    at_zero = np.abs(paths) <= tol
    N = tree.steps
    # at_zero[:, 0] is always true
    return N - np.argmax(at_zero[:, ::-1], axis=1)


def first_hitting_time(tree: ScenarioTree, level: float = 0.0, start: int = 1, tol: float = 1e-12) -> np.ndarray:
    """First step ``>= start`` at which the path hits ``level`` (``N`` if never)."""
    paths = tree.leaf_paths[:, start:]
    hit = np.abs(paths - level) <= tol
    N = tree.steps
    return np.where(hit.any(axis=1), start + np.argmax(hit, axis=1), N)
