"""Causal, bicausal and classical transport between scenario trees.

A coupling ``pi[x, y]`` of a source tree (leaf measure ``mu``, natural
filtration ``F``) and a target tree (leaf measure ``nu``, filtration ``G``) is
causal when, for every step ``k`` and every ``G_k`` atom ``A``, the kernel mass
``pi(x, A) / mu(x)`` is constant on each ``F_k`` atom of the source.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .costs import PAIR_CAP, CostSpec, Rho, cost_matrix
from .pathspace import CapacityError, FiltrationSeq, ScenarioTree, ValidationError, natural_filtration
from .simplex import LPProblem, LPSolution, SolverError, coo_to_csc, solve_lp

MASS_TOL = 1e-14
MARGINAL_TOL = 1e-7


@dataclass
class ConstraintSet:
    """Representative-paired equalities ``mu(x0) pi(x, A) - mu(x) pi(x0, A) = 0``.

    ``k``, ``atom`` index the target atom ``A`` (an atom of ``labels[k]``);
    ``x`` and ``x0`` are source leaves in a common source atom, and ``amass``
    is that source atom's mass.
    """

    k: np.ndarray
    atom: np.ndarray
    x: np.ndarray
    x0: np.ndarray
    amass: np.ndarray
    labels: tuple  # target partition labels per k

    def __len__(self) -> int:
        return len(self.k)

    def residuals(self, pi: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """Raw residuals of every equality under ``pi`` (rows: source leaves)."""
        out = np.zeros(len(self))
        for k in np.unique(self.k):
            sel = self.k == k
            lab = self.labels[k]
            PA = np.zeros((pi.shape[0], int(lab.max()) + 1))
            np.add.at(PA.T, lab, pi.T)
            x, x0, A = self.x[sel], self.x0[sel], self.atom[sel]
            out[sel] = mu[x0] * PA[x, A] - mu[x] * PA[x0, A]
        return out


def _paired(src_labels, tgt_labels, mu, nu, steps) -> ConstraintSet:
    ks, atoms, xs, x0s, amass = [], [], [], [], []
    pos_tgt = nu > MASS_TOL
    for k in range(steps):
        tl = tgt_labels[k]
        tgt_mass = np.bincount(tl, weights=nu)
        live_atoms = np.flatnonzero(tgt_mass > MASS_TOL)
        # the whole target set gives a marginal identity, not a constraint
        if len(np.unique(tl[pos_tgt])) <= 1:
            continue
        sl = src_labels[k]
        order = np.argsort(sl, kind="stable")
        sl_sorted = sl[order]
        starts = np.flatnonzero(np.r_[True, sl_sorted[1:] != sl_sorted[:-1]])
        for s, e in zip(starts, np.r_[starts[1:], len(order)]):
            members = order[s:e]
            members = members[mu[members] > MASS_TOL]
            if len(members) < 2:
                continue
            x0, rest = members[0], members[1:]
            m_a = mu[members].sum()
            for A in live_atoms:
                ks.append(np.full(len(rest), k))
                atoms.append(np.full(len(rest), A))
                xs.append(rest)
                x0s.append(np.full(len(rest), x0))
                amass.append(np.full(len(rest), m_a))
    cat = lambda parts: np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)
    return ConstraintSet(
        cat(ks), cat(atoms), cat(xs), cat(x0s),
        np.concatenate(amass) if amass else np.zeros(0),
        tuple(np.asarray(l) for l in tgt_labels),
    )


def causality_constraints(treeX: ScenarioTree, F: FiltrationSeq, treeY: ScenarioTree, G: FiltrationSeq,
                          mu: np.ndarray | None = None, nu: np.ndarray | None = None) -> ConstraintSet:
    """Linear equalities characterizing causality from ``(treeX, F)`` to ``(treeY, G)``."""
    mu = treeX.leaf_prob if mu is None else np.asarray(mu, dtype=float)
    nu = treeY.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    if F.steps != G.steps:
        raise ValidationError("filtrations have different horizons")
    return _paired(F.labels, G.labels, mu, nu, F.steps)


@dataclass
class Coupling:
    pi: np.ndarray
    treeX: ScenarioTree = field(repr=False)
    treeY: ScenarioTree = field(repr=False)
    mu: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)
    marginal_residual: float = 0.0
    causality_residual: float = float("nan")

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.marginal_residual = float(
            max(np.abs(self.pi.sum(1) - self.mu).max(), np.abs(self.pi.sum(0) - self.nu).max())
        )

    def expect(self, c: np.ndarray) -> float:
        return float(np.sum(self.pi * c))

    def transpose(self) -> "Coupling":
        return Coupling(self.pi.T.copy(), self.treeY, self.treeX, self.nu, self.mu)

    def triples(self, tol: float = 0.0) -> list:
        xs, ys = np.nonzero(self.pi > tol)
        return [[int(a), int(b), float(self.pi[a, b])] for a, b in zip(xs, ys)]


def product_coupling(treeX: ScenarioTree, treeY: ScenarioTree, mu=None, nu=None) -> Coupling:
    mu = treeX.leaf_prob if mu is None else np.asarray(mu, dtype=float)
    nu = treeY.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    return Coupling(np.outer(mu, nu), treeX, treeY, mu, nu)


def identity_coupling(tree: ScenarioTree, mu=None) -> Coupling:
    mu = tree.leaf_prob if mu is None else np.asarray(mu, dtype=float)
    return Coupling(np.diag(mu), tree, tree, mu, mu)


def kernel_residual(pi: np.ndarray, mu: np.ndarray, F: FiltrationSeq, G: FiltrationSeq) -> float:
    """Largest spread of ``pi(x, A) / mu(x)`` over pairs of leaves in a common ``F_k`` atom.

    Direct all-pairs evaluation of the kernel definition, independent of the
    constraint generator.
    """
    pos = mu > MASS_TOL
    worst = 0.0
    for k in range(F.steps):
        lab = G.labels[k]
        PA = np.zeros((pi.shape[0], int(lab.max()) + 1))
        np.add.at(PA.T, lab, pi.T)
        kern = PA[pos] / mu[pos, None]
        fl = F.labels[k][pos]
        for a in np.unique(fl):
            block = kern[fl == a]
            worst = max(worst, float((block.max(0) - block.min(0)).max()))
    return worst


def check_causality(pi: Coupling | np.ndarray, F: FiltrationSeq, G: FiltrationSeq,
                    mu: np.ndarray | None = None, nu: np.ndarray | None = None) -> float:
    """Max violation of the causality equalities, each divided by its source-atom mass."""
    if isinstance(pi, Coupling):
        mu, nu, pi = pi.mu, pi.nu, pi.pi
    pi = np.asarray(pi, dtype=float)
    if mu is None or nu is None:
        raise ValidationError("marginals are required for a raw matrix")
    if max(np.abs(pi.sum(1) - mu).max(), np.abs(pi.sum(0) - nu).max()) > MARGINAL_TOL:
        raise ValidationError("coupling marginals do not match")
    cons = _paired(F.labels, G.labels, mu, nu, F.steps)
    if len(cons) == 0:
        return 0.0
    return float(np.max(np.abs(cons.residuals(pi, mu)) / cons.amass))


# ---------------------------------------------------------------------------
# pair formulation


def _assemble(C, mu, nu, families):
    """LP over pruned leaf pairs; ``families`` are (ConstraintSet, transposed?)."""
    ix = np.flatnonzero(mu > MASS_TOL)
    iy = np.flatnonzero(nu > MASS_TOL)
    nx, ny = len(ix), len(iy)
    posx = np.full(len(mu), -1)
    posx[ix] = np.arange(nx)
    posy = np.full(len(nu), -1)
    posy[iy] = np.arange(ny)
    n = nx * ny
    var = np.arange(n).reshape(nx, ny)
    rows = [np.repeat(np.arange(nx), ny), nx + np.tile(np.arange(ny), nx)]
    cols = [var.ravel(), var.ravel()]
    vals = [np.ones(n), np.ones(n)]
    b = [mu[ix], nu[iy]]
    r0 = nx + ny
    blocks = []
    for cons, transposed in families:
        src_w = nu if transposed else mu
        src_pos, tgt_pos = (posy, posx) if transposed else (posx, posy)
        count = 0
        for i in range(len(cons)):
            k, A, x, x0 = cons.k[i], cons.atom[i], cons.x[i], cons.x0[i]
            tgt = np.flatnonzero(cons.labels[k] == A)
            tgt = tgt_pos[tgt]
            tgt = tgt[tgt >= 0]
            for s, w in ((x, src_w[x0]), (x0, -src_w[x])):
                v = var[src_pos[s], tgt] if not transposed else var[tgt, src_pos[s]]
                rows.append(np.full(len(v), r0 + count))
                cols.append(v)
                vals.append(np.full(len(v), w))
            count += 1
        blocks.append((r0, count))
        r0 += count
        b.append(np.zeros(count))
    A = coo_to_csc(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (r0, n))
    return LPProblem(C[np.ix_(ix, iy)].ravel(), A, np.concatenate(b)), ix, iy, blocks


def _solve_pairs(treeX, treeY, C, mu, nu, families):
    prob, ix, iy, blocks = _assemble(C, mu, nu, families)
    sol = solve_lp(prob)
    if sol.status != "optimal":
        raise SolverError(f"transport LP ended with status {sol.status}")
    pi = np.zeros((len(mu), len(nu)))
    pi[np.ix_(ix, iy)] = sol.x.reshape(len(ix), len(iy))
    sol.meta = {
        "formulation": "pairs", "ix": ix, "iy": iy, "blocks": blocks, "families": families,
        "C": C, "mu": mu, "nu": nu,
    }
    return sol.value, pi, sol


def _point_mass(v):
    pos = np.flatnonzero(v > MASS_TOL)
    return len(pos) == 1


def _check_pair_cap(treeX, treeY):
    if treeX.n_leaves * treeY.n_leaves > PAIR_CAP:
        raise CapacityError("leaf-pair count exceeds the dense cap")


def _finish(value, pi, sol, treeX, treeY, mu, nu, F, G, both=False):
    cp = Coupling(pi, treeX, treeY, mu, nu)
    res = check_causality(cp, F, G)
    if both:
        res = max(res, check_causality(cp.transpose(), G, F))
    cp.causality_residual = res
    return value, cp, sol


def solve_classical(treeX, treeY, cost: CostSpec | np.ndarray, mu=None, nu=None):
    """Unconstrained optimal transport between the leaf measures."""
    mu = treeX.leaf_prob if mu is None else np.asarray(mu, dtype=float)
    nu = treeY.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    _check_pair_cap(treeX, treeY)
    C = cost if isinstance(cost, np.ndarray) else cost_matrix(treeX, treeY, cost)
    value, pi, sol = _solve_pairs(treeX, treeY, C, mu, nu, [])
    return value, Coupling(pi, treeX, treeY, mu, nu), sol


def solve_causal(treeX: ScenarioTree, F: FiltrationSeq, treeY: ScenarioTree, G: FiltrationSeq,
                 cost: CostSpec | np.ndarray, *, mu=None, nu=None, formulation: str = "auto"):
    """Minimal expected cost over causal couplings.

    ``formulation`` is ``pairs`` (LP over leaf pairs with the causality
    equalities), ``local`` (exact stepwise decomposition, valid when the source
    has the same step law at every node of a given depth, ``F`` is its natural
    filtration and the cost is separable across steps) or ``auto`` (pairs up to
    1024 leaf pairs, otherwise local when valid).
    """
    mu = treeX.leaf_prob if mu is None else np.asarray(mu, dtype=float)
    nu = treeY.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    if formulation == "auto":
        small = treeX.n_leaves * treeY.n_leaves <= 1024
        formulation = "pairs" if small or not local_eligible(treeX, F, cost, mu) else "local"
    if formulation == "local":
        if not local_eligible(treeX, F, cost, mu):
            raise ValidationError("local formulation needs an i.i.d.-step source and a separable cost")
        return _solve_local(treeX, treeY, G, cost, mu, nu, F)
    if formulation != "pairs":
        raise ValidationError(f"unknown formulation {formulation!r}")
    _check_pair_cap(treeX, treeY)
    C = cost if isinstance(cost, np.ndarray) else cost_matrix(treeX, treeY, cost)
    if _point_mass(mu) or _point_mass(nu):
        pi = np.outer(mu, nu)
        sol = LPSolution("optimal", float(np.sum(pi * C)), pi.ravel(), np.zeros(0), 0, float(np.sum(pi * C)), 0.0, 0.0)
        sol.meta = {"formulation": "degenerate"}
        return _finish(sol.value, pi, sol, treeX, treeY, mu, nu, F, G)
    cons = _paired(F.labels, G.labels, mu, nu, F.steps)
    value, pi, sol = _solve_pairs(treeX, treeY, C, mu, nu, [(cons, False)])
    return _finish(value, pi, sol, treeX, treeY, mu, nu, F, G)


def solve_bicausal(treeX: ScenarioTree, F: FiltrationSeq, treeY: ScenarioTree, G: FiltrationSeq,
                   cost: CostSpec | np.ndarray, *, mu=None, nu=None):
    """Minimal expected cost over couplings causal in both directions."""
    mu = treeX.leaf_prob if mu is None else np.asarray(mu, dtype=float)
    nu = treeY.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    _check_pair_cap(treeX, treeY)
    C = cost if isinstance(cost, np.ndarray) else cost_matrix(treeX, treeY, cost)
    fwd = _paired(F.labels, G.labels, mu, nu, F.steps)
    rev = _paired(G.labels, F.labels, nu, mu, F.steps)
    value, pi, sol = _solve_pairs(treeX, treeY, C, mu, nu, [(fwd, False), (rev, True)])
    return _finish(value, pi, sol, treeX, treeY, mu, nu, F, G, both=True)


# ---------------------------------------------------------------------------
# stepwise decomposition


def step_laws(tree: ScenarioTree, mu=None, tol: float = 1e-12):
    """Common one-step law per depth, or ``None`` if some depth has two laws.

    Returns a list of ``(increments, probabilities)`` pairs.
    """
    if mu is not None and not np.allclose(mu, tree.leaf_prob, atol=tol, rtol=0):
        return None
    laws = []
    for k in range(tree.steps):
        law = None
        for v in tree.nodes_at(k):
            kids = np.array(tree.children[v])
            order = np.argsort(tree.incr[kids])
            this = (tree.incr[kids][order], tree.prob[kids][order])
            if law is None:
                law = this
            elif len(law[0]) != len(this[0]) or np.abs(law[0] - this[0]).max() > tol or np.abs(law[1] - this[1]).max() > tol:
                return None
        laws.append(law)
    return laws


def local_eligible(treeX: ScenarioTree, F: FiltrationSeq, cost, mu=None) -> bool:
    if not isinstance(cost, CostSpec) or not cost.separable:
        return False
    if not F.same_as(natural_filtration(treeX)):
        return False
    return step_laws(treeX, mu) is not None


def _atom_children(treeY: ScenarioTree, G: FiltrationSeq, nu, k):
    """For each ``G_k`` atom: its mass, and the masses and step increments of its ``G_{k+1}`` children."""
    lab, nxt = G.labels[k], G.labels[k + 1]
    inc = treeY.leaf_increments[:, k]
    mass_k = np.bincount(lab, weights=nu, minlength=G.n_atoms(k))
    mass_n = np.bincount(nxt, weights=nu, minlength=G.n_atoms(k + 1))
    parent_of = np.zeros(G.n_atoms(k + 1), dtype=np.int64)
    parent_of[nxt] = lab
    inc_of = np.zeros(G.n_atoms(k + 1))
    inc_of[nxt] = inc
    kids = [[] for _ in range(G.n_atoms(k))]
    for c in range(G.n_atoms(k + 1)):
        kids[parent_of[c]].append(c)
    return mass_k, mass_n, inc_of, kids


def _small_ot(p, q, C):
    """Classical OT between two short probability vectors via the simplex."""
    m, n = len(p), len(q)
    rows = np.r_[np.repeat(np.arange(m), n), m + np.tile(np.arange(n), m)]
    cols = np.r_[np.arange(m * n), np.arange(m * n)]
    A = coo_to_csc(rows, cols, np.ones(2 * m * n), (m + n, m * n))
    sol = solve_lp(LPProblem(C.ravel(), A, np.r_[p, q]))
    if sol.status != "optimal":
        raise SolverError(f"step OT ended with status {sol.status}")
    return sol.value, sol.x.reshape(m, n), sol


def _solve_local(treeX, treeY, G, cost: CostSpec, mu, nu, F):
    laws = step_laws(treeX)
    N = treeX.steps
    dt = treeX.dt
    total = 0.0
    dual_total = 0.0
    iters = 0
    gap = 0.0
    # joint mass over (source node at depth k, G_k atom)
    nodes_k = treeX.nodes_at(0)
    M = np.zeros((1, G.n_atoms(0)))
    M[0] = np.bincount(G.labels[0], weights=nu, minlength=G.n_atoms(0))
    for k in range(N):
        incs, probs = laws[k]
        mass_k, mass_n, inc_of, kids = _atom_children(treeY, G, nu, k)
        nodes_n = treeX.nodes_at(k + 1)
        pos_n = {v: i for i, v in enumerate(nodes_n)}
        M_next = np.zeros((len(nodes_n), G.n_atoms(k + 1)))
        # child of each source node indexed by step-law position
        child_by_law = np.zeros((len(nodes_k), len(incs)), dtype=np.int64)
        for i, v in enumerate(nodes_k):
            ch = np.array(treeX.children[v])
            child_by_law[i] = [pos_n[c] for c in ch[np.argsort(treeX.incr[ch])]]
        for g, ch in enumerate(kids):
            if mass_k[g] <= MASS_TOL or not ch:
                continue
            ch = np.array(ch)
            q = mass_n[ch] / mass_k[g]
            Cg = cost.step(incs[:, None], inc_of[ch][None, :], dt)
            val, P, sol = _small_ot(probs, q, Cg)
            total += mass_k[g] * val
            dual_total += mass_k[g] * sol.dual_value
            iters += sol.iterations
            gap = max(gap, sol.duality_gap)
            for a in range(len(incs)):
                M_next[np.ix_(child_by_law[:, a], ch)] += M[:, g, None] * P[a][None, :]
        M = M_next
        nodes_k = nodes_n
    # G_N atoms are single target leaves; source nodes at depth N are leaves
    leaf_pos = {v: i for i, v in enumerate(treeX.leaves)}
    atom_leaf = np.zeros(G.n_atoms(N), dtype=np.int64)
    atom_leaf[G.labels[N]] = np.arange(treeY.n_leaves)
    pi = np.zeros((treeX.n_leaves, treeY.n_leaves))
    for i, v in enumerate(nodes_k):
        pi[leaf_pos[v], atom_leaf] += M[i]
    sol = LPSolution("optimal", total, np.zeros(0), np.zeros(0), iters, dual_total, 0.0, 0.0)
    sol.meta = {"formulation": "local", "max_subproblem_gap": gap}
    return _finish(total, pi, sol, treeX, treeY, mu, nu, F, G)


# ---------------------------------------------------------------------------
# dual certificate


@dataclass
class DualCertificate:
    psi: np.ndarray  # per target leaf
    phi: np.ndarray  # per source leaf
    multipliers: np.ndarray  # one per causality equality
    h: np.ndarray  # (source leaf, target leaf) test function
    value: float
    inequality_residual: float
    value_residual: float


def lp_dual_certificate(sol: LPSolution, tol: float = 1e-8) -> DualCertificate:
    """Regroup LP duals into a target potential ``psi`` and a test function ``h``.

    With row duals ``phi``, column duals ``psi0`` and multipliers ``lam`` on the
    causality rows, ``psi = psi0 + E_mu[phi]`` and
    ``h = E_mu[phi] - phi(x) - sum lam * a(x, y)``. Then ``psi(y) <= c + h``
    on every pair, ``h`` integrates to zero under every causal coupling, and
    ``sum nu psi`` equals the primal value.
    """
    meta = sol.meta
    if sol.status != "optimal" or meta.get("formulation") != "pairs":
        raise ValidationError("certificate needs an optimal pair-formulation solution")
    ix, iy, C, mu, nu = meta["ix"], meta["iy"], meta["C"], meta["mu"], meta["nu"]
    nx, ny = len(ix), len(iy)
    y = sol.y
    phi_p, psi_p = y[:nx], y[nx : nx + ny]
    lam = y[nx + ny :]
    # sum_i lam_i * a_i(x, y) over the pruned pairs
    colptr, rowind, vals, _ = sol.problem.A
    cols = np.repeat(np.arange(nx * ny), np.diff(colptr))
    sel = rowind >= nx + ny
    lam_a = np.bincount(cols[sel], weights=vals[sel] * y[rowind[sel]], minlength=nx * ny).reshape(nx, ny)
    mean_phi = float(mu[ix] @ phi_p)
    phi = np.zeros(len(mu))
    phi[ix] = phi_p
    h = np.zeros((len(mu), len(nu)))
    h[np.ix_(ix, iy)] = mean_phi - phi_p[:, None] - lam_a
    psi = np.full(len(nu), np.nan)
    psi[iy] = psi_p + mean_phi
    slack = (C + h)[np.ix_(ix, iy)] - psi[iy][None, :]
    ineq = float(max(0.0, -slack.min()))
    value = float(nu[iy] @ psi[iy])
    vres = abs(value - sol.value)
    if ineq > tol or vres > tol:
        raise SolverError(f"dual certificate failed: inequality {ineq:.3e}, value {vres:.3e}")
    return DualCertificate(psi, phi, lam, h, value, ineq, vres)


# ---------------------------------------------------------------------------
# nested backward recursion


def separable_matrix(treeX: ScenarioTree, treeY: ScenarioTree, step_cost) -> np.ndarray:
    """Leaf-pair matrix of ``sum_k step_cost(k, u_k, v_k)`` over ancestor node ids."""
    if isinstance(step_cost, CostSpec):
        return cost_matrix(treeX, treeY, step_cost)
    out = np.zeros((treeX.n_leaves, treeY.n_leaves))
    for k in range(1, treeX.steps + 1):
        out += step_cost(k, treeX.ancestors[:, k][:, None], treeY.ancestors[:, k][None, :])
    return out


def _step_cost_fn(step_cost, treeX, treeY):
    if isinstance(step_cost, CostSpec):
        if not step_cost.separable:
            raise ValidationError("nested recursion needs a cost separable across steps")
        dt = treeX.dt
        return lambda k, u, v: step_cost.step(treeX.incr[u], treeY.incr[v], dt)
    if callable(step_cost):
        return step_cost
    raise ValidationError("step cost must be a separable CostSpec or a callable")


def nested_dp(treeX: ScenarioTree, treeY: ScenarioTree, step_cost) -> float:
    """Bicausal value for a stepwise cost by backward recursion over node pairs.

    ``step_cost(k, u, v)`` gives the cost incurred on reaching nodes ``u`` of
    ``treeX`` and ``v`` of ``treeY`` at depth ``k`` (broadcasting over arrays).
    Each node pair solves a classical OT between the two child distributions,
    here with SciPy's HiGHS solver so the recursion is independent of the
    in-house simplex.
    """
    from scipy.optimize import linprog

    if treeX.steps != treeY.steps:
        raise ValidationError("trees have different numbers of steps")
    fn = _step_cost_fn(step_cost, treeX, treeY)
    N = treeX.steps
    V = {}
    xs_next = treeX.nodes_at(N)
    ys_next = treeY.nodes_at(N)
    Vn = np.zeros((len(xs_next), len(ys_next)))
    for k in range(N - 1, -1, -1):
        xs, ys = treeX.nodes_at(k), treeY.nodes_at(k)
        px = {v: i for i, v in enumerate(xs_next)}
        py = {v: i for i, v in enumerate(ys_next)}
        Vk = np.zeros((len(xs), len(ys)))
        for i, u in enumerate(xs):
            cu = np.array(treeX.children[u])
            for j, v in enumerate(ys):
                cv = np.array(treeY.children[v])
                C = np.asarray(fn(k + 1, cu[:, None], cv[None, :]), dtype=float) + Vn[np.ix_([px[a] for a in cu], [py[b] for b in cv])]
                p, q = treeX.prob[cu], treeY.prob[cv]
                m, n = len(p), len(q)
                A = np.zeros((m + n, m * n))
                for a in range(m):
                    A[a, a * n : (a + 1) * n] = 1.0
                for b in range(n):
                    A[m + b, b::n] = 1.0
                res = linprog(C.ravel(), A_eq=A, b_eq=np.r_[p, q], bounds=(0, None), method="highs")
                if res.status != 0:
                    raise SolverError(f"nested step OT failed: {res.message}")
                Vk[i, j] = res.fun
        Vn, xs_next, ys_next = Vk, xs, ys
    return float(Vn[0, 0])


# ---------------------------------------------------------------------------
# information drift


@dataclass
class DriftField:
    """Conditional mean increment per unit time on every ``G_k`` atom, ``k < N``."""

    alpha: list  # alpha[k][g]
    mass: list  # mass[k][g]
    dt: float
    G: FiltrationSeq = field(repr=False)
    zero_mass: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.alpha)

    def leafwise(self) -> np.ndarray:
        """``alpha`` evaluated along each leaf, shape (n_leaves, N)."""
        return np.stack([self.alpha[k][self.G.labels[k]] for k in range(self.steps)], axis=1)


def drift_field(treeY: ScenarioTree, F_Y: FiltrationSeq | None, G: FiltrationSeq, nu=None) -> DriftField:
    """``alpha(k, g) = sum_{y in g} nu(y) dy_{k+1} / (nu(g) dt)``."""
    nu = treeY.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    if F_Y is not None and not G.refines(F_Y):
        raise ValidationError("G must refine the target's natural filtration")
    inc = treeY.leaf_increments
    alpha, mass, zero = [], [], []
    for k in range(treeY.steps):
        lab = G.labels[k]
        m = np.bincount(lab, weights=nu, minlength=G.n_atoms(k))
        s = np.bincount(lab, weights=nu * inc[:, k], minlength=G.n_atoms(k))
        a = np.zeros_like(m)
        ok = m > MASS_TOL
        a[ok] = s[ok] / (m[ok] * treeY.dt)
        zero.extend((k, int(g)) for g in np.flatnonzero(~ok))
        alpha.append(a)
        mass.append(m)
    return DriftField(alpha, mass, treeY.dt, G, zero)


def refined_dual_value(drift: DriftField, rho: Rho) -> tuple[float, list]:
    """``sum_k sum_g nu(g) rho(alpha) dt`` and the maximizing integrand ``F = rho'(alpha)``.

    Per node the dual integrand maximizes ``alpha F - rho*(F)``, whose optimum
    is ``rho(alpha)`` at ``F = rho'(alpha)``.
    """
    total = 0.0
    Fhat = []
    for a, m in zip(drift.alpha, drift.mass):
        total += float(np.sum(m * rho(a)) * drift.dt)
        Fhat.append(rho.deriv(a))
    return total, Fhat
