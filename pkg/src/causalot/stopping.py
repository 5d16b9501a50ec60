"""Optimal stopping on scenario trees under different filtrations.

Payoffs are minimized. A payoff is a leafwise table ``ell[k, x]`` that must be
constant on the natural depth-``k`` atoms (it may only look at the path up to
``k``). Randomized stopping times are cumulative stopping-mass tables
``sigma[k, x]`` with mass allowed at ``k = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .causal_lp import MASS_TOL, Coupling, check_causality, solve_bicausal, solve_causal
from .costs import CostSpec
from .pathspace import FiltrationSeq, ScenarioTree, ValidationError, natural_filtration
from .simplex import LPProblem, SolverError, coo_to_csc, solve_lp

SLACK = 1e-9


def _is_adapted(table: np.ndarray, H: FiltrationSeq, tol: float = 1e-12) -> bool:
    for k, lab in enumerate(H.labels):
        row = table[k]
        lo = np.full(H.n_atoms(k), np.inf)
        hi = np.full(H.n_atoms(k), -np.inf)
        np.minimum.at(lo, lab, row)
        np.maximum.at(hi, lab, row)
        if np.any(hi - lo > tol):
            return False
    return True


def _cond_mean(values: np.ndarray, lab: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Atom-wise weighted mean broadcast back to leaves, plus the atom masses per leaf."""
    mass = np.bincount(lab, weights=w)
    s = np.bincount(lab, weights=w * values)
    mean = np.divide(s, mass, out=np.zeros_like(s), where=mass > MASS_TOL)
    return mean[lab], mass[lab]


@dataclass
class Payoff:
    """Leafwise payoff table ``ell[k, x]`` with a declared sup-norm Lipschitz constant."""

    ell: np.ndarray
    K: float
    name: str = "table"

    def check(self, tree: ScenarioTree, samples: int = 1000, seed: int = 0) -> None:
        """Validate adaptedness and spot-check the Lipschitz constant on random leaf pairs."""
        ell = np.asarray(self.ell, dtype=float)
        if ell.shape != (tree.steps + 1, tree.n_leaves):
            raise ValidationError(f"payoff shape {ell.shape} does not match the tree")
        if not _is_adapted(ell, natural_filtration(tree)):
            raise ValidationError("payoff must depend on the path up to time k only")
        rng = np.random.default_rng(seed)
        P = tree.leaf_paths
        a = rng.integers(0, tree.n_leaves, samples)
        b = rng.integers(0, tree.n_leaves, samples)
        d = np.abs(P[a] - P[b]).max(axis=1)
        gap = np.abs(ell[:, a] - ell[:, b]).max(axis=0)
        if np.any(gap > self.K * d + 1e-12):
            raise ValidationError(f"payoff {self.name!r} is not {self.K}-Lipschitz on sampled pairs")


def builtin_payoff(tree: ScenarioTree, name: str) -> Payoff:
    """``neg_running_max``: -max_{j<=k} w_j; ``terminal_abs``: |w_k|; ``neg_positive_part``: -(w_k)^+."""
    P = tree.leaf_paths.T
    if name == "neg_running_max":
        return Payoff(-np.maximum.accumulate(P, axis=0), 1.0, name)
    if name == "terminal_abs":
        return Payoff(np.abs(P), 1.0, name)
    if name == "neg_positive_part":
        return Payoff(-np.maximum(P, 0.0), 1.0, name)
    raise ValidationError(f"unknown payoff {name!r}")


def time_payoff(tree: ScenarioTree) -> Payoff:
    """``ell(k) = k dt`` (stopping immediately is optimal)."""
    ell = np.repeat((np.arange(tree.steps + 1) * tree.dt)[:, None], tree.n_leaves, axis=1)
    return Payoff(ell, 0.0, "time")


@dataclass
class RandStopTime:
    """Cumulative stopping mass ``sigma[k, x]``, nondecreasing in ``k``, ending at 1."""

    sigma: np.ndarray
    H: FiltrationSeq

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        s = self.sigma
        if s.shape != (self.H.steps + 1, len(self.H.labels[0])):
            raise ValidationError("stopping table does not match the filtration")
        if np.any(s < -1e-12) or np.any(s > 1 + 1e-12):
            raise ValidationError("stopping mass outside [0, 1]")
        if np.any(np.diff(s, axis=0) < -1e-12):
            raise ValidationError("stopping mass must be nondecreasing")
        if np.abs(s[-1] - 1.0).max() > 1e-9:
            raise ValidationError("stopping mass must end at 1")
        if not _is_adapted(s, self.H, 1e-10):
            raise ValidationError("stopping mass is not adapted")

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.sigma, axis=0, prepend=0.0)

    @classmethod
    def pure(cls, tau: np.ndarray, H: FiltrationSeq) -> "RandStopTime":
        N = H.steps
        tau = np.asarray(tau)
        return cls((np.arange(N + 1)[:, None] >= tau[None, :]).astype(float), H)

    def evaluate(self, ell: np.ndarray, nu: np.ndarray) -> float:
        return float(np.sum(nu * np.sum(ell * self.increments, axis=0)))


def random_rst(H: FiltrationSeq, rng: np.random.Generator) -> RandStopTime:
    """Random adapted stopping mass: atom-wise Beta hazards, forced stop at ``N``."""
    N = H.steps
    n = len(H.labels[0])
    sigma = np.zeros((N + 1, n))
    surv = np.ones(n)
    for k in range(N + 1):
        if k == N:
            haz = np.ones(n)
        else:
            haz = rng.beta(0.7, 0.7, H.n_atoms(k))[H.labels[k]]
            haz[rng.random(H.n_atoms(k))[H.labels[k]] < 0.2] = 0.0
        stop = surv * haz
        sigma[k] = (sigma[k - 1] if k else 0.0) + stop
        surv = surv - stop
    sigma[-1] = 1.0
    return RandStopTime(np.minimum(sigma, 1.0), H)


@dataclass
class StoppingResult:
    value: float
    stop: np.ndarray  # stop[k, x]: stopping region
    tau: np.ndarray  # first entry time of the region per leaf


def optimal_stopping(tree: ScenarioTree, H: FiltrationSeq, payoff: Payoff | np.ndarray, nu=None) -> StoppingResult:
    """Backward induction over ``H`` atoms; ties stop."""
    ell = np.asarray(payoff.ell if isinstance(payoff, Payoff) else payoff, dtype=float)
    nu = tree.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    N = tree.steps
    stop = np.zeros((N + 1, tree.n_leaves), dtype=bool)
    stop[N] = True
    V = ell[N].copy()
    for k in range(N - 1, -1, -1):
        cont, mass = _cond_mean(V, H.labels[k], nu)
        # atoms without mass stop
        s = (ell[k] <= cont) | (mass <= MASS_TOL)
        stop[k] = s
        V = np.where(s, ell[k], cont)
    tau = np.argmax(stop, axis=0)
    return StoppingResult(float(nu @ V), stop, tau)


def rst_lp_value(tree: ScenarioTree, H: FiltrationSeq, payoff: Payoff | np.ndarray, nu=None) -> float:
    """Minimal expected payoff over randomized ``H``-stopping times, as an LP.

    Variables are the stopping increments on each ``H_k`` atom; each leaf of
    positive mass must receive total mass one.
    """
    ell = np.asarray(payoff.ell if isinstance(payoff, Payoff) else payoff, dtype=float)
    nu = tree.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    N = tree.steps
    live = np.flatnonzero(nu > MASS_TOL)
    rows, cols, c = [], [], []
    offset = 0
    for k in range(N + 1):
        lab = H.labels[k]
        na = H.n_atoms(k)
        mass = np.bincount(lab, weights=nu, minlength=na)
        val = np.zeros(na)
        val[lab] = ell[k]
        c.append(mass * val)
        rows.append(np.arange(len(live)))
        cols.append(offset + lab[live])
        offset += na
    A = coo_to_csc(np.concatenate(rows), np.concatenate(cols), np.ones(sum(len(r) for r in rows)), (len(live), offset))
    sol = solve_lp(LPProblem(np.concatenate(c), A, np.ones(len(live))))
    if sol.status != "optimal":
        raise SolverError(f"stopping LP ended with status {sol.status}")
    return sol.value


def project_rst(pi: Coupling, sigma: RandStopTime, F: FiltrationSeq | None = None, tol: float = 1e-8) -> RandStopTime:
    """Source-adapted stopping mass with increments ``E^pi[dSigma_k | F_k]``.

    ``pi`` must be causal from ``(source, F)`` to ``(target, sigma.H)``.
    """
    F = natural_filtration(pi.treeX) if F is None else F
    res = check_causality(pi, F, sigma.H)
    if res > tol:
        raise ValidationError(f"coupling is not causal (residual {res:.2e})")
    mu = pi.mu
    inc = sigma.increments  # (N+1, ny)
    flow = inc @ pi.pi.T  # E^pi[dSigma_k ; x] * mu(x), shape (N+1, nx)
    out = np.zeros_like(flow)
    for k in range(F.steps + 1):
        lab = F.labels[k]
        mass = np.bincount(lab, weights=mu)
        s = np.bincount(lab, weights=flow[k])
        out[k] = np.divide(s, mass, out=np.zeros_like(s), where=mass > MASS_TOL)[lab]
    sig = np.cumsum(out, axis=0)
    sig[-1] = np.where(np.abs(sig[-1] - 1.0) <= 1e-9, 1.0, sig[-1])
    return RandStopTime(np.clip(sig, 0.0, 1.0), F)


def transfer_gap(pi: Coupling, sigma: RandStopTime, projected: RandStopTime, ell: np.ndarray) -> float:
    """``E^mu[sum ell dSigma~] - E^pi[sum ell(x) dSigma(y)]`` for a source-side payoff."""
    lhs = projected.evaluate(ell, pi.mu)
    rhs = float(np.sum(pi.pi * (ell.T @ sigma.increments)))
    return abs(lhs - rhs)


def projection_identity_check(pi: Coupling, Lam: np.ndarray, F: FiltrationSeq | None = None) -> float:
    """Largest gap between optional and dual-optional projections onto the source.

    ``Lam[k, x, y]`` is an adapted process on the product. Compares
    ``E[Lam_k | F_k] - E[Lam_0 | F_0]`` with ``sum_{1<=j<=k} E[Lam_j - Lam_{j-1} | F_j]``.
    """
    F = natural_filtration(pi.treeX) if F is None else F
    Lam = np.asarray(Lam, dtype=float)
    mu = pi.mu

    def proj(Z, k):
        flow = np.sum(pi.pi * Z, axis=1)
        lab = F.labels[k]
        mass = np.bincount(lab, weights=mu)
        s = np.bincount(lab, weights=flow)
        return np.divide(s, mass, out=np.zeros_like(s), where=mass > MASS_TOL)[lab]

    base = proj(Lam[0], 0)
    dual = np.zeros(len(mu))
    worst = 0.0
    live = mu > MASS_TOL
    for k in range(1, F.steps + 1):
        dual = dual + proj(Lam[k] - Lam[k - 1], k)
        opt = proj(Lam[k], k) - base
        worst = max(worst, float(np.abs(opt - dual)[live].max()))
    return worst


@dataclass
class BoundReport:
    v_small: float
    v_large: float
    transport: float
    K: float
    difference: float
    holds: bool

    def to_json(self) -> dict:
        return {
            "v_small": self.v_small,
            "v_large": self.v_large,
            "difference": self.difference,
            "transport": self.transport,
            "K": self.K,
            "bound": self.K * self.transport,
            "pass": self.holds,
        }


def value_of_info_stopping(tree: ScenarioTree, F: FiltrationSeq, G: FiltrationSeq, payoff: Payoff, nu=None,
                           check_sign: bool = True) -> BoundReport:
    """``0 <= v^F - v^G <= K inf_causal E^pi[sup distance]``, same measure on both sides."""
    payoff.check(tree)
    vF = optimal_stopping(tree, F, payoff, nu).value
    vG = optimal_stopping(tree, G, payoff, nu).value
    w, _, _ = solve_causal(tree, F, tree, G, CostSpec("sup"), mu=nu, nu=nu, formulation="pairs")
    diff = vF - vG
    ok = diff <= payoff.K * w + SLACK
    if check_sign:
        ok = ok and diff >= -SLACK
    return BoundReport(vF, vG, w, payoff.K, diff, bool(ok))


def model_sensitivity_stopping(tree: ScenarioTree, F: FiltrationSeq, mu: np.ndarray, nu: np.ndarray,
                               payoff: Payoff) -> BoundReport:
    """``|v^{F,mu} - v^{F,nu}| <= K * bicausal distance`` under the sup metric."""
    payoff.check(tree)
    v_mu = optimal_stopping(tree, F, payoff, mu).value
    v_nu = optimal_stopping(tree, F, payoff, nu).value
    w, _, _ = solve_bicausal(tree, F, tree, F, CostSpec("sup"), mu=mu, nu=nu)
    diff = v_mu - v_nu
    return BoundReport(v_mu, v_nu, w, payoff.K, diff, bool(abs(diff) <= payoff.K * w + SLACK))


def all_pure_values(tree: ScenarioTree, H: FiltrationSeq, payoff: Payoff | np.ndarray, nu=None) -> float:
    """Minimum over every pure ``H``-stopping time, by exhaustive enumeration (small trees only)."""
    ell = np.asarray(payoff.ell if isinstance(payoff, Payoff) else payoff, dtype=float)
    nu = tree.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    N = tree.steps
    best = np.inf
    # decision per (k, atom) for k < N: stop or continue; the value of a rule is linear
    # in those decisions, so enumerate them all
    slots = [(k, a) for k in range(N) for a in range(H.n_atoms(k))]
    if len(slots) > 20:
        raise ValidationError("too many atoms to enumerate")
    for mask in range(2 ** len(slots)):
        decide = {s: (mask >> i) & 1 for i, s in enumerate(slots)}
        tau = np.full(tree.n_leaves, N)
        for x in range(tree.n_leaves):
            for k in range(N):
                if decide[(k, H.labels[k][x])]:
                    tau[x] = k
                    break
        best = min(best, float(nu @ ell[tau, np.arange(tree.n_leaves)]))
    return best
