"""Constrained log-utility maximization on trees and the value of information.

One asset with return ``b_k dt + sigma dw_{k+1}`` over step ``k + 1``; the
agent invests a fraction ``lambda in [0, 1]`` of wealth. With log utility the
problem splits into independent one-step problems on each atom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .causal_lp import MASS_TOL, drift_field, solve_causal
from .costs import QUADRATIC, CostSpec
from .enlargement import drift_energy, kl_information, partition_entropy
from .pathspace import AtomLabeling, FiltrationSeq, ScenarioTree, ValidationError, enlarge_initial

SLACK = 1e-9
SEARCH_TOL = 1e-10


@dataclass(frozen=True)
class MarketSpec:
    """Drift ``b(k, path) = b_bar * clamp(w_k, -1, 1)`` (Lipschitz constant ``b_bar``)
    and constant volatility ``sigma``."""

    b_bar: float = 0.0
    sigma: float = 1.0
    s0: float = 1.0
    M: float = 0.0
    C1: float = 2.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("volatility must be positive")
        if not self.s0 > 0:
            raise ValidationError("initial price must be positive")
        if self.b_bar < 0:
            raise ValidationError("b_bar is a Lipschitz constant and must be >= 0")

    @property
    def L(self) -> float:
        return self.b_bar

    @property
    def C(self) -> float:
        return abs(self.sigma)

    def drift(self, tree: ScenarioTree) -> np.ndarray:
        """Leafwise drift table ``b[k, x]`` for ``k = 0..N-1``."""
        P = tree.leaf_paths.T[:-1]
        return self.b_bar * np.clip(P, -1.0, 1.0)

    def returns(self, tree: ScenarioTree) -> np.ndarray:
        """Leafwise one-step returns ``R[k, x]`` over step ``k + 1``."""
        R = self.drift(tree) * tree.dt + self.sigma * tree.leaf_increments.T
        if np.any(1.0 + np.minimum(R, 0.0) <= 0.0):
            raise ValidationError("wealth can hit zero: 1 + b dt + sigma dw must stay positive")
        return R

    def prices(self, tree: ScenarioTree) -> np.ndarray:
        """Price paths ``S[k, x]`` of the asset."""
        R = self.returns(tree)
        return self.s0 * np.vstack([np.ones(tree.n_leaves), np.cumprod(1.0 + R, axis=0)])

    @classmethod
    def from_config(cls, cfg: dict) -> "MarketSpec":
        return cls(float(cfg.get("b_bar", 0.0)), float(cfg.get("sigma", 1.0)), float(cfg.get("s0", 1.0)),
                   float(cfg.get("M", 0.0)), float(cfg.get("C1", 2.0)))


@dataclass(frozen=True)
class UtilitySpec:
    """``U = log``; ``F = U o exp`` is the identity, hence 1-Lipschitz."""

    name: str = "log"

    def __post_init__(self):
        if self.name != "log":
            raise ValidationError("only log utility is implemented")

    @property
    def K(self) -> float:
        return 1.0


def info_bound_constant(market: MarketSpec, utility: UtilitySpec = UtilitySpec(), T: float = 1.0,
                        m: int = 1, d: int = 1) -> float:
    """``K (L T m + m^2 d C M T + C m + C1 M sqrt(T d m))``."""
    L, C, M = market.L, market.C, market.M
    return utility.K * (L * T * m + m * m * d * C * M * T + C * m + market.C1 * M * math.sqrt(T * d * m))


def _atom_objective(lam, lab, w, R, mass):
    """Atom-wise ``E[ln(1 + lam R) | atom]`` for a per-atom ``lam``."""
    s = np.bincount(lab, weights=w * np.log1p(lam[lab] * R), minlength=len(mass))
    return np.divide(s, mass, out=np.zeros_like(s), where=mass > MASS_TOL)


def _atom_slope(lam, lab, w, R, mass):
    s = np.bincount(lab, weights=w * R / (1.0 + lam[lab] * R), minlength=len(mass))
    return np.divide(s, mass, out=np.zeros_like(s), where=mass > MASS_TOL)


def maximize_atoms(lab: np.ndarray, w: np.ndarray, R: np.ndarray, n_atoms: int, tol: float = SEARCH_TOL):
    """Per-atom maximizer of the concave map ``lam -> E[ln(1 + lam R) | atom]`` on ``[0, 1]``.

    Ternary search down to a bracket of width ``tol``; endpoints are returned
    exactly when the slope there points outward.
    """
    mass = np.bincount(lab, weights=w, minlength=n_atoms)
    lo = np.zeros(n_atoms)
    hi = np.ones(n_atoms)
    while np.max(hi - lo) > tol:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        f1 = _atom_objective(m1, lab, w, R, mass)
        f2 = _atom_objective(m2, lab, w, R, mass)
        left = f1 < f2
        lo = np.where(left, m1, lo)
        hi = np.where(left, hi, m2)
    lam = 0.5 * (lo + hi)
    zeros, ones = np.zeros(n_atoms), np.ones(n_atoms)
    lam = np.where(_atom_slope(zeros, lab, w, R, mass) <= 0.0, 0.0, lam)
    lam = np.where(_atom_slope(ones, lab, w, R, mass) >= 0.0, 1.0, lam)
    return lam, _atom_objective(lam, lab, w, R, mass), mass


@dataclass
class UtilityResult:
    value: float
    policy: list  # policy[k][atom]


def log_utility_value(tree: ScenarioTree, H: FiltrationSeq, market: MarketSpec, nu=None) -> UtilityResult:
    """``sum_k sum_h nu(h) max_lam E[ln(1 + lam R_{k+1}) | h]`` over ``H_k`` atoms ``h``."""
    nu = tree.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    R = market.returns(tree)
    total = 0.0
    policy = []
    for k in range(tree.steps):
        lam, f, mass = maximize_atoms(H.labels[k], nu, R[k], H.n_atoms(k))
        total += float(mass @ f)
        policy.append(lam)
    return UtilityResult(total, policy)


@dataclass
class UtilityBoundReport:
    v_F: float
    v_G: float
    transport: float
    K_tilde: float
    holds: bool

    @property
    def gap(self) -> float:
        return self.v_G - self.v_F

    def to_json(self) -> dict:
        return {
            "v_F": self.v_F,
            "v_G": self.v_G,
            "gap": self.gap,
            "transport": self.transport,
            "K_tilde": self.K_tilde,
            "bound": self.K_tilde * self.transport,
            "pass": self.holds,
        }


def value_of_info_utility(tree: ScenarioTree, F: FiltrationSeq, G: FiltrationSeq, market: MarketSpec,
                          utility: UtilitySpec = UtilitySpec(), formulation: str = "auto",
                          transport: float | None = None) -> UtilityBoundReport:
    """``0 <= v^G - v^F <= K~ * inf_causal E^pi[total variation of the path difference]``.

    The transport value does not depend on the market; pass ``transport`` to
    reuse one already computed for ``(tree, F, G)``.
    """
    vF = log_utility_value(tree, F, market).value
    vG = log_utility_value(tree, G, market).value
    if transport is None:
        transport, _, _ = solve_causal(tree, F, tree, G, CostSpec("tv"), formulation=formulation)
    w = float(transport)
    Kt = info_bound_constant(market, utility, tree.T)
    gap = vG - vF
    return UtilityBoundReport(vF, vG, w, Kt, bool(-SLACK <= gap <= Kt * w + SLACK))


def info_value_vs_entropy(tree: ScenarioTree, F: FiltrationSeq, L: AtomLabeling, market: MarketSpec,
                          utility: UtilitySpec = UtilitySpec()) -> dict:
    """Side-by-side utility gain, drift energy, KL information and entropy for an initial enlargement."""
    G = enlarge_initial(F, L)
    rep = value_of_info_utility(tree, F, G, market, utility)
    return {
        "N": tree.steps,
        "utility_gap": rep.gap,
        "drift_energy": drift_energy(drift_field(tree, F, G), QUADRATIC),
        "kl_information": kl_information(tree, F, G),
        "entropy": partition_entropy(L),
        "tv_causal": rep.transport,
        "K_tilde": rep.K_tilde,
        "bound": rep.K_tilde * rep.transport,
        "pass": rep.holds,
    }
