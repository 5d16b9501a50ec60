"""Information measures of enlarged filtrations and Monte Carlo demos.

Exact quantities on trees (partition entropy, KL information, drift energy)
and simulations of three continuous-time enlargements of Brownian motion:
by its terminal value, by its last zero before the horizon, and by the future
infimum of a 3-dimensional Bessel process.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

from . import kernels
from .causal_lp import DriftField, refined_dual_value
from .costs import QUADRATIC, Rho
from .pathspace import AtomLabeling, FiltrationSeq, ScenarioTree, ValidationError

BATCH = 4096


def partition_entropy(L: AtomLabeling | np.ndarray) -> float:
    """``-sum p ln p`` in nats over the label classes."""
    p = L.probs if isinstance(L, AtomLabeling) else np.asarray(L, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def kl_information(tree: ScenarioTree, F: FiltrationSeq, G: FiltrationSeq, nu=None) -> float:
    """Sum over steps of the expected KL divergence between the next-step law
    given ``G_k`` and given ``F_k``.

    Returns ``inf`` when some conditional law under ``G`` charges a child the
    ``F`` law does not.
    """
    nu = tree.leaf_prob if nu is None else np.asarray(nu, dtype=float)
    if not G.refines(F):
        raise ValidationError("G must refine F")
    total = 0.0
    for k in range(tree.steps):
        child = tree.ancestors[:, k + 1]
        g, f = G.labels[k], F.labels[k]
        # joint masses of (atom, child node)
        _, cid = np.unique(child, return_inverse=True)
        nc = cid.max() + 1
        joint_g = np.bincount(g * nc + cid, weights=nu, minlength=G.n_atoms(k) * nc).reshape(-1, nc)
        joint_f = np.bincount(f * nc + cid, weights=nu, minlength=F.n_atoms(k) * nc).reshape(-1, nc)
        mass_g = joint_g.sum(1)
        mass_f = joint_f.sum(1)
        # F atom containing each G atom
        f_of_g = np.zeros(G.n_atoms(k), dtype=np.int64)
        f_of_g[g] = f
        live = mass_g > 0
        pg = joint_g[live] / mass_g[live, None]
        pf = joint_f[f_of_g[live]] / mass_f[f_of_g[live], None]
        pos = pg > 0
        if np.any(pos & (pf <= 0)):
            return float("inf")
        terms = np.zeros_like(pg)
        terms[pos] = pg[pos] * np.log(pg[pos] / pf[pos])
        total += float(mass_g[live] @ terms.sum(1))
    return total


def drift_energy(drift: DriftField, rho: Rho = QUADRATIC) -> float:
    """Expected ``sum_k rho(alpha) dt`` of an information drift."""
    return refined_dual_value(drift, rho)[0]


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class MCConfig:
    paths: int = 100_000
    grid: int = 200
    seed: int = 0
    T: float = 1.0
    eps: float = 0.1

    def __post_init__(self):
        if self.paths < 1000:
            raise ValidationError("at least 1000 paths are required")
        if self.grid < 1:
            raise ValidationError("grid must be positive")
        if not self.T > 0:
            raise ValidationError("horizon must be positive")
        if not 0 < self.eps <= self.T:
            raise ValidationError("truncation must lie in (0, T]")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")


def batch_rng(seed: int, batch: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, batch)``."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, batch], dtype=np.uint64)))


def _batches(paths: int):
    for b, start in enumerate(range(0, paths, BATCH)):
        yield b, min(BATCH, paths - start)


@dataclass
class MCEstimate:
    estimate: float
    stderr: float
    target: float | None = None

    def within(self, n_se: float) -> bool:
        return self.target is not None and abs(self.estimate - self.target) <= n_se * self.stderr

    def to_json(self) -> dict:
        out = {"estimate": self.estimate, "stderr": self.stderr}
        if self.target is not None:
            out["target"] = self.target
        return out


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))


def mc_bridge_energy(cfg: MCConfig) -> MCEstimate:
    """Estimate ``1/2 int_0^{T-eps} ((B_T - B_t) / (T - t))^2 dt``.

    The integral is taken in the variable ``u = ln(T / (T - t))`` on a uniform
    ``u`` grid, where the integrand ``(B_T - B_t)^2 / (2 (T - t))`` has
    constant mean ``1/2``, so the trapezoid rule adds no bias.
    """
    T, eps = cfg.T, cfg.eps
    target = 0.5 * np.log(T / eps)
    if eps >= T:
        return MCEstimate(0.0, 0.0, 0.0)
    n = cfg.grid
    u = np.linspace(0.0, np.log(T / eps), n + 1)
    rem = T * np.exp(-u)  # T - t_i, decreasing to eps
    t = T - rem
    dts = np.diff(t)
    w = np.full(n + 1, u[1] - u[0])
    w[[0, -1]] *= 0.5
    vals = []
    for b, m in _batches(cfg.paths):
        rng = batch_rng(cfg.seed, b)
        z = rng.standard_normal((m, n + 1))
        B = np.zeros((m, n + 1))
        B[:, 1:] = np.cumsum(z[:, :n] * np.sqrt(dts), axis=1)
        BT = B[:, -1] + np.sqrt(eps) * z[:, n]
        f = (BT[:, None] - B) ** 2 / (2.0 * rem)
        vals.append(f @ w)
    est, se = _mean_se(np.concatenate(vals))
    return MCEstimate(est, se, float(target))


def phi_tail(x):
    """``sqrt(2/pi) int_x^inf exp(-u^2/2) du``, which equals ``erfc(x / sqrt 2)``."""
    return erfc(np.asarray(x) / np.sqrt(2.0))


def progressive_drift(B, BT, t, T, before):
    """Drift of ``B`` in its enlargement by the last zero before ``T``.

    ``before`` flags times up to the last zero.
    """
    s = np.sqrt(T - t)
    x = np.abs(B) / s
    scale = np.sqrt(2.0 / np.pi) * np.exp(-0.5 * x**2) / s
    with np.errstate(divide="ignore", invalid="ignore"):
        pre = np.sign(B) / phi_tail(x)
        post = np.sign(BT) / erf(x / np.sqrt(2.0))
    return -scale * np.where(before, pre, -post)


@dataclass
class ProgressiveReport:
    mean: MCEstimate
    variance: float
    variance_se: float
    sign_agreement: float
    steps_used: int

    def to_json(self) -> dict:
        return {
            "mean": self.mean.to_json(),
            "variance": self.variance,
            "variance_stderr": self.variance_se,
            "pre_zero_sign_agreement": self.sign_agreement,
            "steps": self.steps_used,
        }


def last_zero_interval(B: np.ndarray, dt: float, U: np.ndarray) -> np.ndarray:
    """Index ``j`` of the last grid interval ``[t_j, t_{j+1}]`` containing a zero.

    A sign change always counts; otherwise the interval counts with the
    Brownian-bridge crossing probability ``exp(-2 |B_j| |B_{j+1}| / dt)``.
    """
    a, b = B[:, :-1], B[:, 1:]
    cross = (a * b <= 0) | (U < np.exp(-2.0 * np.abs(a) * np.abs(b) / dt))
    n = cross.shape[1]
    return n - 1 - np.argmax(cross[:, ::-1], axis=1)


def mc_progressive_drift(cfg: MCConfig) -> ProgressiveReport:
    """Remove the last-zero drift from simulated increments on ``[0, T - eps]``.

    Reports the mean and variance of ``(dB - drift dt) / sqrt(dt)``, and the
    fraction of pre-zero steps whose drift has sign ``-sgn(B_t)``.
    """
    T, n = cfg.T, cfg.grid
    dt = T / n
    t = np.arange(n) * dt
    used = t <= T - cfg.eps + 1e-12
    k = int(used.sum())
    means, sq, agree, pre_total = [], [], 0, 0
    for b, m in _batches(cfg.paths):
        rng = batch_rng(cfg.seed, b)
        dB = rng.standard_normal((m, n)) * np.sqrt(dt)
        U = rng.random((m, n))
        B = np.zeros((m, n + 1))
        B[:, 1:] = np.cumsum(dB, axis=1)
        j_star = last_zero_interval(B, dt, U)
        before = np.arange(n)[None, :] <= j_star[:, None]
        Bl = B[:, :k]
        drift = progressive_drift(Bl, B[:, -1:], t[None, :k], T, before[:, :k])
        z = (dB[:, :k] - drift * dt) / np.sqrt(dt)
        means.append(z.mean(1))
        sq.append((z**2).mean(1))
        mask = before[:, :k] & (Bl != 0)
        agree += int(np.sum(np.sign(drift[mask]) == -np.sign(Bl[mask])))
        pre_total += int(mask.sum())
    means = np.concatenate(means)
    sq = np.concatenate(sq)
    mean, se = _mean_se(means)
    var = float(sq.mean() - mean**2)
    return ProgressiveReport(MCEstimate(mean, se, 0.0), var, float(sq.std(ddof=1) / np.sqrt(len(sq))),
                             agree / max(pre_total, 1), k)


@dataclass
class BesselReport:
    mean: MCEstimate
    variance: float
    variance_se: float
    j_monotone: bool
    j_terminal: bool
    jump_fraction: float
    mean_variation: float
    splits: int

    def to_json(self) -> dict:
        return {
            "mean": self.mean.to_json(),
            "variance": self.variance,
            "variance_stderr": self.variance_se,
            "future_infimum_monotone": self.j_monotone,
            "future_infimum_terminal": self.j_terminal,
            "variation_fraction_on_dJ": self.jump_fraction,
            "mean_variation": self.mean_variation,
            "split_steps": self.splits,
        }


def future_infimum(R: np.ndarray, tail: np.ndarray | None = None, between: np.ndarray | None = None) -> np.ndarray:
    """``J_t = min_{s >= t} R_s`` along the last axis.

    ``tail`` is the infimum after the last grid time and ``between[:, j]`` the
    infimum inside grid interval ``j``; without them the infimum is taken over
    the grid only, so ``J_T = R_T``.
    """
    X = R if between is None else np.minimum(R, np.pad(between, ((0, 0), (0, 1)), constant_values=np.inf))
    J = np.minimum.accumulate(X[:, ::-1], axis=1)[:, ::-1]
    if tail is not None:
        J = np.minimum(J, tail[:, None])
    return J


def bridge_minimum(a: np.ndarray, b: np.ndarray, dt: float, V: np.ndarray) -> np.ndarray:
    """Sample the minimum of a Brownian bridge from ``a`` to ``b`` over ``dt``."""
    return 0.5 * (a + b - np.sqrt((a - b) ** 2 - 2.0 * dt * np.log(V)))


def mc_bessel_demo(cfg: MCConfig, r0: float = 0.1) -> BesselReport:
    """Simulate ``dR = dt/R + dB`` and test ``R - 2J`` for Brownian increments.

    Euler proposals that would leave ``(0, inf)``, or whose drift step
    ``dt/R`` exceeds ``R/4``, are split at a Brownian-bridge midpoint and
    retried on each half. The infimum of the process after ``T`` given
    ``R_T`` is uniform on ``[0, R_T]`` and is sampled exactly; the infimum
    inside each grid interval is drawn from the Brownian-bridge minimum law.
    """
    if not r0 > 0:
        raise ValidationError("r0 must be positive")
    T, n = cfg.T, cfg.grid
    dt = T / n
    means, sq, var_total, var_jump = [], [], [], []
    mono = term = True
    splits = 0
    for b, m in _batches(cfg.paths):
        rng = batch_rng(cfg.seed, b)
        dB = np.ascontiguousarray(rng.standard_normal((m, n)) * np.sqrt(dt))
        pool = np.ascontiguousarray(rng.standard_normal((m, 256)))
        U = rng.random(m)
        V = 1.0 - rng.random((m, n))
        R, used = kernels.bessel_paths(float(r0), dt, dB, pool)
        splits += int(used.sum())
        J_grid = future_infimum(R)
        term &= bool(np.all(J_grid[:, -1] == R[:, -1]))
        J = future_infimum(R, U * R[:, -1], bridge_minimum(R[:, :-1], R[:, 1:], dt, V))
        mono &= bool(np.all(np.diff(J, axis=1) >= 0))
        z = np.diff(R - 2.0 * J, axis=1) / np.sqrt(dt)
        means.append(z.mean(1))
        sq.append((z**2).mean(1))
        dJ = np.diff(J, axis=1)
        fv = np.abs(2.0 * dJ - dt / R[:, :-1])
        var_total.append(fv.sum(1))
        var_jump.append(np.where(dJ > 0, fv, 0.0).sum(1))
    means = np.concatenate(means)
    sq = np.concatenate(sq)
    mean, se = _mean_se(means)
    vt = np.concatenate(var_total)
    vj = np.concatenate(var_jump)
    return BesselReport(
        MCEstimate(mean, se, 0.0),
        float(sq.mean() - mean**2),
        float(sq.std(ddof=1) / np.sqrt(len(sq))),
        mono,
        term,
        float(vj.sum() / vt.sum()),
        float(vt.mean()),
        splits,
    )
