"""Transport costs between discrete paths and their convex conjugates.

A path is the array of cumulative values ``(w_0, ..., w_N)`` with ``w_0 = 0``;
increments are ``np.diff(path)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .pathspace import CapacityError, ScenarioTree, ValidationError

PAIR_CAP = 2**22


@dataclass(frozen=True)
class Rho:
    """Even convex penalty ``rho(x) = |x|^p / p`` (``p = 2`` is the quadratic case)."""

    p: float = 2.0

    def __post_init__(self):
        if not 1.0 < self.p <= 8.0:
            raise ValidationError(f"power p={self.p} outside (1, 8]")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    def __call__(self, x):
        return np.abs(x) ** self.p / self.p

    def deriv(self, x):
        return np.sign(x) * np.abs(x) ** (self.p - 1.0)

    def conjugate(self, v):
        return np.abs(v) ** self.q / self.q

    def conjugate_deriv(self, v):
        return np.sign(v) * np.abs(v) ** (self.q - 1.0)


QUADRATIC = Rho(2.0)


def check_rho(rho: Callable, grid: np.ndarray | None = None, tol: float = 1e-12) -> None:
    """Numerically check evenness, convexity, ``rho(0) = 0`` and monotonicity on a grid."""
    g = np.linspace(0.0, 10.0, 2001) if grid is None else np.asarray(grid, dtype=float)
    g = np.unique(np.abs(g))
    vals = np.asarray(rho(g), dtype=float)
    if abs(float(rho(0.0))) > tol:
        raise ValidationError("rho(0) must be 0")
    if np.max(np.abs(np.asarray(rho(-g)) - vals)) > tol * max(1.0, np.max(np.abs(vals))):
        raise ValidationError("rho must be even")
    if np.any(np.diff(vals) <= 0):
        raise ValidationError("rho must be strictly increasing on [0, inf)")
    slopes = np.diff(vals) / np.diff(g)
    if np.any(np.diff(slopes) < -1e-9 * max(1.0, np.max(np.abs(slopes)))):
        raise ValidationError("rho must be convex")


def conjugate(rho: Rho, v):
    """Convex conjugate ``rho*(v)``; ``|v|^q / q`` with ``1/p + 1/q = 1``."""
    if not isinstance(rho, Rho):
        raise ValidationError("conjugate only supports power/quadratic descriptors")
    return rho.conjugate(v)


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValidationError(f"path lengths differ: {x.shape} vs {y.shape}")
    return x, y


def tv_cost(x, y) -> float:
    """Total variation of the path difference: ``sum_k |dy_k - dx_k|``."""
    x, y = _pair(x, y)
    return float(np.abs(np.diff(y - x)).sum())


def cm_cost(x, y, rho: Rho = QUADRATIC, dt: float = 1.0) -> float:
    """Discrete Cameron-Martin cost ``sum_k rho((dy_k - dx_k) / dt) * dt``."""
    x, y = _pair(x, y)
    if not dt > 0:
        raise ValidationError("dt must be positive")
    return float(np.sum(rho(np.diff(y - x) / dt)) * dt)


def sup_metric(x, y) -> float:
    """Uniform distance between the cumulative paths."""
    x, y = _pair(x, y)
    return float(np.max(np.abs(x - y)))


@dataclass(frozen=True)
class CostSpec:
    """Cost descriptor: ``tv``, ``cm`` (with ``rho``), ``sup`` or ``matrix``."""

    variant: str = "tv"
    rho: Rho = QUADRATIC
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in ("tv", "cm", "sup", "matrix"):
            raise ValidationError(f"unknown cost variant {self.variant!r}")
        if self.variant == "matrix":
            if self.matrix is None:
                raise ValidationError("matrix cost needs an explicit matrix")
            m = np.asarray(self.matrix, dtype=float)
            if not np.all(np.isfinite(m)):
                raise ValidationError("explicit cost matrix must be finite")

    @classmethod
    def from_config(cls, cfg: dict) -> "CostSpec":
        name = cfg.get("cost", "tv")
        if name == "cm":
            return cls("cm", Rho(float(cfg.get("p", 2.0))))
        return cls(name)

    @property
    def separable(self) -> bool:
        return self.variant in ("tv", "cm")

    def step(self, dx, dy, dt: float):
        """Per-step cost of increments (separable variants only); broadcasts."""
        diff = np.asarray(dy) - np.asarray(dx)
        if self.variant == "tv":
            return np.abs(diff)
        if self.variant == "cm":
            return self.rho(diff / dt) * dt
        raise ValidationError(f"cost {self.variant!r} is not separable across steps")

    def pair(self, x, y, dt: float = 1.0) -> float:
        if self.variant == "tv":
            return tv_cost(x, y)
        if self.variant == "cm":
            return cm_cost(x, y, self.rho, dt)
        if self.variant == "sup":
            return sup_metric(x, y)
        raise ValidationError("explicit matrices have no per-pair evaluator")


def cost_matrix(treeX: ScenarioTree, treeY: ScenarioTree, spec: CostSpec, *, cap: int = PAIR_CAP) -> np.ndarray:
    """Dense matrix ``c[x, y]`` over leaf pairs."""
    nx, ny = treeX.n_leaves, treeY.n_leaves
    if nx * ny > cap:
        raise CapacityError(f"{nx}x{ny} leaf pairs exceed the cap of {cap}")
    if spec.variant == "matrix":
        m = np.asarray(spec.matrix, dtype=float)
        if m.shape != (nx, ny):
            raise ValidationError(f"explicit matrix has shape {m.shape}, expected {(nx, ny)}")
        return m.copy()
    if treeX.steps != treeY.steps:
        raise ValidationError("trees have different numbers of steps")
    if spec.variant == "cm" and abs(treeX.dt - treeY.dt) > 1e-15:
        raise ValidationError("Cameron-Martin cost needs a common time step")
    X, Y = treeX.leaf_paths, treeY.leaf_paths
    out = np.zeros((nx, ny))
    if spec.variant == "sup":
        for k in range(X.shape[1]):
            np.maximum(out, np.abs(X[:, k, None] - Y[None, :, k]), out=out)
        return out
    dX, dY = np.diff(X, axis=1), np.diff(Y, axis=1)
    for k in range(dX.shape[1]):
        out += spec.step(dX[:, k, None], dY[None, :, k], treeX.dt)
    return out
