"""Entropy, disequilibrium and LMC complexity of discrete distributions.

All functions reduce over the last axis, so they accept a single probability
vector ``(n,)`` or a batch ``(..., n)``. Logarithms are natural and use a
probability floor so near one-hot policies stay finite.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12


class RegularizerKind(str, enum.Enum):
    NONE = "none"
    ENTROPY = "entropy"
    COMPLEXITY = "complexity"


def check_distribution(probs: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("a distribution needs at least 2 outcomes")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise ValueError("probabilities must sum to 1")
    return p


def _log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, PROB_FLOOR))


def entropy(probs: np.ndarray) -> np.ndarray | float:
    p = np.asarray(probs, dtype=np.float64)
    return -np.sum(p * _log(p), axis=-1)


def disequilibrium(probs: np.ndarray) -> np.ndarray | float:
    p = np.asarray(probs, dtype=np.float64)
    n = p.shape[-1]
    return np.sum((p - 1.0 / n) ** 2, axis=-1)


def complexity(probs: np.ndarray) -> np.ndarray | float:
    """LMC complexity: entropy times disequilibrium."""
    return entropy(probs) * disequilibrium(probs)


def entropy_grad(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    return -(_log(p) + 1.0)


def disequilibrium_grad(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    return 2.0 * (p - 1.0 / p.shape[-1])


def complexity_grad(probs: np.ndarray) -> np.ndarray:
    """Partial derivatives of complexity with respect to each probability.

    ``-D (ln p_a + 1) + 2 S (p_a - 1/n)``. Chaining through the softmax and
    the network is left to the caller.
    """
    p = np.asarray(probs, dtype=np.float64)
    s = entropy(p)[..., None]
    d = disequilibrium(p)[..., None]
    return -d * (_log(p) + 1.0) + 2.0 * s * (p - 1.0 / p.shape[-1])


def tangent_projection(grad: np.ndarray) -> np.ndarray:
    """Component of ``grad`` tangent to the simplex (zero-sum part)."""
    g = np.asarray(grad, dtype=np.float64)
    return g - g.mean(axis=-1, keepdims=True)


def project_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``y`` onto the probability simplex.

    Sort-based algorithm, O(n log n) per row.
    """
    y = np.asarray(y, dtype=np.float64)
    flat = y.reshape(-1, y.shape[-1])
    n = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, n + 1)
    rho = np.count_nonzero(u - css / k > 0, axis=1)
    theta = css[np.arange(len(flat)), rho - 1] / rho
    return np.maximum(flat - theta[:, None], 0.0).reshape(y.shape)


@dataclass
class StationarityReport:
    n: int
    starts: int
    tol: float
    uniform_grad_norms: dict[str, float]
    maxima: np.ndarray
    max_complexity: float
    iterations: int
    non_converged: int
    permutation_equivalent: bool
    notes: list[str] = field(default_factory=list)

    @property
    def n_maxima(self) -> int:
        return len(self.maxima)

    @property
    def ok(self) -> bool:
        return (
            self.non_converged == 0
            and self.permutation_equivalent
            and self.n_maxima == self.n
            and all(v < self.tol for v in self.uniform_grad_norms.values())
        )


def _cluster(points: np.ndarray, tol: float) -> np.ndarray:
    reps: list[np.ndarray] = []
    for p in points:
        if not any(np.max(np.abs(p - r)) <= tol for r in reps):
            reps.append(p)
    return np.array(reps).reshape(-1, points.shape[1])


def verify_stationarity(n: int, starts: int, tol: float, seed: int = 0, step: float = 1e-2,
                        max_iter: int = 100_000, converge_tol: float = 1e-14) -> StationarityReport:
    """Check the stationary structure of S, D and C on the n-simplex.

    Runs projected gradient ascent of complexity from ``starts`` random
    interior points (all starts advance together as one batch), then groups
    the limits into distinct maxima.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if starts < 10 * n:
        raise ValueError(f"need at least {10 * n} starts for n={n}, got {starts}")

    uniform = np.full(n, 1.0 / n)
    uniform_norms = {
        "entropy": float(np.linalg.norm(tangent_projection(entropy_grad(uniform)))),
        "disequilibrium": float(np.linalg.norm(tangent_projection(disequilibrium_grad(uniform)))),
        "complexity": float(np.linalg.norm(tangent_projection(complexity_grad(uniform)))),
    }

    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n), size=starts)
    active = np.ones(starts, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        q = project_to_simplex(p[active] + step * complexity_grad(p[active]))
        moved = np.max(np.abs(q - p[active]), axis=1)
        p[active] = q
        idx = np.flatnonzero(active)
        active[idx[moved < converge_tol]] = False
        if not active.any():
            break

    notes = []
    non_converged = int(active.sum())
    if non_converged:
        notes.append(f"{non_converged} of {starts} starts did not converge in {max_iter} iterations")
    done = p[~active]
    maxima = _cluster(done, tol)
    sorted_max = np.sort(maxima, axis=-1)
    perm_eq = bool(len(maxima)) and bool(np.all(np.max(np.abs(sorted_max - sorted_max[0]), axis=1) <= tol))
    if not perm_eq:
        notes.append("converged maxima are not permutations of one probability multiset")
    c = complexity(maxima) if len(maxima) else np.array([np.nan])
    return StationarityReport(
        n=n, starts=starts, tol=tol, uniform_grad_norms=uniform_norms,
        maxima=maxima[np.lexsort(maxima.T[::-1])] if len(maxima) else maxima,
        max_complexity=float(np.max(c)), iterations=it, non_converged=non_converged,
        permutation_equivalent=perm_eq, notes=notes,
    )
