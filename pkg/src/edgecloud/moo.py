"""Minimum-norm point in the convex hull of objective gradients.

The solver returns simplex weights ``alpha`` such that
``combined = sum_i alpha_i g_i`` has (near-)minimal squared norm over the
simplex. Stepping along ``-combined`` never increases any objective to
first order: ``<combined, g_j> >= 0`` for every j, which ``check_descent``
verifies. ``grid_oracle`` is an exhaustive lattice evaluation kept as an
independent cross-check of the solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nncore import UsageError

DESCENT_SLACK = 1e-9


@dataclass
class GradientBundle:
    """Stack of p objective gradients, one row per objective."""

    grads: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.grads, dtype=np.float64)
        if arr.ndim != 2:
            raise UsageError(f"bundle must be 2-D (p, d), got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise UsageError("bundle needs at least two gradients")
        if not np.all(np.isfinite(arr)):
            raise UsageError("bundle contains non-finite entries")
        self.grads = arr

    @classmethod
    def from_vectors(cls, vectors) -> "GradientBundle":
        rows = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
        dims = {r.shape[0] for r in rows}
        if len(dims) != 1:
            raise UsageError(f"gradient dimensions differ: {sorted(dims)}")
        return cls(np.stack(rows))

    @property
    def p(self) -> int:
        return self.grads.shape[0]


@dataclass
class SimplexWeights:
    """Nonnegative weights summing to one."""

    alpha: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.alpha, dtype=np.float64)
        if arr.ndim != 1:
            raise UsageError("weights must be a 1-D vector")
        if np.any(arr < -1e-12):
            raise UsageError("weights must be nonnegative")
        if abs(arr.sum() - 1.0) > 1e-9:
            raise UsageError(f"weights sum to {arr.sum()}, expected 1")
        self.alpha = arr


def _coerce(bundle) -> np.ndarray:
    if isinstance(bundle, GradientBundle):
        return bundle.grads
    return GradientBundle(np.asarray(bundle, dtype=np.float64)).grads


def _frank_wolfe(grads: np.ndarray, tol: float, max_iter: int = 10_000) -> np.ndarray:
    """Frank-Wolfe with away steps over the simplex, exact line search.

    Away steps give linear convergence on this quadratic; plain Frank-Wolfe
    zigzags sublinearly when the optimum sits on a simplex face and can fail
    the common-descent slack within the iteration budget.
    """
    p = grads.shape[0]
    norms2 = np.einsum("ij,ij->i", grads, grads)
    start = int(np.argmin(norms2))
    alpha = np.zeros(p)
    alpha[start] = 1.0
    combined = grads[start].copy()
    for _ in range(max_iter):
        scores = grads @ combined
        cc = float(combined @ combined)
        vertex = int(np.argmin(scores))
        gap = 2.0 * (cc - float(scores[vertex]))
        if gap < tol:
            break
        active = np.flatnonzero(alpha > 0.0)
        away = int(active[np.argmax(scores[active])])
        away_gap = 2.0 * (float(scores[away]) - cc)
        if gap >= away_gap:
            direction = grads[vertex] - combined
            eta_max = 1.0
        else:
            direction = combined - grads[away]
            denom = 1.0 - alpha[away]
            eta_max = alpha[away] / denom if denom > 0.0 else 0.0
        dd = float(direction @ direction)
        if dd == 0.0 or eta_max == 0.0:
            break
        eta = float(np.clip(-(combined @ direction) / dd, 0.0, eta_max))
        if eta == 0.0:
            break
        if gap >= away_gap:
            alpha *= 1.0 - eta
            alpha[vertex] += eta
        else:
            alpha *= 1.0 + eta
            alpha[away] -= eta
            alpha[alpha < 0.0] = 0.0
        combined = combined + eta * direction
    return alpha


def solve_min_norm(bundle, tol: float = 1e-10) -> tuple[SimplexWeights, np.ndarray]:
    """Simplex weights minimizing ``||sum_i alpha_i g_i||^2`` plus the combination.

    p = 2 uses the closed form ``alpha_1 = clip(<g2-g1, g2> / ||g1-g2||^2, 0, 1)``;
    p >= 3 runs away-step Frank-Wolfe until the duality gap drops below
    ``tol``. An all-zero bundle is already stationary and yields uniform
    weights and the zero vector.
    """
    if tol <= 0:
        raise UsageError("tol must be positive")
    grads = _coerce(bundle)
    p, d = grads.shape
    if not grads.any():
        return SimplexWeights(np.full(p, 1.0 / p)), np.zeros(d)
    if p == 2:
        g1, g2 = grads
        diff = g1 - g2
        denom = float(diff @ diff)
        if denom == 0.0:
            a1 = 0.5
        else:
            a1 = float(np.clip(float((g2 - g1) @ g2) / denom, 0.0, 1.0))
        alpha = np.array([a1, 1.0 - a1])
    else:
        alpha = _frank_wolfe(grads, tol)
    combined = alpha @ grads
    return SimplexWeights(alpha), combined


def grid_oracle(bundle, step: float) -> tuple[SimplexWeights, float]:
    """Exhaustive minimum of ``||sum alpha_i g_i||^2`` over a simplex lattice.

    Supports p in {2, 3}; anything larger blows up combinatorially and is
    rejected. The lattice spacing must be at most 1e-2.
    """
    grads = _coerce(bundle)
    p, _ = grads.shape
    if p not in (2, 3):
        raise UsageError(f"grid oracle supports p in {{2, 3}}, got p={p}")
    if not 0.0 < step <= 1e-2 + 1e-15:
        raise UsageError("step must be in (0, 1e-2]")
    m = round(1.0 / step)
    ticks = np.linspace(0.0, 1.0, m + 1)
    if p == 2:
        weights = np.stack([ticks, 1.0 - ticks], axis=1)
    else:
        rows = []
        for a in ticks:
            for b in ticks:
                c = 1.0 - a - b
                if c >= -1e-12:
                    rows.append((a, b, max(c, 0.0)))
        weights = np.array(rows)
    combos = weights @ grads
    norms2 = np.einsum("ij,ij->i", combos, combos)
    best = int(np.argmin(norms2))
    return SimplexWeights(weights[best]), float(norms2[best])


def check_descent(bundle, combined, slack: float = DESCENT_SLACK) -> tuple[bool, np.ndarray]:
    """True iff ``<combined, g_j> >= -slack`` for every objective j.

    A combination passing this check is zero or a common descent direction
    (stepping along ``-combined`` does not increase any objective to first
    order); the slack absorbs floating-point noise.
    """
    grads = _coerce(bundle)
    combined = np.asarray(combined, dtype=np.float64)
    if combined.shape != (grads.shape[1],):
        raise UsageError(f"combined has shape {combined.shape}, expected ({grads.shape[1]},)")
    inner = grads @ combined
    return bool(np.all(inner >= -slack)), inner
