"""G-optimal experiment design over the training arms.

The design weights lambda minimize the worst-case prediction variance
max_x ||x||^2_{A(lambda)^-1}; at the optimum that value equals the
dimension d (Kiefer-Wolfowitz), which gives an absolute acceptance test
for the solver.
"""

from __future__ import annotations

import numpy as np

from .core import ArmSet

JITTER = 1e-12
SUPPORT_PRUNE = 1e-10


class DesignError(RuntimeError):
    """The design problem is degenerate or the solver failed to certify."""


def validate_simplex(weights: np.ndarray, atol: float = 1e-12) -> None:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise ValueError("simplex weights must be a vector")
    if np.any(w < -atol):
        raise ValueError("simplex weights must be nonnegative")
    if abs(float(np.sum(w)) - 1.0) > max(atol, 1e-12 * w.size):
        raise ValueError("simplex weights must sum to one")


def info_matrix(arms: ArmSet | np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted information matrix A(lambda) = sum_x lambda_x x x^T."""
    X = arms.arms if isinstance(arms, ArmSet) else np.asarray(arms, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.shape[0] != X.shape[0]:
        raise ValueError("one weight per arm required")
    return (X * w[:, None]).T @ X


def design_norms(X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """||x||^2_{A(lambda)^-1} for every arm x, with jitter if ill-conditioned."""
    A = info_matrix(X, weights)
    try:
        sol = np.linalg.solve(A, X.T)
    except np.linalg.LinAlgError:
        sol = np.linalg.solve(A + JITTER * np.eye(A.shape[0]), X.T)
    return np.einsum("ij,ji->i", X, sol)


def g_optimal(arms: ArmSet | np.ndarray, tol: float = 1e-3,
              max_iters: int = 100_000) -> np.ndarray:
    """Solve the G-optimal design by Frank-Wolfe over the simplex.

    Each step moves mass toward the arm with the largest design norm
    ||x||^2_{A(lambda)^-1}, using the exact line-search step for the
    log-det objective (the two objectives share their optimum by
    Kiefer-Wolfowitz duality, and line search keeps the objective
    monotone).  Stops once max_x ||x||^2 <= d(1 + tol); failing to
    certify within ``max_iters`` is an error, not a best-effort return.
    """
    X = arms.arms if isinstance(arms, ArmSet) else np.asarray(arms, dtype=float)
    n, d = X.shape
    if tol <= 0:
        raise ValueError("tol must be positive")
    if np.linalg.matrix_rank(X) < d:
        raise DesignError("training arms do not span the space; "
                          "reduce the problem to their span first")

    lam = np.full(n, 1.0 / n)
    target = d * (1.0 + tol)
    for _ in range(max_iters):
        norms = design_norms(X, lam)
        g = float(np.max(norms))
        if g <= target:
            return _pruned(X, lam, target)
        j = int(np.argmax(norms))
        # exact line-search step for moving mass onto arm j
        step = (g / d - 1.0) / (g - 1.0)
        lam *= 1.0 - step
        lam[j] += step
    raise DesignError(
        f"no Kiefer-Wolfowitz certificate after {max_iters} iterations "
        f"(last max norm {g:.6g}, target {target:.6g})")


def _pruned(X: np.ndarray, lam: np.ndarray, target: float) -> np.ndarray:
    """Drop negligible support weights, keeping the certificate intact."""
    pruned = np.where(lam < SUPPORT_PRUNE, 0.0, lam)
    total = float(np.sum(pruned))
    if total <= 0:
        return lam
    pruned /= total
    if float(np.max(design_norms(X, pruned))) <= target:
        return pruned
    return lam
