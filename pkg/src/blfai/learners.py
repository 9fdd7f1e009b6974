"""Online-learning primitives: ridge posteriors, AdaHedge, and the
constrained posterior sampler used by the min-learner.

All operations are value-in/value-out; a learner state is owned by a
single run and never shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import ArmSet
from .env import RngStream
from .hardness import project_pair

REFACTOR_EVERY = 512
REFACTOR_RESIDUAL = 1e-8


def chol_rank1_update(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cholesky factor of L L^T + x x^T, lower triangular, O(d^2)."""
    L = L.copy()
    x = x.astype(float, copy=True)
    n = x.shape[0]
    for k in range(n):
        r = np.hypot(L[k, k], x[k])
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + s * x[k + 1:]) / c
            x[k + 1:] = c * x[k + 1:] - s * L[k + 1:, k]
    return L


@dataclass(frozen=True)
class RidgePosterior:
    """Ridge regression state for the joint reward/cost model.

    V = I + sum_s x_s x_s^T, S holds the response-weighted arm sums, and
    the estimates are V^{-1} S.  A Cholesky factor of V is carried along
    and rank-1 updated; it is rebuilt from scratch every
    ``REFACTOR_EVERY`` steps to guard against drift.
    """

    V: np.ndarray
    S_r: np.ndarray
    S_c: np.ndarray
    theta_hat_r: np.ndarray
    theta_hat_c: np.ndarray
    chol: np.ndarray
    steps: int = 0

    @classmethod
    def fresh(cls, d: int) -> "RidgePosterior":
        eye = np.eye(d)
        zero = np.zeros(d)
        return cls(V=eye.copy(), S_r=zero.copy(), S_c=zero.copy(),
                   theta_hat_r=zero.copy(), theta_hat_c=zero.copy(),
                   chol=eye.copy(), steps=0)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """V^{-1} rhs through the cached factor."""
        return _chol_solve(self.chol, rhs)

    def whiten_noise(self, u: np.ndarray) -> np.ndarray:
        """L^{-T} u, distributed N(0, V^{-1}) for u ~ N(0, I)."""
        return solve_triangular(self.chol, u, lower=True, trans="T")


def _chol_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    y = solve_triangular(L, rhs, lower=True)
    return solve_triangular(L, y, lower=True, trans="T")


def ridge_update(state: RidgePosterior, x: np.ndarray, y_r: float,
                 y_c: float) -> RidgePosterior:
    """Fold one observation into the posterior; the old state is unchanged."""
    x = np.asarray(x, dtype=float)
    V = state.V + np.outer(x, x)
    S_r = state.S_r + x * y_r
    S_c = state.S_c + x * y_c
    steps = state.steps + 1
    if steps % REFACTOR_EVERY == 0:
        chol = np.linalg.cholesky(V)
    else:
        chol = chol_rank1_update(state.chol, x)
        if steps % 64 == 0:
            resid = np.max(np.abs(chol @ chol.T - V))
            if resid > REFACTOR_RESIDUAL * max(1.0, float(np.max(np.abs(V)))):
                chol = np.linalg.cholesky(V)
    theta_r = _chol_solve(chol, S_r)
    theta_c = _chol_solve(chol, S_c)
    return RidgePosterior(V=V, S_r=S_r, S_c=S_c, theta_hat_r=theta_r,
                          theta_hat_c=theta_c, chol=chol, steps=steps)


@dataclass(frozen=True)
class AdaHedgeState:
    """Hedge over the training arms with the learning rate driven by the
    cumulative mixability gap; the initial rate is infinite.

    Weights are recomputed each round from the cumulative losses with the
    current rate (the standard AdaHedge formulation).  An incremental
    update ``w * exp(-lr * loss)`` would be equivalent at a constant rate,
    but under the infinite initial rate it zeroes every coordinate outside
    the first argmin and the support can never recover.
    """

    weights: np.ndarray
    cum_loss: np.ndarray
    cum_gap: float = 0.0
    lr: float = np.inf

    @classmethod
    def fresh(cls, n_arms: int) -> "AdaHedgeState":
        return cls(weights=np.full(n_arms, 1.0 / n_arms),
                   cum_loss=np.zeros(n_arms))


def _hedge_weights(cum_loss: np.ndarray, lr: float) -> np.ndarray:
    if not np.isfinite(lr):
        # follow-the-leader limit: uniform over the argmin set
        lo = np.min(cum_loss)
        mask = cum_loss == lo
        return mask / mask.sum()
    shifted = np.exp(-lr * (cum_loss - np.min(cum_loss)))
    return shifted / shifted.sum()


def adahedge_update(state: AdaHedgeState, loss: np.ndarray) -> AdaHedgeState:
    """One AdaHedge round: mixed loss at the current rate, gap accounting,
    then new weights and the next rate log(n)/cum_gap.

    At an infinite rate the mixed loss is the minimum loss; otherwise it
    goes through a shifted log-sum-exp for overflow safety.
    """
    loss = np.asarray(loss, dtype=float)
    w = state.weights
    n = w.shape[0]
    hedge_loss = float(w @ loss)
    lo = float(np.min(loss))
    if not np.isfinite(state.lr):
        mixed = lo
    else:
        total = float(np.sum(np.exp(-state.lr * (loss - lo)) * w))
        mixed = lo - np.log(total) / state.lr
    gap = max(hedge_loss - mixed, 0.0)
    cum_gap = state.cum_gap + gap
    lr = np.log(n) / cum_gap if cum_gap > 0 else np.inf
    cum_loss = state.cum_loss + loss
    return AdaHedgeState(weights=_hedge_weights(cum_loss, lr),
                         cum_loss=cum_loss, cum_gap=cum_gap, lr=lr)


def empirical_feasible_best(post: RidgePosterior, Z: ArmSet, tau: float,
                            rng: RngStream) -> int:
    """Best testing arm under the current estimates: highest estimated
    reward among arms with estimated cost <= tau (lowest index on ties);
    a uniformly random arm when none qualifies."""
    arms = Z.arms
    costs = arms @ post.theta_hat_c
    feasible = np.flatnonzero(costs <= tau)
    if feasible.size == 0:
        return rng.integers(len(Z))
    rewards = arms[feasible] @ post.theta_hat_r
    return int(feasible[int(np.argmax(rewards))])


def sample_constrained_posterior(post: RidgePosterior, excluded_best: int,
                                 Z: ArmSet, tau: float, eta_r: float,
                                 eta_c: float, rng: RngStream,
                                 max_rejects: int = 64):
    """Draw (theta1, theta2) from the Gaussian posterior conditioned on the
    excluded arm NOT being the best feasible arm.

    Rejection sampling from N(theta_hat_r, eta_r^-1 V^-1) x
    N(theta_hat_c, eta_c^-1 V^-1); after ``max_rejects`` consecutive
    misses the unconditioned draw is projected onto the nearest
    alternative region in the V-metric, which bounds the per-step cost
    (late in a run the alternative set has vanishing posterior mass, so
    pure rejection would not terminate).
    """
    arms = Z.arms
    d = arms.shape[1]
    scale_r = eta_r ** -0.5 if eta_r > 0 else 0.0
    scale_c = eta_c ** -0.5 if eta_c > 0 else 0.0
    theta1 = post.theta_hat_r
    theta2 = post.theta_hat_c
    for _ in range(max_rejects + 1):
        theta1 = post.theta_hat_r + scale_r * post.whiten_noise(
            rng.standard_normal(d))
        theta2 = post.theta_hat_c + scale_c * post.whiten_noise(
            rng.standard_normal(d))
        if _displaced(arms, excluded_best, theta1, theta2, tau):
            return theta1, theta2
    return _project_to_nearest(post.V, arms, excluded_best, theta1, theta2,
                               tau, eta_r, eta_c)


def _displaced(arms: np.ndarray, excluded: int, theta1: np.ndarray,
               theta2: np.ndarray, tau: float) -> bool:
    """Membership test for the alternative region of ``excluded``."""
    if float(arms[excluded] @ theta2) > tau:
        return True
    rewards = arms @ theta1
    costs = arms @ theta2
    hit = (rewards >= rewards[excluded]) & (costs <= tau)
    hit[excluded] = False
    return bool(np.any(hit))


def _project_to_nearest(V: np.ndarray, arms: np.ndarray, excluded: int,
                        theta1: np.ndarray, theta2: np.ndarray, tau: float,
                        eta_r: float, eta_c: float):
    """Project the rejected draw onto the cheapest alternative region.

    eta_r and eta_c are proportional to the inverse noise variances, so
    ranking regions by this objective matches the posterior metric.
    """
    z_hat = arms[excluded]
    best_pair = None
    best_obj = np.inf
    for i in range(arms.shape[0]):
        displaced = None if i == excluded else z_hat
        t1, t2, obj = project_pair(theta1, theta2, arms[i], displaced, tau,
                                   V, eta_r, eta_c)
        if obj < best_obj:
            best_obj = obj
            best_pair = (t1, t2)
    return best_pair
