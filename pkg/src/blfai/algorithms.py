"""Fixed-budget identification strategies: the posterior-sampling
game algorithm (BLFAIPS) and its benchmark baselines.

Every runner maps (instance, budget, stream) to a RunResult holding the
final recommendation plus a checkpoint trace; a fixed seed reproduces the
result bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Instance, best_feasible_arm
from .design import g_optimal
from .env import RngStream, pull
from .hardness import HardnessResult, SolverOptions, gamma_closed_form
from .learners import (AdaHedgeState, RidgePosterior, adahedge_update,
                       empirical_feasible_best, ridge_update,
                       sample_constrained_posterior)


@dataclass(frozen=True)
class RunResult:
    recommended: int
    correct: bool | None
    pull_counts: np.ndarray
    checkpoints: tuple  # ((t, recommended_at_t, correct_at_t), ...)


@dataclass(frozen=True)
class BlfaipsParams:
    """Algorithm constants; eta rates default to the noise-scaled rule
    eta = min(sigma^2 / (8 L^2 R1^2), gamma^2 / (8 L^2 R2^2))."""

    alpha: float = 0.25
    eta_r: float | None = None
    eta_c: float | None = None
    max_rejects: int = 64
    design_tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("exploration exponent must lie in (0, 1)")
        for rate in (self.eta_r, self.eta_c):
            if rate is not None and rate <= 0:
                raise ValueError("eta rates must be positive")

    def resolve_eta(self, inst: Instance) -> tuple:
        if self.eta_r is not None and self.eta_c is not None:
            return self.eta_r, self.eta_c
        if inst.sigma <= 0 or inst.gamma_noise <= 0:
            # noiseless: point-mass sampling around the estimates
            return math.inf, math.inf
        L2 = inst.arm_bound ** 2
        eta = min(inst.sigma ** 2 / (8 * L2 * inst.r1_bound ** 2),
                  inst.gamma_noise ** 2 / (8 * L2 * inst.r2_bound ** 2))
        eta_r = self.eta_r if self.eta_r is not None else eta / inst.sigma ** 2
        eta_c = self.eta_c if self.eta_c is not None else eta / inst.gamma_noise ** 2
        return eta_r, eta_c


def checkpoint_grid(T: int) -> list:
    """Checkpoints at powers of sqrt(2) plus the final budget."""
    if T < 1:
        raise ValueError("budget must be at least 1")
    ts = set()
    k = 0
    while True:
        t = int(round(2 ** (k / 2)))
        if t >= T:
            break
        ts.add(max(t, 1))
        k += 1
    ts.add(T)
    return sorted(ts)


def _loss_weights(inst: Instance) -> tuple:
    # noiseless runs keep a finite loss scale; only relative size matters
    w_r = 1.0 / inst.sigma ** 2 if inst.sigma > 0 else 1.0
    w_c = 1.0 / inst.gamma_noise ** 2 if inst.gamma_noise > 0 else 1.0
    return w_r, w_c


def _box_conditioned_sample(ridge: RidgePosterior, inst: Instance,
                            rng: RngStream, max_rejects: int = 64) -> tuple:
    """Draw from N(theta_hat_r, sigma^2 V^-1) x N(theta_hat_c, gamma^2 V^-1)
    conditioned on the parameter norm box, by per-component rejection with
    a clamp onto the box after ``max_rejects`` misses."""
    d = inst.dim

    def draw(center, scale, bound):
        theta = center
        for _ in range(max_rejects + 1):
            theta = center + scale * ridge.whiten_noise(rng.standard_normal(d))
            if np.linalg.norm(theta) <= bound:
                return theta
        norm = np.linalg.norm(theta)
        return theta * (bound / norm) if norm > 0 else theta

    theta1 = draw(ridge.theta_hat_r, inst.sigma, inst.r1_bound)
    theta2 = draw(ridge.theta_hat_c, inst.gamma_noise, inst.r2_bound)
    return theta1, theta2


def _posterior_recommendation(ridge: RidgePosterior, inst: Instance,
                              rng: RngStream) -> int:
    """Final-round rule: one box-conditioned posterior draw, then the best
    feasible arm under that draw (uniform when nothing looks feasible)."""
    theta1, theta2 = _box_conditioned_sample(ridge, inst, rng)
    arms = inst.test.arms
    feasible = np.flatnonzero(arms @ theta2 <= inst.tau)
    if feasible.size == 0:
        return rng.integers(len(inst.test))
    rewards = arms[feasible] @ theta1
    return int(feasible[int(np.argmax(rewards))])


def _record(checkpoints: list, t: int, rec: int, best: int | None):
    checkpoints.append((t, rec, (rec == best) if best is not None else None))


def _blfaips_core(inst: Instance, T: int, params: BlfaipsParams,
                  rng: RngStream, restart_at: int | None = None) -> RunResult:
    X = inst.train.arms
    lam_g = g_optimal(inst.train, tol=params.design_tol)
    eta_r, eta_c = params.resolve_eta(inst)
    w_r, w_c = _loss_weights(inst)
    ridge = RidgePosterior.fresh(inst.dim)
    hedge = AdaHedgeState.fresh(len(inst.train))
    best = best_feasible_arm(inst) if inst.truth_known else None
    grid = checkpoint_grid(T)
    grid_pos = 0
    counts = np.zeros(len(inst.train), dtype=np.int64)
    trace = []

    for t in range(1, T + 1):
        if restart_at is not None and t == restart_at:
            ridge = RidgePosterior.fresh(inst.dim)
            hedge = AdaHedgeState.fresh(len(inst.train))
        gamma_t = t ** (-params.alpha)
        z_hat = empirical_feasible_best(ridge, inst.test, inst.tau, rng)
        theta1, theta2 = sample_constrained_posterior(
            ridge, z_hat, inst.test, inst.tau, eta_r, eta_c, rng,
            max_rejects=params.max_rejects)
        mixed = (1.0 - gamma_t) * hedge.weights + gamma_t * lam_g
        x_idx = rng.categorical(mixed)
        y_r, y_c = pull(inst, x_idx, rng)
        # adversarial information loss, negated because the weight learner
        # minimizes while the sampler wants the most informative arms
        dev_r = X @ (theta1 - ridge.theta_hat_r)
        dev_c = X @ (theta2 - ridge.theta_hat_c)
        loss = -(w_r * dev_r ** 2 + w_c * dev_c ** 2)
        hedge = adahedge_update(hedge, loss)
        ridge = ridge_update(ridge, X[x_idx], y_r, y_c)
        counts[x_idx] += 1
        if t == grid[grid_pos]:
            _record(trace, t, _posterior_recommendation(ridge, inst, rng), best)
            grid_pos += 1

    final_t, rec, correct = trace[-1]
    assert final_t == T
    return RunResult(recommended=rec, correct=correct, pull_counts=counts,
                     checkpoints=tuple(trace))


def blfaips_run(inst: Instance, T: int,
                params: BlfaipsParams = BlfaipsParams(),
                rng: RngStream | None = None) -> RunResult:
    """Posterior-sampling min-learner against an AdaHedge max-learner, with
    a decaying G-optimal exploration mix and a posterior-draw
    recommendation."""
    if rng is None:
        rng = RngStream(0)
    return _blfaips_core(inst, T, params, rng, restart_at=None)


def peps_proxy_run(inst: Instance, T_guess: int, actual_T: int,
                   params: BlfaipsParams = BlfaipsParams(),
                   rng: RngStream | None = None) -> RunResult:
    """Unknown-horizon handicap model: the same sampler, but its learner
    state restarts once half the realized budget is spent whenever the
    guessed budget was wrong (a doubling-trick stand-in; pull accounting
    is unaffected)."""
    if rng is None:
        rng = RngStream(0)
    restart_at = None
    if actual_T != T_guess:
        half = math.ceil(actual_T / 2)
        if half + 1 <= actual_T:
            restart_at = half + 1
    return _blfaips_core(inst, actual_T, params, rng, restart_at=restart_at)


def lints_feasible_run(inst: Instance, T: int,
                       rng: RngStream | None = None) -> RunResult:
    """Thompson sampling over the joint posterior, pulling the sampled best
    feasible arm; checkpoints recommend the empirical feasible best."""
    if rng is None:
        rng = RngStream(0)
    X = inst.train.arms
    Z = inst.test.arms
    d = inst.dim
    shared_sets = X.shape == Z.shape and np.array_equal(X, Z)
    ridge = RidgePosterior.fresh(d)
    best = best_feasible_arm(inst) if inst.truth_known else None
    grid = checkpoint_grid(T)
    grid_pos = 0
    counts = np.zeros(X.shape[0], dtype=np.int64)
    trace = []

    for t in range(1, T + 1):
        theta1 = ridge.theta_hat_r + inst.sigma * ridge.whiten_noise(
            rng.standard_normal(d))
        theta2 = ridge.theta_hat_c + inst.gamma_noise * ridge.whiten_noise(
            rng.standard_normal(d))
        if shared_sets:
            feasible = np.flatnonzero(X @ theta2 <= inst.tau)
            if feasible.size == 0:
                x_idx = rng.integers(X.shape[0])
            else:
                rewards = X[feasible] @ theta1
                x_idx = int(feasible[int(np.argmax(rewards))])
        else:
            feasible = np.flatnonzero(Z @ theta2 <= inst.tau)
            if feasible.size == 0:
                x_idx = rng.integers(X.shape[0])
            else:
                rewards = Z[feasible] @ theta1
                z_pick = Z[int(feasible[int(np.argmax(rewards))])]
                # pull the training arm most aligned with the sampled best
                # testing arm in the whitened geometry
                align = np.abs(X @ ridge.solve(z_pick))
                x_idx = int(np.argmax(align))
        y_r, y_c = pull(inst, x_idx, rng)
        ridge = ridge_update(ridge, X[x_idx], y_r, y_c)
        counts[x_idx] += 1
        if t == grid[grid_pos]:
            rec = empirical_feasible_best(ridge, inst.test, inst.tau, rng)
            _record(trace, t, rec, best)
            grid_pos += 1

    final_t, rec, correct = trace[-1]
    assert final_t == T
    return RunResult(recommended=rec, correct=correct, pull_counts=counts,
                     checkpoints=tuple(trace))


def ttts_beta_run(inst: Instance, T: int, beta: float,
                  rng: RngStream | None = None,
                  challenger_cap: int = 128) -> RunResult:
    """Top-two posterior sampling adapted to the cost constraint.

    A leader is the feasible best under one posterior draw; with
    probability beta the pull targets the leader, otherwise fresh draws
    are taken until a distinct challenger emerges (capped, then a uniform
    distinct arm) and the pull targets the leader-vs-challenger
    direction.  The pulled training arm maximizes the variance reduction
    of that direction.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    if rng is None:
        rng = RngStream(0)
    X = inst.train.arms
    Z = inst.test.arms
    d = inst.dim
    ridge = RidgePosterior.fresh(d)
    best = best_feasible_arm(inst) if inst.truth_known else None
    grid = checkpoint_grid(T)
    grid_pos = 0
    counts = np.zeros(X.shape[0], dtype=np.int64)
    trace = []

    def sampled_best() -> int:
        theta1 = ridge.theta_hat_r + inst.sigma * ridge.whiten_noise(
            rng.standard_normal(d))
        theta2 = ridge.theta_hat_c + inst.gamma_noise * ridge.whiten_noise(
            rng.standard_normal(d))
        feasible = np.flatnonzero(Z @ theta2 <= inst.tau)
        if feasible.size == 0:
            return rng.integers(Z.shape[0])
        rewards = Z[feasible] @ theta1
        return int(feasible[int(np.argmax(rewards))])

    for t in range(1, T + 1):
        leader = sampled_best()
        if rng.random() < beta:
            target = Z[leader]
        else:
            challenger = None
            for _ in range(challenger_cap):
                cand = sampled_best()
                if cand != leader:
                    challenger = cand
                    break
            if challenger is None:
                challenger = rng.integers(Z.shape[0] - 1)
                if challenger >= leader:
                    challenger += 1
            target = Z[leader] - Z[challenger]
        # variance reduction of the target direction from one extra pull
        sol = ridge.solve(target)
        gains = (X @ sol) ** 2 / (1.0 + np.einsum(
            "ij,ji->i", X, np.linalg.solve(ridge.V, X.T)))
        x_idx = int(np.argmax(gains))
        y_r, y_c = pull(inst, x_idx, rng)
        ridge = ridge_update(ridge, X[x_idx], y_r, y_c)
        counts[x_idx] += 1
        if t == grid[grid_pos]:
            rec = empirical_feasible_best(ridge, inst.test, inst.tau, rng)
            _record(trace, t, rec, best)
            grid_pos += 1

    final_t, rec, correct = trace[-1]
    assert final_t == T
    return RunResult(recommended=rec, correct=correct, pull_counts=counts,
                     checkpoints=tuple(trace))


def largest_remainder_counts(weights: np.ndarray, T: int) -> np.ndarray:
    """Integer pull counts summing to T, each within 1 of weights * T."""
    w = np.asarray(weights, dtype=float)
    ideal = w * T
    counts = np.floor(ideal).astype(np.int64)
    short = T - int(counts.sum())
    if short > 0:
        order = np.argsort(-(ideal - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _round_robin_sequence(counts: np.ndarray) -> np.ndarray:
    """Pull order cycling through the support arms in index order, skipping
    arms whose quota is exhausted: arm i's k-th pull happens in cycle k."""
    arm_ids = np.repeat(np.arange(counts.shape[0]), counts)
    cycles = np.concatenate([np.arange(c) for c in counts if c > 0])
    return arm_ids[np.lexsort((arm_ids, cycles))]


def oracle_run(inst: Instance, T: int, rng: RngStream | None = None,
               w_star: np.ndarray | None = None,
               hardness: HardnessResult | None = None,
               solver_opts: SolverOptions = SolverOptions()) -> RunResult:
    """Fixed allocation at the solver's optimal weights, recommended through
    the same posterior rule as the main algorithm.

    Pulls are deterministic (largest-remainder rounding, round-robin
    order); observations are drawn per checkpoint segment as exact
    Gaussian sums, which is distributionally identical to per-pull draws
    and much faster at large repetition counts.
    """
    if rng is None:
        rng = RngStream(0)
    if w_star is None:
        w_star = (hardness or gamma_closed_form(inst, solver_opts)).w_star
    X = inst.train.arms
    counts = largest_remainder_counts(w_star, T)
    seq = _round_robin_sequence(counts)
    best = best_feasible_arm(inst) if inst.truth_known else None
    grid = checkpoint_grid(T)

    mu_r = X @ inst.theta_r
    mu_c = X @ inst.theta_c
    d = inst.dim
    V = np.eye(d)
    S_r = np.zeros(d)
    S_c = np.zeros(d)
    trace = []
    prev = 0
    for t in grid:
        seg = seq[prev:t]
        prev = t
        seg_counts = np.bincount(seg, minlength=X.shape[0])
        for i in np.flatnonzero(seg_counts):
            n = int(seg_counts[i])
            sum_r = n * mu_r[i] + math.sqrt(n) * inst.sigma * rng.standard_normal()
            sum_c = n * mu_c[i] + math.sqrt(n) * inst.gamma_noise * rng.standard_normal()
            V = V + n * np.outer(X[i], X[i])
            S_r = S_r + X[i] * sum_r
            S_c = S_c + X[i] * sum_c
        chol = np.linalg.cholesky(V)
        ridge = RidgePosterior(V=V, S_r=S_r, S_c=S_c,
                               theta_hat_r=np.linalg.solve(V, S_r),
                               theta_hat_c=np.linalg.solve(V, S_c),
                               chol=chol, steps=t)
        _record(trace, t, _posterior_recommendation(ridge, inst, rng), best)

    final_t, rec, correct = trace[-1]
    assert final_t == T
    return RunResult(recommended=rec, correct=correct, pull_counts=counts,
                     checkpoints=tuple(trace))
