"""Instance model and arm-set algebra for constrained best-arm identification.

An instance holds a training set X (arms the learner may pull), a testing
set Z (arms it may recommend), the true reward/cost parameters, and the
cost threshold tau.  A testing arm z is feasible when <theta_c, z> <= tau;
the target z* is the feasible arm with the highest expected reward.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

# Relative tolerance on singular values for the span inclusion check.
SPAN_TOL = 1e-9


class InvalidInstanceError(ValueError):
    """The instance violates one of the model assumptions."""


@dataclass(frozen=True)
class ArmSet:
    """A finite, ordered set of d-dimensional arm vectors.

    Arms are identified by index, not by value, so duplicate vectors are
    representable.  The backing array is made read-only so arm sets can be
    shared freely across concurrent runs.
    """

    arms: np.ndarray

    def __post_init__(self):
        arr = np.array(self.arms, dtype=float, copy=True)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise InvalidInstanceError("arm set must be a nonempty (n, d) array")
        if not np.all(np.isfinite(arr)):
            raise InvalidInstanceError("arm vectors must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "arms", arr)

    def __len__(self) -> int:
        return self.arms.shape[0]

    @property
    def dim(self) -> int:
        return self.arms.shape[1]

    @property
    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.arms, axis=1)))


@dataclass(frozen=True)
class ArmClassification:
    """Partition of the testing arms relative to the best feasible arm.

    a1: superoptimal and infeasible; a2: feasible and suboptimal;
    a3: infeasible and suboptimal.  Together with {best} these cover
    every index of Z exactly once.
    """

    best: int
    a1: tuple
    a2: tuple
    a3: tuple


@dataclass(frozen=True)
class Instance:
    """A fully specified problem instance.

    ``truth_known`` is False for dataset-backed instances loaded without a
    ground-truth sidecar; such instances carry placeholder parameters and
    skip the truth-dependent validators (no accuracy scoring is possible).
    """

    train: ArmSet
    test: ArmSet
    theta_r: np.ndarray
    theta_c: np.ndarray
    tau: float
    sigma: float
    gamma_noise: float
    r1_bound: float
    r2_bound: float
    name: str = "instance"
    truth_known: bool = True

    def __post_init__(self):
        tr = np.array(self.theta_r, dtype=float, copy=True)
        tc = np.array(self.theta_c, dtype=float, copy=True)
        tr.setflags(write=False)
        tc.setflags(write=False)
        object.__setattr__(self, "theta_r", tr)
        object.__setattr__(self, "theta_c", tc)
        self._validate()

    @property
    def dim(self) -> int:
        return self.train.dim

    @property
    def arm_bound(self) -> float:
        """Norm bound L over all arms (training and testing)."""
        return max(self.train.max_norm, self.test.max_norm)

    def _validate(self):
        d = self.train.dim
        if self.test.dim != d:
            raise InvalidInstanceError("train/test dimension mismatch")
        if self.theta_r.shape != (d,) or self.theta_c.shape != (d,):
            raise InvalidInstanceError("parameter dimension mismatch")
        if self.sigma < 0 or self.gamma_noise < 0:
            raise InvalidInstanceError("noise scales must be nonnegative")
        if self.r1_bound <= 0 or self.r2_bound <= 0:
            raise InvalidInstanceError("parameter norm bounds must be positive")
        if not _span_contains(self.train.arms, self.test.arms):
            raise InvalidInstanceError("span(Z) must be contained in span(X)")
        if not self.truth_known:
            return
        if np.linalg.norm(self.theta_r) > self.r1_bound * (1 + 1e-12):
            raise InvalidInstanceError("||theta_r|| exceeds its declared bound")
        if np.linalg.norm(self.theta_c) > self.r2_bound * (1 + 1e-12):
            raise InvalidInstanceError("||theta_c|| exceeds its declared bound")
        costs = self.test.arms @ self.theta_c
        feasible = np.flatnonzero(costs <= self.tau)
        if feasible.size == 0:
            raise InvalidInstanceError("no feasible testing arm")
        rewards = self.test.arms[feasible] @ self.theta_r
        top = np.max(rewards)
        if np.count_nonzero(rewards == top) != 1:
            raise InvalidInstanceError("best feasible arm is not unique")
        best = int(feasible[int(np.argmax(rewards))])
        z_star = self.test.arms[best]
        dup = np.all(self.test.arms == z_star, axis=1)
        dup[best] = False
        if np.any(dup):
            raise InvalidInstanceError("exact duplicate of the best feasible arm")
        if abs(costs[best] - self.tau) == 0.0:
            warnings.warn(
                "best feasible arm sits exactly on the cost boundary; "
                "the hardness exponent is zero and uniqueness is fragile",
                stacklevel=3,
            )


def _span_contains(basis: np.ndarray, probe: np.ndarray) -> bool:
    """True when every row of ``probe`` lies in the row span of ``basis``."""
    s_basis = np.linalg.svd(basis, compute_uv=False)
    tol = SPAN_TOL * s_basis[0] if s_basis[0] > 0 else SPAN_TOL
    rank_basis = int(np.sum(s_basis > tol))
    stacked = np.vstack([basis, probe])
    s_all = np.linalg.svd(stacked, compute_uv=False)
    tol_all = SPAN_TOL * s_all[0] if s_all[0] > 0 else SPAN_TOL
    rank_all = int(np.sum(s_all > tol_all))
    return rank_all == rank_basis


def best_feasible_arm(inst: Instance) -> int:
    """Index of the feasible testing arm with the highest expected reward."""
    costs = inst.test.arms @ inst.theta_c
    feasible = np.flatnonzero(costs <= inst.tau)
    if feasible.size == 0:
        raise InvalidInstanceError("no feasible testing arm")
    rewards = inst.test.arms[feasible] @ inst.theta_r
    return int(feasible[int(np.argmax(rewards))])


def classify_arms(inst: Instance) -> ArmClassification:
    """Partition Z \\ {z*} by the sign of the reward gap and the cost slack."""
    best = best_feasible_arm(inst)
    rewards = inst.test.arms @ inst.theta_r
    costs = inst.test.arms @ inst.theta_c
    a1, a2, a3 = [], [], []
    for i in range(len(inst.test)):
        if i == best:
            continue
        superoptimal = rewards[i] > rewards[best]
        feasible = costs[i] <= inst.tau
        if superoptimal and not feasible:
            a1.append(i)
        elif feasible and not superoptimal:
            a2.append(i)
        elif not feasible and not superoptimal:
            a3.append(i)
        else:
            # feasible and strictly better than z*: contradicts optimality
            raise InvalidInstanceError("feasible arm beats the best feasible arm")
    return ArmClassification(best=best, a1=tuple(a1), a2=tuple(a2), a3=tuple(a3))


def is_alternative(theta1: np.ndarray, theta2: np.ndarray, z_index: int,
                   inst: Instance) -> bool:
    """Whether arm ``z_index`` fails to be the best feasible arm under
    (theta1, theta2).

    True when the arm is infeasible under theta2, or some other arm is
    feasible under theta2 and matches or beats it in reward under theta1.
    Reward ties count as displacement, consistent with the strict
    uniqueness assumption on the truth.
    """
    z_arms = inst.test.arms
    z = z_arms[z_index]
    if float(z @ theta2) > inst.tau:
        return True
    rewards = z_arms @ theta1
    costs = z_arms @ theta2
    displacers = (rewards >= rewards[z_index]) & (costs <= inst.tau)
    displacers[z_index] = False
    return bool(np.any(displacers))


# JSON instance files: exact field set, unknown keys rejected.
_INSTANCE_FIELDS = {"d", "train", "test", "theta_r", "theta_c", "tau",
                    "sigma", "gamma", "r1", "r2"}


def instance_to_dict(inst: Instance) -> dict:
    return {
        "d": inst.dim,
        "train": inst.train.arms.tolist(),
        "test": inst.test.arms.tolist(),
        "theta_r": inst.theta_r.tolist(),
        "theta_c": inst.theta_c.tolist(),
        "tau": inst.tau,
        "sigma": inst.sigma,
        "gamma": inst.gamma_noise,
        "r1": inst.r1_bound,
        "r2": inst.r2_bound,
    }


def instance_from_dict(payload: dict, name: str = "instance") -> Instance:
    keys = set(payload.keys())
    unknown = keys - _INSTANCE_FIELDS
    if unknown:
        raise InvalidInstanceError(f"unknown instance fields: {sorted(unknown)}")
    missing = _INSTANCE_FIELDS - keys
    if missing:
        raise InvalidInstanceError(f"missing instance fields: {sorted(missing)}")
    d = int(payload["d"])
    train = ArmSet(np.asarray(payload["train"], dtype=float))
    test = ArmSet(np.asarray(payload["test"], dtype=float))
    if train.dim != d or test.dim != d:
        raise InvalidInstanceError("declared dimension differs from arm vectors")
    return Instance(
        train=train,
        test=test,
        theta_r=np.asarray(payload["theta_r"], dtype=float),
        theta_c=np.asarray(payload["theta_c"], dtype=float),
        tau=float(payload["tau"]),
        sigma=float(payload["sigma"]),
        gamma_noise=float(payload["gamma"]),
        r1_bound=float(payload["r1"]),
        r2_bound=float(payload["r2"]),
        name=name,
    )


def save_instance(inst: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise InvalidInstanceError("instance file must hold a JSON object")
    return instance_from_dict(payload, name=str(path))
