"""Stochastic environment: seeded randomness streams and noisy pulls.

Randomness comes from numpy's Philox counter-based generator, so a given
seed reproduces the same draw sequence bit-for-bit on a given platform.
Per-run seeds are derived from the master seed with a keyed blake2b hash,
which keeps streams for distinct (algorithm, repetition) pairs disjoint.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .core import Instance


class RngStream:
    """A single-owner random stream for one simulation run.

    Wraps ``numpy.random.Generator`` over the Philox bit generator.
    Normal variates use numpy's ziggurat transform; the generator choice
    is fixed here so that CSV outputs are reproducible across machines
    running the same numpy build.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None):
        return int(self._gen.integers(low, high))

    def categorical(self, probs: np.ndarray) -> int:
        """Draw an index with the given probabilities via inverse CDF."""
        u = self._gen.random()
        cdf = np.cumsum(probs)
        # guard against cumulated rounding at the top end
        cdf[-1] = max(cdf[-1], 1.0)
        return int(np.searchsorted(cdf, u, side="right"))


def split_seed(master_seed: int, algorithm_id: str, repetition: int) -> int:
    """Stable 64-bit run seed for (master seed, algorithm, repetition).

    blake2b over a canonical text key; documented and fixed so result
    files can be regenerated byte-identically.
    """
    key = f"{int(master_seed)}/{algorithm_id}/{int(repetition)}".encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big")


def pull(inst: Instance, x_index: int, rng: RngStream) -> tuple:
    """Pull training arm ``x_index`` and observe a noisy (reward, cost) pair.

    Reward noise is N(0, sigma^2), cost noise N(0, gamma^2), independent;
    the reward draw always precedes the cost draw in the stream.
    """
    x = inst.train.arms[x_index]
    eps = rng.standard_normal() * inst.sigma
    eta = rng.standard_normal() * inst.gamma_noise
    return float(x @ inst.theta_r + eps), float(x @ inst.theta_c + eta)
