"""Knot grid and weights discretizing the standardized latent AR(1) process.

Knots are equispaced between -bound and +bound.  Initial weights are
self-normalized standard-normal densities at the knots.  Transition weights
for correlation rho are conditional-normal densities, normalized over the
destination knot so every row of the transition matrix is a proper
conditional distribution (row-stochastic), mirroring a hidden-Markov
transition matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import ModelSpec


def make_knots(q: int, bound: float) -> np.ndarray:
    """q equispaced knots on [-bound, bound]; exactly antisymmetric about 0."""
    if q < 3:
        raise ValueError("need at least 3 knots")
    if not bound > 0:
        raise ValueError("bound must be positive")
    v = np.linspace(-bound, bound, q)
    return (v - v[::-1]) / 2.0


def initial_weights(knots: np.ndarray) -> np.ndarray:
    """Standard-normal density at each knot, normalized to sum to 1."""
    ll = -0.5 * knots**2
    w = np.exp(ll - logsumexp(ll))
    return w / w.sum()


def transition_logweights(knots: np.ndarray, rho: float) -> np.ndarray:
    """Log of the q x q transition weight matrix for correlation rho."""
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    v = 1.0 - rho * rho
    resid = knots[None, :] - rho * knots[:, None]
    ll = -0.5 * np.log(v) - resid * resid / (2.0 * v)
    return ll - logsumexp(ll, axis=1, keepdims=True)


def transition_weights(knots: np.ndarray, rho: float) -> np.ndarray:
    """Row-stochastic q x q matrix of conditional knot weights."""
    w = np.exp(transition_logweights(knots, rho))
    return w / w.sum(axis=1, keepdims=True)


def transition_logweights_drho(knots: np.ndarray, rho: float) -> np.ndarray:
    """Elementwise derivative of log transition weights with respect to rho."""
    v = 1.0 - rho * rho
    resid = knots[None, :] - rho * knots[:, None]
    # d/drho of the unnormalized log density, then center by the row average
    # under the weights themselves (derivative of the log normalizer).
    dll = rho / v + resid * knots[:, None] / v - resid * resid * rho / (v * v)
    w = transition_weights(knots, rho)
    return dll - (w * dll).sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Immutable knot grid with initial weights and per-component transitions."""

    knots: np.ndarray
    w_init: np.ndarray
    w_trans: np.ndarray  # (k, q, q)
    rho: np.ndarray

    @property
    def q(self) -> int:
        return len(self.knots)

    def with_rho(self, rho: np.ndarray) -> "QuadratureGrid":
        """Return a grid whose transition matrices match the given rho vector."""
        rho = np.asarray(rho, dtype=float).reshape(-1)
        if self.w_trans.shape[0] == len(rho) and np.array_equal(self.rho, rho):
            return self
        w_trans = np.stack([transition_weights(self.knots, r) for r in rho])
        return QuadratureGrid(self.knots, self.w_init, w_trans, rho.copy())


def build_grid(spec: ModelSpec, rho: np.ndarray | None = None) -> QuadratureGrid:
    """Build the grid for a spec; transitions are realigned lazily if rho changes."""
    knots = make_knots(spec.q, spec.knot_bound)
    if rho is None:
        rho = np.zeros(spec.k)
    rho = np.asarray(rho, dtype=float).reshape(-1)
    w_trans = np.stack([transition_weights(knots, r) for r in rho])
    return QuadratureGrid(knots, initial_weights(knots), w_trans, rho.copy())
