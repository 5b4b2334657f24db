"""Forward/backward recursions over the knot grid: the hot inner loops.

Two interchangeable implementations exist: numba-compiled subject loops and
a batched pure-numpy path (matrix products across subjects).  Dispatch is
decided at import time by ``MLAR_DISABLE_NUMBA`` (see ``_config``); both
implementations stay importable so they can be compared and benchmarked.

Scaling follows the standard normalized-forward-variable scheme: ahat rows
sum to 1, c holds the per-step normalizers, and the log-likelihood of a
subject is sum_t log c_t (plus any emission shift applied by the caller).
"""

from __future__ import annotations

import numpy as np

from ._config import HAVE_NUMBA, USE_NUMBA


def forward_numpy(probs: np.ndarray, w_init: np.ndarray, w_trans: np.ndarray):
    """Scaled forward pass for all subjects at once.

    probs: (n, T, q) emission values for one mixture component.
    Returns (ahat (n, T, q), c (n, T)).
    """
    n, T, q = probs.shape
    ahat = np.empty_like(probs)
    c = np.empty((n, T))
    a = probs[:, 0, :] * w_init
    c[:, 0] = a.sum(axis=1)
    ahat[:, 0, :] = a / c[:, 0, None]
    for t in range(1, T):
        a = (ahat[:, t - 1, :] @ w_trans) * probs[:, t, :]
        c[:, t] = a.sum(axis=1)
        ahat[:, t, :] = a / c[:, t, None]
    return ahat, c


def backward_numpy(
    probs: np.ndarray,
    w_trans: np.ndarray,
    ahat: np.ndarray,
    c: np.ndarray,
    weights: np.ndarray,
):
    """Scaled backward pass producing knot occupancies and the
    weight-pooled transition expectation.

    Returns (gamma (n, T, q), F (q, q)) where each gamma row (fixed i, t)
    sums to 1, and F = sum_i weights[i] * sum_{t>1} E[transition (m1, m2)].
    """
    n, T, q = probs.shape
    gamma = np.empty_like(probs)
    F = np.zeros((q, q))
    b = np.ones((n, q))
    gamma[:, T - 1, :] = ahat[:, T - 1, :]
    for t in range(T - 1, 0, -1):
        s = probs[:, t, :] * b / c[:, t, None]
        F += w_trans * ((ahat[:, t - 1, :] * weights[:, None]).T @ s)
        b = s @ w_trans.T
        gamma[:, t - 1, :] = ahat[:, t - 1, :] * b
    return gamma, F


if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True, fastmath=True)
    def forward_numba(probs, w_init, w_trans):  # pragma: no cover - mirrored by numpy path
        n, T, q = probs.shape
        ahat = np.empty((n, T, q))
        c = np.empty((n, T))
        anew = np.empty(q)
        for i in range(n):
            tot = 0.0
            for m in range(q):
                v = probs[i, 0, m] * w_init[m]
                ahat[i, 0, m] = v
                tot += v
            c[i, 0] = tot
            for m in range(q):
                ahat[i, 0, m] /= tot
            for t in range(1, T):
                for m2 in range(q):
                    anew[m2] = 0.0
                for m1 in range(q):  # row-major sweep keeps w_trans access contiguous
                    a1 = ahat[i, t - 1, m1]
                    for m2 in range(q):
                        anew[m2] += a1 * w_trans[m1, m2]
                tot = 0.0
                for m2 in range(q):
                    v = anew[m2] * probs[i, t, m2]
                    ahat[i, t, m2] = v
                    tot += v
                c[i, t] = tot
                for m2 in range(q):
                    ahat[i, t, m2] /= tot
        return ahat, c

    @njit(cache=True, fastmath=True)
    def backward_numba(probs, w_trans, ahat, c, weights):  # pragma: no cover
        n, T, q = probs.shape
        gamma = np.empty((n, T, q))
        F = np.zeros((q, q))
        s = np.empty(q)
        b = np.empty(q)
        bn = np.empty(q)
        for i in range(n):
            wi = weights[i]
            for m in range(q):
                b[m] = 1.0
                gamma[i, T - 1, m] = ahat[i, T - 1, m]
            for t in range(T - 1, 0, -1):
                ct = c[i, t]
                for m2 in range(q):
                    s[m2] = probs[i, t, m2] * b[m2] / ct
                for m1 in range(q):
                    am1 = ahat[i, t - 1, m1]
                    wam = wi * am1
                    acc = 0.0
                    for m2 in range(q):
                        w12 = w_trans[m1, m2] * s[m2]
                        F[m1, m2] += wam * w12
                        acc += w12
                    bn[m1] = acc
                    gamma[i, t - 1, m1] = am1 * acc
                b, bn = bn, b
        return gamma, F

else:  # pragma: no cover
    forward_numba = None
    backward_numba = None


if USE_NUMBA:
    forward = forward_numba
    backward_smooth = backward_numba
else:
    forward = forward_numpy
    backward_smooth = backward_numpy
