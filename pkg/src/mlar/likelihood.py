"""Component and manifest log-likelihoods via the scaled forward recursion.

Emission values are shifted by their per-(subject, occasion) maximum before
the recursion so nothing under- or overflows even for long panels or
continuous densities; the shift is added back on the log scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .model import Dataset, ModelSpec, Parameters
from .quadrature import QuadratureGrid
from .response import response_logprob_table


class NumericalError(RuntimeError):
    """Non-finite intermediate: the parameters are degenerate for these data."""


@dataclass(frozen=True, eq=False)
class ForwardResult:
    """Forward-pass output for a whole dataset.

    log_p_component[i, h] is the log-likelihood of subject i under component
    h alone; log_p_manifest[i] mixes the components with their weights.
    When built with keep=True, the scaled forward variables are retained for
    the smoothing pass: probs/ahat are (k, n, T, q), c is (k, n, T) and
    shift is the per-cell emission shift (n, T).
    """

    log_p_component: np.ndarray
    log_p_manifest: np.ndarray
    probs: np.ndarray | None = None
    ahat: np.ndarray | None = None
    c: np.ndarray | None = None
    shift: np.ndarray | None = None

    @property
    def total(self) -> float:
        return float(self.log_p_manifest.sum())


def forward_all(
    params: Parameters,
    grid: QuadratureGrid,
    data: Dataset,
    spec: ModelSpec,
    keep: bool = False,
) -> ForwardResult:
    grid = grid.with_rho(params.rho)
    logp = response_logprob_table(params, spec, data, grid.knots)  # (k, n, T, q)
    shift = logp.max(axis=(0, 3))  # (n, T)
    probs = np.exp(logp - shift[None, :, :, None])
    k, n, T, q = probs.shape

    log_p_component = np.empty((n, k))
    ahat_all = np.empty_like(probs) if keep else None
    c_all = np.empty((k, n, T)) if keep else None
    shift_total = shift.sum(axis=1)
    for h in range(k):
        try:
            ahat, c = _kernels.forward(probs[h], grid.w_init, grid.w_trans[h])
        except ZeroDivisionError:  # numba raises on a zero normalizer
            raise NumericalError(
                f"forward recursion degenerated for component {h + 1}"
            ) from None
        if not np.all(c > 0) or not np.all(np.isfinite(c)):
            raise NumericalError(f"forward recursion degenerated for component {h + 1}")
        log_p_component[:, h] = np.log(c).sum(axis=1) + shift_total
        if keep:
            ahat_all[h] = ahat
            c_all[h] = c
    log_p_manifest = logsumexp(log_p_component + np.log(params.pi)[None, :], axis=1)
    return ForwardResult(
        log_p_component,
        log_p_manifest,
        probs if keep else None,
        ahat_all,
        c_all,
        shift if keep else None,
    )


def component_loglik(
    i: int, h: int, params: Parameters, grid: QuadratureGrid, data: Dataset, spec: ModelSpec
) -> float:
    """log p(y_i | X_i, component h) for one subject."""
    res = forward_all(params, grid, data.subject(i), spec)
    return float(res.log_p_component[0, h])


def manifest_loglik(
    i: int, params: Parameters, grid: QuadratureGrid, data: Dataset, spec: ModelSpec
) -> float:
    """log p(y_i | X_i) for one subject, mixing over components."""
    res = forward_all(params, grid, data.subject(i), spec)
    return float(res.log_p_manifest[0])


def total_loglik(
    params: Parameters, grid: QuadratureGrid, data: Dataset, spec: ModelSpec
) -> float:
    """Sample log-likelihood; subjects reduced in fixed ascending order."""
    return forward_all(params, grid, data, spec).total


def dataset_loglik(params: Parameters, data: Dataset, spec: ModelSpec) -> float:
    """Convenience wrapper building the grid from the model configuration."""
    from .quadrature import build_grid

    return total_loglik(params, build_grid(spec, params.rho), data, spec)
