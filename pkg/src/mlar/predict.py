"""Posterior prediction of latent effects and the two model-selection loops
(number of quadrature points, number of mixture components).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .em import Posteriors, default_start, e_step
from .model import Dataset, ModelSpec, Parameters
from .newton import FitControls, fit_mlar
from .quadrature import QuadratureGrid, build_grid


@dataclass(frozen=True, eq=False)
class PredictionSurface:
    """Posterior latent-effect means and the MAP component per subject."""

    alpha_hat: np.ndarray  # (n, T)
    component_map: np.ndarray  # (n,)


def predict_alpha(
    params: Parameters,
    grid: QuadratureGrid,
    data: Dataset,
    spec: ModelSpec,
    post: Posteriors | None = None,
) -> PredictionSurface:
    """Posterior mean of the latent effect per (subject, occasion):
    a weighted average of xi_h + nu_m * sigma over the joint posterior."""
    grid = grid.with_rho(params.rho)
    if post is None:
        post = e_step(params, grid, data, spec)
    values = params.xi[:, None] + grid.knots[None, :] * params.sigma  # (k, q)
    alpha = np.einsum("hntm,hm->nt", post.resp_weights, values)
    return PredictionSurface(alpha, np.argmax(post.w_hat, axis=1))


@dataclass(frozen=True)
class QStep:
    q: int
    loglik: float
    diff: float | None


@dataclass
class SelectionReport:
    q_paths: dict = field(default_factory=dict)  # k -> list[QStep]
    chosen_q: dict = field(default_factory=dict)  # k -> int
    k_path: list = field(default_factory=list)  # (k, q, loglik, corr with k-1)
    chosen_k: int | None = None
    flags: list = field(default_factory=list)


def choose_q_from_path(logliks: list[float], tol: float) -> int | None:
    """Index (into the path) of the first value whose absolute difference
    from its predecessor is below tol; None when the path never stabilizes.

    The rule uses |difference| because refining the grid can lower the
    maximized value slightly before it settles.
    """
    for idx in range(1, len(logliks)):
        if abs(logliks[idx] - logliks[idx - 1]) < tol:
            return idx
    return None


def select_q(
    data: Dataset,
    spec: ModelSpec,
    k: int,
    q0: int = 21,
    step: int = 10,
    tol: float = 1e-3,
    q_max: int = 101,
    controls: FitControls = FitControls(),
    theta0: Parameters | None = None,
):
    """Refit with q0, q0+step, ... until the maximum log-likelihood moves by
    less than tol; each refit warm-starts from the previous estimate.

    Returns (q_star, steps, fit, flagged) where flagged means q_max was hit
    without stabilizing.
    """
    steps: list[QStep] = []
    prev_ll = None
    fit = None
    q = q0
    while q <= q_max:
        spec_q = dataclasses.replace(spec, k=k, q=q)
        fit = fit_mlar(data, spec_q, theta0=theta0, controls=controls)
        theta0 = fit.params
        diff = None if prev_ll is None else fit.loglik - prev_ll
        steps.append(QStep(q, fit.loglik, diff))
        if diff is not None and abs(diff) < tol:
            return q, steps, fit, False
        prev_ll = fit.loglik
        if tol == np.inf:  # degenerate control: accept the first fit
            return q, steps, fit, False
        q += step
    return min(q - step, q_max), steps, fit, True


def choose_k_from_corrs(corrs: dict[int, float], threshold: float) -> int | None:
    """First k (ascending) whose correlation with the k-1 surface exceeds
    the threshold; None if none does."""
    for k in sorted(corrs):
        if corrs[k] > threshold:
            return k
    return None


def surface_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation between two flattened prediction surfaces."""
    return float(np.corrcoef(a.reshape(-1), b.reshape(-1))[0, 1])


def select_k(
    data: Dataset,
    spec: ModelSpec,
    threshold: float = 0.99,
    k_max: int = 4,
    q0: int = 21,
    q_step: int = 10,
    q_tol: float = 1e-3,
    q_max: int = 101,
    controls: FitControls = FitControls(),
):
    """Grow k until consecutive latent predictions correlate above the
    threshold; each k first selects its own q.

    Returns (k_star, report, final_fit).
    """
    report = SelectionReport()
    prev_surface = None
    base_k1 = None
    final_fit = None
    k_star = None
    for k in range(1, k_max + 1):
        theta0 = None
        if k > 1:
            # replicate-and-offset start from the already fitted k=1 model
            spec_k = dataclasses.replace(spec, k=k)
            theta0 = default_start(data, spec_k, base_k1=base_k1)
        q_star, q_steps, fit, q_flag = select_q(
            data, spec, k, q0=q0, step=q_step, tol=q_tol, q_max=q_max,
            controls=controls, theta0=theta0,
        )
        if q_flag:
            report.flags.append(f"q-path for k={k} hit q_max={q_max} without stabilizing")
        report.q_paths[k] = q_steps
        report.chosen_q[k] = q_star
        if k == 1:
            base_k1 = fit.params
        grid = build_grid(fit.spec, fit.params.rho)
        surface = predict_alpha(fit.params, grid, data, fit.spec).alpha_hat
        corr = None if prev_surface is None else surface_correlation(prev_surface, surface)
        report.k_path.append((k, q_star, fit.loglik, corr))
        if corr is not None and corr > threshold:
            k_star = k
            final_fit = fit
            break
        prev_surface = surface
        final_fit = fit
    if k_star is None:
        k_star = k_max
        report.flags.append(f"k_max={k_max} reached without the correlation rule firing")
    report.chosen_k = k_star
    return k_star, report, final_fit
