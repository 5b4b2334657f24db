"""E-step posteriors, the three M-step updates, the EM loop, and default
starting values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtri

from . import _kernels
from .likelihood import NumericalError, forward_all
from .model import (
    Dataset,
    ModelSpec,
    Parameters,
    cut_jacobian,
    layout,
    pack,
    resp_block_size,
    unpack,
)
from .quadrature import QuadratureGrid, build_grid, transition_logweights
from .response import weighted_score_hess

RHO_UMAX = 7.0  # atanh bound for the 1-d correlation search; tanh(7) ~ 0.9999983


@dataclass(frozen=True, eq=False)
class Posteriors:
    """Posterior expectations from one E-step.

    w_hat[i, h] is the posterior component probability of subject i.
    occ[h, i, t, m] is the knot occupancy posterior given component h.
    trans_suff[h] pools the expected knot transitions over subjects,
    weighted by w_hat[:, h].
    resp_weights[h, i, t, m] = w_hat[i, h] * occ[h, i, t, m].
    """

    w_hat: np.ndarray
    occ: np.ndarray
    trans_suff: np.ndarray
    log_p_component: np.ndarray
    log_p_manifest: np.ndarray

    @property
    def loglik(self) -> float:
        return float(self.log_p_manifest.sum())

    @property
    def resp_weights(self) -> np.ndarray:
        return self.w_hat.T[:, :, None, None] * self.occ


def e_step(
    params: Parameters, grid: QuadratureGrid, data: Dataset, spec: ModelSpec
) -> Posteriors:
    """Forward-backward posteriors at the current parameters."""
    grid = grid.with_rho(params.rho)
    fwd = forward_all(params, grid, data, spec, keep=True)
    logw = fwd.log_p_component + np.log(params.pi)[None, :] - fwd.log_p_manifest[:, None]
    w_hat = np.exp(logw)
    w_hat /= w_hat.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(w_hat)):
        raise NumericalError("non-finite posterior component weights")

    k, n, T, q = fwd.probs.shape
    occ = np.empty_like(fwd.probs)
    trans = np.empty((k, q, q))
    for h in range(k):
        gamma, F = _kernels.backward_smooth(
            fwd.probs[h], grid.w_trans[h], fwd.ahat[h], fwd.c[h], w_hat[:, h].copy()
        )
        occ[h] = gamma
        trans[h] = F
    return Posteriors(w_hat, occ, trans, fwd.log_p_component, fwd.log_p_manifest)


def m_step_pi(post: Posteriors) -> np.ndarray:
    """Closed-form mixture weight update: column means of w_hat."""
    pi = post.w_hat.sum(axis=0)
    return pi / pi.sum()


def _rho_objective(F: np.ndarray, knots: np.ndarray, rho: float) -> float:
    return float(np.sum(F * transition_logweights(knots, rho)))


def m_step_rho(F: np.ndarray, knots: np.ndarray, prev_rho: float = 0.0) -> float:
    """Maximize sum F * log(weights(rho)) over rho in (-1, 1).

    The search runs on atanh(rho) with a bounded 1-d optimizer (tolerance
    1e-9).  An all-zero F carries no information; the previous value is kept
    and a warning is emitted.
    """
    if not np.any(F):
        warnings.warn("no transition information; keeping previous correlation")
        return prev_rho
    res = minimize_scalar(
        lambda u: -_rho_objective(F, knots, np.tanh(u)),
        bounds=(-RHO_UMAX, RHO_UMAX),
        method="bounded",
        options={"xatol": 1e-9},
    )
    rho_new = float(np.tanh(res.x))
    # never step downhill: guards monotonicity when the objective is very flat
    if abs(prev_rho) < 1 and _rho_objective(F, knots, rho_new) < _rho_objective(F, knots, prev_rho):
        return prev_rho
    return rho_new


def _resp_chain(u_resp: np.ndarray, spec: ModelSpec):
    """Jacobian d(constrained)/d(unconstrained) for the response block and
    the slot indices of the log-transformed coordinates."""
    ncut = spec.family.n_cut
    d = len(u_resp)
    J = np.eye(d)
    J[:ncut, :ncut] = cut_jacobian(u_resp[:ncut])
    i_sig = ncut + spec.p
    J[i_sig, i_sig] = np.exp(u_resp[i_sig])
    i_eps = None
    if spec.family.is_continuous:
        i_eps = i_sig + 1
        J[i_eps, i_eps] = np.exp(u_resp[i_eps])
    return J, i_sig, i_eps


def _resp_eval(
    u_full: np.ndarray,
    spec: ModelSpec,
    data: Dataset,
    knots: np.ndarray,
    rw: np.ndarray,
    free: np.ndarray,
    want_hess: bool,
):
    """Objective/gradient/Hessian of the weighted response log-likelihood on
    the unconstrained response block, restricted to the free coordinates.

    ``free`` is a boolean mask over the response block (the leading
    coordinates of the packed vector)."""
    nresp = resp_block_size(spec)
    params = unpack(u_full, spec)
    Q, g_c, H_c = weighted_score_hess(
        params, spec, data, knots, rw, want_grad=True, want_hess=want_hess
    )
    if not np.isfinite(Q):
        nfree = int(free.sum())
        bad = np.full((nfree, nfree), np.nan) if want_hess else None
        return -np.inf, np.full(nfree, np.nan), bad
    u_resp = u_full[:nresp]
    J, i_sig, i_eps = _resp_chain(u_resp, spec)
    g_u = J.T @ g_c
    H_u = None
    if want_hess:
        H_u = J.T @ H_c @ J
        # curvature of the coordinate transforms
        ncut = spec.family.n_cut
        for l in range(1, ncut):
            H_u[l, l] += -np.exp(u_resp[l]) * g_c[l:ncut].sum()
        H_u[i_sig, i_sig] += g_c[i_sig] * np.exp(u_resp[i_sig])
        if i_eps is not None:
            H_u[i_eps, i_eps] += g_c[i_eps] * np.exp(u_resp[i_eps])
        H_u = H_u[np.ix_(free, free)]
    return Q, g_u[free], H_u


def _maximize_resp_block(
    u_full: np.ndarray,
    spec: ModelSpec,
    data: Dataset,
    knots: np.ndarray,
    rw: np.ndarray,
    free: np.ndarray,
    grad_tol: float = 1e-7,
    max_iter: int = 50,
):
    """Newton-Raphson with step halving on the unconstrained response block.

    Returns (updated full vector, info dict).  The objective never decreases.
    """
    u = u_full.copy()
    info = {"iterations": 0, "ridge": False, "stalled": False}
    Q, g, H = _resp_eval(u, spec, data, knots, rw, free, want_hess=True)
    for _ in range(max_iter):
        info["grad_norm"] = float(np.abs(g).max()) if g.size else 0.0
        if info["grad_norm"] < grad_tol or g.size == 0:
            break
        A = -H
        try:
            delta = np.linalg.solve(A, g)
        except np.linalg.LinAlgError:
            delta = None
        if delta is None or not np.all(np.isfinite(delta)) or g @ delta <= 0:
            ridge = 1e-8 * (1.0 + np.trace(A) / max(len(g), 1))
            while True:
                try:
                    delta = np.linalg.solve(A + ridge * np.eye(len(g)), g)
                except np.linalg.LinAlgError:
                    delta = None
                if delta is not None and np.all(np.isfinite(delta)) and g @ delta > 0:
                    break
                ridge *= 10.0
                if ridge > 1e12:
                    delta = g.copy()  # gradient ascent as last resort
                    break
            info["ridge"] = True
        step = 1.0
        accepted = False
        for _half in range(11):
            u_try = u.copy()
            u_try[np.nonzero(free)[0]] += step * delta
            try:
                Q_try, g_try, H_try = _resp_eval(u_try, spec, data, knots, rw, free, True)
            except (ValueError, FloatingPointError):
                Q_try = -np.inf
            if np.isfinite(Q_try) and Q_try >= Q - 1e-12:
                u, Q, g, H = u_try, Q_try, g_try, H_try
                accepted = True
                break
            step /= 2.0
        info["iterations"] += 1
        if not accepted:
            info["stalled"] = True
            break
    info["objective"] = Q
    info["grad_norm"] = float(np.abs(g).max()) if g.size else 0.0
    return u, info


def m_step_response(
    params: Parameters,
    spec: ModelSpec,
    data: Dataset,
    knots: np.ndarray,
    post: Posteriors,
    grad_tol: float = 1e-7,
    max_iter: int = 50,
):
    """Update (cut, beta, sigma[, sigma_eps2], xi_2..k) by weighted NR.

    Returns (params, info).  xi_1 stays 0 and sigma stays positive because
    the iteration runs on the unconstrained scale.
    """
    u = pack(params)
    free = np.ones(resp_block_size(spec), dtype=bool)
    rw = post.resp_weights
    u_new, info = _maximize_resp_block(
        u, spec, data, knots, rw, free, grad_tol=grad_tol, max_iter=max_iter
    )
    return unpack(u_new, spec), info


@dataclass(frozen=True)
class EMResult:
    theta: Parameters
    loglik: float
    trajectory: list
    iterations: int
    converged: bool


def em_step(
    params: Parameters, spec: ModelSpec, data: Dataset, grid: QuadratureGrid, post: Posteriors
) -> Parameters:
    """One full M-step from given posteriors."""
    pi_new = m_step_pi(post)
    rho_new = np.array(
        [
            m_step_rho(post.trans_suff[h], grid.knots, prev_rho=params.rho[h])
            for h in range(spec.k)
        ]
    )
    mid = params.replace(pi=pi_new, rho=rho_new)
    new_params, _ = m_step_response(mid, spec, data, grid.knots, post)
    return new_params


def em_fit(
    data: Dataset,
    spec: ModelSpec,
    theta0: Parameters,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> EMResult:
    """Alternate E- and M-steps until the log-likelihood gain drops below tol."""
    grid = build_grid(spec, theta0.rho)
    theta = theta0
    post = e_step(theta, grid, data, spec)
    traj = [post.loglik]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        theta = em_step(theta, spec, data, grid, post)
        grid = grid.with_rho(theta.rho)
        post = e_step(theta, grid, data, spec)
        traj.append(post.loglik)
        if not np.isfinite(traj[-1]):
            raise NumericalError(f"non-finite log-likelihood at EM iteration {it}")
        if traj[-1] - traj[-2] < tol:
            converged = True
            break
    return EMResult(theta, traj[-1], traj, it, converged)


# ---------------------------------------------------------------------------
# starting values


def _pooled_start(data: Dataset, spec: ModelSpec):
    """Fit intercepts and slopes ignoring the latent process entirely."""
    fam = spec.family
    y = data.y
    nT = y.size
    if fam.is_continuous:
        cut0 = np.array([float(y.mean())])
        resid_var = float(y.var())
        s2_0 = max(resid_var, 1e-6)
    else:
        # marginal cumulative shares give natural intercept starts
        if fam.is_binary:
            probs_ge = np.array([(y >= 1).mean()])
        else:
            probs_ge = np.array([(y >= j).mean() for j in range(2, fam.categories + 1)])
        probs_ge = np.clip(probs_ge, 0.5 / nT, 1 - 0.5 / nT)
        if fam.is_probit:
            cut0 = ndtri(probs_ge)
        else:
            cut0 = np.log(probs_ge / (1 - probs_ge))
        cut0 = np.minimum.accumulate(cut0)  # enforce non-increasing under ties
        cut0 = cut0 - np.arange(len(cut0)) * 1e-6
        s2_0 = None
        resid_var = None

    spec1 = ModelSpec(fam, spec.p, 1, max(spec.q, 3), spec.knot_bound)
    params0 = Parameters(
        cut=cut0,
        beta=np.zeros(spec.p),
        sigma=1.0,
        xi=[0.0],
        rho=[0.0],
        pi=[1.0],
        sigma_eps2=s2_0,
    )
    knots0 = np.zeros(1)
    rw = np.ones((1, data.n, data.T, 1))
    u = pack(params0)
    lay = layout(spec1)
    free = np.zeros(resp_block_size(spec1), dtype=bool)
    free[lay.cut] = True
    free[lay.beta] = True
    if lay.eps is not None:
        free[lay.eps] = True
    u_new, _ = _maximize_resp_block(u, spec1, data, knots0, rw, free, max_iter=80)
    fitted = unpack(u_new, spec1)
    if fam.is_continuous:
        resid = y - (fitted.cut[0] + data.X @ fitted.beta)
        resid_var = max(float(resid.var()), 1e-6)
    return fitted.cut, fitted.beta, resid_var


def _sigma_start(spec: ModelSpec, resid_var) -> tuple[float, float | None]:
    fam = spec.family
    if fam.is_continuous:
        half = max(resid_var / 2.0, 1e-6)
        return float(np.sqrt(half)), half
    # latent scale comparable to the error-law scale
    return (1.0, None) if fam.is_probit else (float(np.pi / np.sqrt(3.0)), None)


def default_start(
    data: Dataset,
    spec: ModelSpec,
    base_k1: Parameters | None = None,
    base_em_iters: int = 80,
) -> Parameters:
    """Default starting values.

    A pooled no-latent fit seeds the intercepts and slopes; the latent scale
    starts at the error-law scale.  For k > 1 a one-component model is fitted
    first (or taken from ``base_k1``) and replicated, offsetting the support
    points by multiples of the fitted scale and the correlations by +/-0.2.
    """
    cut0, beta0, resid_var = _pooled_start(data, spec)
    sigma0, s2_0 = _sigma_start(spec, resid_var)
    theta1 = Parameters(
        cut=cut0, beta=beta0, sigma=sigma0, xi=[0.0], rho=[0.5], pi=[1.0], sigma_eps2=s2_0
    )
    if spec.k == 1:
        return theta1
    if base_k1 is None:
        spec1 = ModelSpec(spec.family, spec.p, 1, spec.q, spec.knot_bound)
        base_k1 = em_fit(data, spec1, theta1, max_iter=base_em_iters, tol=1e-4).theta
    sig = base_k1.sigma
    rho_hat = float(base_k1.rho[0])
    xi = np.zeros(spec.k)
    rho = np.empty(spec.k)
    rho[0] = rho_hat
    for h in range(1, spec.k):
        mult = (h + 1) // 2
        sign = 1.0 if h % 2 == 1 else -1.0
        xi[h] = sign * mult * sig
        rho[h] = rho_hat - 0.2 * (1 if h % 2 == 1 else -1) * mult
    rho = np.clip(rho, -0.95, 0.95)
    return Parameters(
        cut=base_k1.cut,
        beta=base_k1.beta,
        sigma=sig,
        xi=xi,
        rho=rho,
        pi=np.full(spec.k, 1.0 / spec.k),
        sigma_eps2=base_k1.sigma_eps2,
    )


def random_starts(
    base: Parameters, n_starts: int, seed: int, scale: float = 0.5
) -> list[Parameters]:
    """Seeded random perturbations of a base start (multi-start searches)."""
    rng = np.random.default_rng(seed)
    out = []
    k = base.k
    for _ in range(n_starts):
        xi = base.xi + np.concatenate([[0.0], rng.normal(0, scale * base.sigma, k - 1)])
        rho = np.clip(base.rho + rng.normal(0, 0.15, k), -0.95, 0.95)
        w = np.exp(rng.normal(0, 0.3, k))
        out.append(base.replace(xi=xi, rho=rho, pi=w / w.sum()))
    return out
