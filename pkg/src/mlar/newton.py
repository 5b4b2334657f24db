"""Score via the missing-information identity, numerically differentiated
observed information, Newton-Raphson refinement, standard errors, and the
combined EM + NR fit pipeline.

All Newton machinery operates on the unconstrained parameter vector; results
are transformed back to the reported (constrained) scale by the delta method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .em import Posteriors, _resp_chain, default_start, e_step, em_step
from .likelihood import NumericalError, total_loglik
from .model import (
    Dataset,
    ModelSpec,
    Parameters,
    count_parameters,
    layout,
    pack,
    resp_block_size,
    unpack,
)
from .quadrature import QuadratureGrid, build_grid, transition_logweights_drho
from .response import weighted_score_hess


def expected_complete_score(
    params: Parameters,
    grid: QuadratureGrid,
    data: Dataset,
    spec: ModelSpec,
    post: Posteriors,
) -> np.ndarray:
    """Gradient of the expected complete-data log-likelihood at the same
    parameters that produced the posteriors; equals the observed-data score."""
    lay = layout(spec)
    u = pack(params)
    g = np.zeros(lay.size)

    # response block, chained to the unconstrained scale
    _, g_c, _ = weighted_score_hess(
        params, spec, data, grid.knots, post.resp_weights, want_grad=True, want_hess=False
    )
    nresp = resp_block_size(spec)
    J, _, _ = _resp_chain(u[:nresp], spec)
    g[:nresp] = J.T @ g_c

    # correlation block: d/drho of sum F * log(weights), times drho/du
    for h in range(spec.k):
        dlogw = transition_logweights_drho(grid.knots, params.rho[h])
        drho = float(np.sum(post.trans_suff[h] * dlogw))
        g[lay.rho.start + h] = drho * (1.0 - params.rho[h] ** 2)

    # mixture weight block (multinomial logit, component 1 as reference)
    W = post.w_hat.sum(axis=0)
    g[lay.pi] = W[1:] - data.n * params.pi[1:]
    return g


def score(
    params: Parameters, grid: QuadratureGrid, data: Dataset, spec: ModelSpec
) -> np.ndarray:
    """Observed-data score on the unconstrained scale."""
    grid = grid.with_rho(params.rho)
    post = e_step(params, grid, data, spec)
    return expected_complete_score(params, grid, data, spec, post)


def observed_info(
    params: Parameters,
    grid: QuadratureGrid,
    data: Dataset,
    spec: ModelSpec,
    step_scale: float = 1e-5,
) -> np.ndarray:
    """Observed information: minus the central-difference Jacobian of the
    score, symmetrized.  Step per coordinate is step_scale * (1 + |u_j|)."""
    u0 = pack(params)
    d = len(u0)
    jac = np.empty((d, d))
    for j in range(d):
        hstep = step_scale * (1.0 + abs(u0[j]))
        up, dn = u0.copy(), u0.copy()
        up[j] += hstep
        dn[j] -= hstep
        s_up = score(unpack(up, spec), grid, data, spec)
        s_dn = score(unpack(dn, spec), grid, data, spec)
        col = (s_up - s_dn) / (2.0 * hstep)
        if not np.all(np.isfinite(col)):
            raise NumericalError(f"non-finite information column for coordinate {j}")
        jac[:, j] = col
    J = -jac
    return 0.5 * (J + J.T)


@dataclass(frozen=True, eq=False)
class SEReport:
    """Delta-method standard errors on the reported scale.

    ``cov`` holds the full constrained-scale covariance in the reported
    order [cut, beta, sigma, (sigma_eps2), xi, rho, pi].
    """

    cut: np.ndarray
    beta: np.ndarray
    sigma: float
    xi: np.ndarray
    rho: np.ndarray
    pi: np.ndarray
    sigma_eps2: float | None = None
    cov: np.ndarray | None = None


def report_jacobian(params: Parameters, spec: ModelSpec) -> np.ndarray:
    """Jacobian of the reported parameter vector
    [cut, beta, sigma, (sigma_eps2), xi_1..k, rho_1..k, pi_1..k]
    with respect to the unconstrained vector."""
    lay = layout(spec)
    u = pack(params)
    k = spec.k
    ncut = spec.family.n_cut
    n_rep = ncut + spec.p + 1 + (1 if lay.eps is not None else 0) + 3 * k
    G = np.zeros((n_rep, lay.size))
    r = 0
    J_resp, i_sig, i_eps = _resp_chain(u[:resp_block_size(spec)], spec)
    G[r : r + ncut, lay.cut] = J_resp[:ncut, :ncut]
    r += ncut
    for j in range(spec.p):
        G[r, lay.beta.start + j] = 1.0
        r += 1
    G[r, lay.sigma] = params.sigma
    r += 1
    if lay.eps is not None:
        G[r, lay.eps] = params.sigma_eps2
        r += 1
    for h in range(k):  # xi_1 row stays zero (fixed at 0)
        if h >= 1:
            G[r, lay.xi.start + h - 1] = 1.0
        r += 1
    for h in range(k):
        G[r, lay.rho.start + h] = 1.0 - params.rho[h] ** 2
        r += 1
    for h in range(k):
        for l in range(1, k):
            G[r, lay.pi.start + l - 1] = params.pi[h] * ((1.0 if l == h else 0.0) - params.pi[l])
        r += 1
    return G


def standard_errors(J: np.ndarray, params: Parameters, spec: ModelSpec) -> SEReport:
    """Invert the observed information and delta-transform to the reported scale.

    Raises numpy.linalg.LinAlgError when J is not invertible.
    """
    cov_u = np.linalg.inv(J)
    G = report_jacobian(params, spec)
    cov_rep = G @ cov_u @ G.T
    se = np.sqrt(np.maximum(np.diag(cov_rep), 0.0))
    ncut, p, k = spec.family.n_cut, spec.p, spec.k
    pos = 0
    cut = se[pos : pos + ncut]
    pos += ncut
    beta = se[pos : pos + p]
    pos += p
    sigma = float(se[pos])
    pos += 1
    eps = None
    if spec.family.is_continuous:
        eps = float(se[pos])
        pos += 1
    xi = se[pos : pos + k]
    pos += k
    rho = se[pos : pos + k]
    pos += k
    pi = se[pos : pos + k]
    return SEReport(cut=cut, beta=beta, sigma=sigma, xi=xi, rho=rho, pi=pi,
                    sigma_eps2=eps, cov=cov_rep)


@dataclass(frozen=True)
class LRTest:
    stat: float
    df: int
    pvalue: float


def lr_test(loglik_null: float, loglik_alt: float, df: int) -> LRTest:
    """Likelihood-ratio statistic 2 * (l1 - l0) with a chi-square reference."""
    stat = 2.0 * (loglik_alt - loglik_null)
    return LRTest(stat=stat, df=df, pvalue=float(chi2.sf(max(stat, 0.0), df)) if df > 0 else 1.0)


@dataclass(frozen=True)
class FitControls:
    """Pipeline controls; defaults follow the documented procedure."""

    max_em: int = 100
    em_switch_tol: float = 1e-4
    max_nr: int = 50
    nr_tol: float = 1e-5
    use_nr: bool = True
    compute_se: bool = True
    info_step: float = 1e-5


@dataclass(eq=False)
class FitResult:
    params: Parameters
    spec: ModelSpec
    loglik: float
    score_norm: float
    converged: bool
    trajectory: list = field(default_factory=list)  # (step type, loglik)
    info: np.ndarray | None = None
    se: SEReport | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return count_parameters(self.spec)

    def bic(self, n: int) -> float:
        return -2.0 * self.loglik + self.n_params * np.log(n)

    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params


def _solve_newton_step(J: np.ndarray, s: np.ndarray, diagnostics: dict) -> np.ndarray:
    try:
        step = np.linalg.solve(J, s)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-8 * (1.0 + abs(np.trace(J)) / len(s))
    while ridge < 1e12:
        try:
            step = np.linalg.solve(J + ridge * np.eye(len(s)), s)
            if np.all(np.isfinite(step)):
                diagnostics["ridge_used"] = True
                return step
        except np.linalg.LinAlgError:
            pass
        ridge *= 10.0
    diagnostics["ridge_used"] = True
    return s.copy()


def nr_fit(
    data: Dataset,
    spec: ModelSpec,
    theta_init: Parameters,
    controls: FitControls = FitControls(),
    trajectory: list | None = None,
) -> FitResult:
    """Full Newton-Raphson refinement from (typically) an EM iterate.

    Each iteration adds J^-1 s with step halving whenever the log-likelihood
    would decrease, and falls back to one EM step if halving fails 10 times.
    Stops when the score max-norm drops below controls.nr_tol.
    """
    grid = build_grid(spec, theta_init.rho)
    theta = theta_init
    traj = list(trajectory) if trajectory else []
    diagnostics: dict = {"ridge_used": False, "em_fallbacks": 0}
    ll = total_loglik(theta, grid, data, spec)
    converged = False
    s = score(theta, grid, data, spec)
    score_norm = float(np.abs(s).max())
    for _ in range(controls.max_nr):
        if score_norm < controls.nr_tol:
            converged = True
            break
        J = observed_info(theta, grid, data, spec, step_scale=controls.info_step)
        delta = _solve_newton_step(J, s, diagnostics)
        u = pack(theta)
        step = 1.0
        accepted = False
        for halve in range(10):
            try:
                theta_try = unpack(u + step * delta, spec)
                ll_try = total_loglik(theta_try, grid.with_rho(theta_try.rho), data, spec)
            except (ValueError, NumericalError, ZeroDivisionError, FloatingPointError):
                ll_try = -np.inf
            if np.isfinite(ll_try) and ll_try >= ll - 1e-10:
                theta, ll = theta_try, ll_try
                traj.append(("NR" if halve == 0 else "NR-halved", ll))
                accepted = True
                break
            step /= 2.0
        if not accepted:
            # one EM step always moves uphill
            grid = grid.with_rho(theta.rho)
            post = e_step(theta, grid, data, spec)
            theta = em_step(theta, spec, data, grid, post)
            grid = grid.with_rho(theta.rho)
            ll = total_loglik(theta, grid, data, spec)
            traj.append(("EM-fallback", ll))
            diagnostics["em_fallbacks"] += 1
        grid = grid.with_rho(theta.rho)
        s = score(theta, grid, data, spec)
        score_norm = float(np.abs(s).max())
    else:
        converged = score_norm < controls.nr_tol

    result = FitResult(
        params=theta,
        spec=spec,
        loglik=ll,
        score_norm=score_norm,
        converged=converged,
        trajectory=traj,
        diagnostics=diagnostics,
    )
    if controls.compute_se:
        try:
            J = observed_info(theta, grid, data, spec, step_scale=controls.info_step)
            result.info = J
            result.diagnostics["info_condition"] = float(np.linalg.cond(J))
            result.se = standard_errors(J, theta, spec)
        except (np.linalg.LinAlgError, NumericalError) as exc:
            result.se = None
            result.diagnostics["se_error"] = str(exc)
    return result


def fit_mlar(
    data: Dataset,
    spec: ModelSpec,
    theta0: Parameters | None = None,
    controls: FitControls = FitControls(),
    n_random_starts: int = 0,
    seed: int = 0,
) -> FitResult:
    """EM warm-up followed by full Newton-Raphson.

    EM runs until its gain falls below controls.em_switch_tol (or max_em
    iterations), then NR takes over.  Optional seeded random multi-starts
    rerun the pipeline and keep the best final log-likelihood.
    """
    from .em import em_fit, random_starts

    if theta0 is None:
        theta0 = default_start(data, spec)
    starts = [theta0]
    if n_random_starts > 0:
        starts += random_starts(theta0, n_random_starts, seed)
    best: FitResult | None = None
    for theta_start in starts:
        em_res = em_fit(
            data, spec, theta_start, max_iter=controls.max_em, tol=controls.em_switch_tol
        )
        traj = [("EM", v) for v in em_res.trajectory]
        if controls.use_nr:
            res = nr_fit(data, spec, em_res.theta, controls, trajectory=traj)
        else:
            res = FitResult(
                params=em_res.theta,
                spec=spec,
                loglik=em_res.loglik,
                score_norm=np.nan,
                converged=em_res.converged,
                trajectory=traj,
            )
        if best is None or res.loglik > best.loglik:
            best = res
    return best
