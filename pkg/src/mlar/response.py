"""Conditional response log-probabilities p(y | component, knot, x) and their
analytic derivatives with respect to the response-scale parameters.

All families share the linear predictor eta = xi_h + nu_m * sigma + x'beta.
Categorical families read probabilities off cumulative cdf differences
between consecutive intercepts; the continuous family is a normal density
with mean (intercept + eta) and its own error variance.

Interval probabilities are evaluated through log-cdf differences with
log1p/expm1-style formulations so extreme tails (|argument| > 30) do not
cancel catastrophically.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr

from .model import Dataset, ModelSpec, Parameters, check_compatible

_LOG_2PI = np.log(2.0 * np.pi)
_LN2 = 0.6931471805599453


def _log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(x)) for x <= 0, stable near both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.log(-np.expm1(np.where(x > -_LN2, x, -1.0)))
        large = np.log1p(-np.exp(np.where(x <= -_LN2, x, -1.0)))
    return np.where(x > -_LN2, small, large)


def _log_cdf_logistic(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _log_pdf_logistic(x: np.ndarray) -> np.ndarray:
    return _log_cdf_logistic(x) + _log_cdf_logistic(-x)


def _log_pdf_normal(x: np.ndarray) -> np.ndarray:
    return -0.5 * (x * x + _LOG_2PI)


def interval_logprob(A, B, probit: bool, derivs: bool = False):
    """log(F(A) - F(B)) elementwise for A >= B, with +inf/-inf boundaries.

    With ``derivs=True`` also returns the ratios
    gA = f(A)/P, gB = f(B)/P and the log-concavity coefficients
    cA = f'(A)/f(A), cB = f'(B)/f(B), from which all second derivatives of
    log P with respect to (A, B) follow.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    finA = np.isfinite(A)
    finB = np.isfinite(B)
    As = np.where(finA, A, 0.0)
    Bs = np.where(finB, B, 0.0)

    if probit:
        lFA, lFB = log_ndtr(As), log_ndtr(Bs)
        lFmA, lFmB = log_ndtr(-As), log_ndtr(-Bs)
        direct = lFA + _log1mexp(np.minimum(lFB - lFA, 0.0))
        reflect = lFmB + _log1mexp(np.minimum(lFmA - lFmB, 0.0))
        both = np.where(As + Bs > 0, reflect, direct)
        upper_only = lFmB  # A = +inf: P = 1 - F(B)
        lower_only = lFA  # B = -inf: P = F(A)
    else:
        lFA = _log_cdf_logistic(As)
        lFmB = _log_cdf_logistic(-Bs)
        both = lFA + lFmB + _log1mexp(np.minimum(Bs - As, 0.0))
        upper_only = lFmB
        lower_only = lFA

    logP = np.where(
        finA & finB, both, np.where(finA, lower_only, np.where(finB, upper_only, 0.0))
    )
    if not derivs:
        return logP

    log_pdf = _log_pdf_normal if probit else _log_pdf_logistic
    with np.errstate(over="ignore"):
        gA = np.where(finA, np.exp(log_pdf(As) - logP), 0.0)
        gB = np.where(finB, np.exp(log_pdf(Bs) - logP), 0.0)
    if probit:
        cA, cB = -As, -Bs
    else:
        cA, cB = -np.tanh(As / 2.0), -np.tanh(Bs / 2.0)
    return logP, gA, gB, cA, cB


def _category_bounds(y: np.ndarray, cut: np.ndarray, binary: bool):
    """Upper/lower intercept per observed category, with infinite boundaries.

    Returns (muA, muB, slotA, slotB) where slots index into the cut vector
    (-1 when the boundary is infinite).
    """
    yi = np.asarray(np.round(y), dtype=np.int64)
    if binary:
        yi = yi + 1  # categories {0,1} -> {1,2}
    ncut = len(cut)
    mu_ext = np.concatenate([[np.inf], cut, [-np.inf]])
    muA = mu_ext[yi - 1]
    muB = mu_ext[yi]
    slotA = np.where(yi >= 2, yi - 2, -1)
    slotB = np.where(yi <= ncut, yi - 1, -1)
    return muA, muB, slotA, slotB


def response_logprob_table(
    params: Parameters, spec: ModelSpec, data: Dataset, knots: np.ndarray
) -> np.ndarray:
    """log p(y_it | h, nu_m, x_it) for every cell, shape (k, n, T, q)."""
    check_compatible(params, spec)
    xb = data.X @ params.beta  # (n, T)
    offs = params.xi[:, None] + params.sigma * knots[None, :]  # (k, q)
    if spec.family.is_continuous:
        mean = params.cut[0] + xb[None, :, :, None] + offs[:, None, None, :]
        r = data.y[None, :, :, None] - mean
        s2 = params.sigma_eps2
        return -0.5 * (np.log(s2) + _LOG_2PI + r * r / s2)
    muA, muB, _, _ = _category_bounds(data.y, params.cut, spec.family.is_binary)
    A = muA[None, :, :, None] + xb[None, :, :, None] + offs[:, None, None, :]
    B = muB[None, :, :, None] + xb[None, :, :, None] + offs[:, None, None, :]
    return interval_logprob(A, B, spec.family.is_probit)


def cond_logprob(y, h, m, x, params: Parameters, spec: ModelSpec, knots) -> float:
    """Single-cell log probability (or log density) for category/value y."""
    x = np.asarray(x, dtype=float).reshape(-1)
    eta = params.xi[h] + knots[m] * params.sigma + x @ params.beta
    fam = spec.family
    if fam.is_continuous:
        r = y - (params.cut[0] + eta)
        s2 = params.sigma_eps2
        return float(-0.5 * (np.log(s2) + _LOG_2PI + r * r / s2))
    if fam.is_ordinal and not (1 <= int(y) <= fam.categories):
        raise ValueError(f"category {y} outside 1..{fam.categories}")
    if fam.is_binary and int(y) not in (0, 1):
        raise ValueError(f"binary response must be 0 or 1, got {y}")
    muA, muB, _, _ = _category_bounds(np.array([y]), params.cut, fam.is_binary)
    return float(interval_logprob(muA[0] + eta, muB[0] + eta, fam.is_probit))


def cond_score_hess(y, h, m, x, params: Parameters, spec: ModelSpec, knots):
    """Gradient and Hessian of cond_logprob for one cell.

    Coordinates, constrained scale: [cut..., beta..., xi_h, sigma] plus a
    trailing sigma_eps2 coordinate for the continuous family.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    fam = spec.family
    ncut, p = fam.n_cut, len(x)
    eta = params.xi[h] + knots[m] * params.sigma + x @ params.beta

    if fam.is_continuous:
        d = ncut + p + 3
        s2 = params.sigma_eps2
        r = y - (params.cut[0] + eta)
        de = np.zeros(d)
        de[0] = 1.0
        de[1 : 1 + p] = x
        de[1 + p] = 1.0  # xi_h
        de[2 + p] = knots[m]  # sigma
        g = (r / s2) * de
        g[-1] = -0.5 / s2 + r * r / (2 * s2 * s2)
        H = (-1.0 / s2) * np.outer(de, de)
        H[-1, -1] = 0.5 / (s2 * s2) - r * r / (s2**3)
        H[:-1, -1] = H[-1, :-1] = (-r / (s2 * s2)) * de[:-1]
        return g, H

    d = ncut + p + 2
    muA, muB, slotA, slotB = _category_bounds(np.array([y]), params.cut, fam.is_binary)
    _, gA, gB, cA, cB = interval_logprob(
        muA + eta, muB + eta, fam.is_probit, derivs=True
    )
    gA, gB, cA, cB = float(gA[0]), float(gB[0]), float(cA[0]), float(cB[0])
    hAA = cA * gA - gA * gA
    hBB = -cB * gB - gB * gB
    hAB = gA * gB

    de = np.zeros(d)
    de[ncut : ncut + p] = x
    de[ncut + p] = 1.0  # xi_h
    de[ncut + p + 1] = knots[m]  # sigma
    dA = de.copy()
    dB = de.copy()
    if slotA[0] >= 0:
        dA[slotA[0]] += 1.0
    if slotB[0] >= 0:
        dB[slotB[0]] += 1.0
    g = gA * dA - gB * dB
    H = hAA * np.outer(dA, dA) + hAB * (np.outer(dA, dB) + np.outer(dB, dA)) + hBB * np.outer(dB, dB)
    return g, H


def _safe_weighted_sum(w: np.ndarray, term: np.ndarray) -> float:
    return float(np.where(w > 0, w * term, 0.0).sum())


# inf/nan intermediates signal a degenerate trial point; callers test the
# returned objective for finiteness, so the fp warnings are pure noise here
@np.errstate(invalid="ignore", over="ignore")
def weighted_score_hess(
    params: Parameters,
    spec: ModelSpec,
    data: Dataset,
    knots: np.ndarray,
    rw: np.ndarray,
    want_grad: bool = True,
    want_hess: bool = True,
):
    """Weighted conditional log-likelihood sum_cells rw * log p and its
    gradient/Hessian on the constrained response block.

    ``rw`` has shape (k, n, T, q).  Block coordinate order matches the packed
    layout: [cut (n_cut), beta (p), sigma, (sigma_eps2), xi_2..xi_k].
    Returns (Q, grad, hess); grad/hess are None when not requested.
    """
    check_compatible(params, spec)
    fam = spec.family
    k, n, T, q = rw.shape
    ncut, p = fam.n_cut, spec.p
    cont = fam.is_continuous
    d = ncut + p + 1 + (1 if cont else 0) + (k - 1)
    i_sig = ncut + p
    i_eps = ncut + p + 1
    i_xi0 = ncut + p + 1 + (1 if cont else 0)  # slot of xi_2

    xb = data.X @ params.beta  # (n, T)
    X = data.X
    nu = knots
    Q = 0.0
    grad = np.zeros(d) if want_grad else None
    hess = np.zeros((d, d)) if want_hess else None

    if cont:
        s2 = params.sigma_eps2
        y = data.y
        for h in range(k):
            w = rw[h]  # (n, T, q)
            mean = params.cut[0] + xb[:, :, None] + params.xi[h] + params.sigma * nu[None, None, :]
            r = y[:, :, None] - mean
            logp = -0.5 * (np.log(s2) + _LOG_2PI + r * r / s2)
            Q += _safe_weighted_sum(w, logp)
            if not want_grad:
                continue
            wr = w * r / s2  # d/d(linear) coefficients
            c0 = wr.sum(axis=2)  # (n, T)
            gs = grad
            gs[0] += c0.sum()
            if p:
                gs[1 : 1 + p] += np.einsum("nt,ntj->j", c0, X)
            gs[i_sig] += np.einsum("ntq,q->", wr, nu)
            if h >= 1:
                gs[i_xi0 + h - 1] += c0.sum()
            gs[i_eps] += float(np.sum(w * (-0.5 / s2 + r * r / (2 * s2 * s2))))
            if not want_hess:
                continue
            ws = w / s2
            s_nt = ws.sum(axis=2)
            sv_nt = np.einsum("ntq,q->nt", ws, nu)
            sv2 = np.einsum("ntq,q->", ws, nu * nu)
            lin_idx = [0] + list(range(1, 1 + p)) + [i_sig] + ([i_xi0 + h - 1] if h >= 1 else [])
            # linear-linear block: -(1/s2) * outer of d(mean)/d(coord)
            Hl = hess
            tot = s_nt.sum()
            Hl[0, 0] += -tot
            if p:
                xc = np.einsum("nt,ntj->j", s_nt, X)
                Hl[0, 1 : 1 + p] += -xc
                Hl[1 : 1 + p, 0] += -xc
                Hl[1 : 1 + p, 1 : 1 + p] += -np.einsum("nt,nti,ntj->ij", s_nt, X, X)
                xs = np.einsum("nt,ntj->j", sv_nt, X)
                Hl[1 : 1 + p, i_sig] += -xs
                Hl[i_sig, 1 : 1 + p] += -xs
            Hl[0, i_sig] += -sv_nt.sum()
            Hl[i_sig, 0] += -sv_nt.sum()
            Hl[i_sig, i_sig] += -sv2
            if h >= 1:
                j = i_xi0 + h - 1
                Hl[j, j] += -tot
                Hl[0, j] += -tot
                Hl[j, 0] += -tot
                Hl[j, i_sig] += -sv_nt.sum()
                Hl[i_sig, j] += -sv_nt.sum()
                if p:
                    Hl[j, 1 : 1 + p] += -xc
                    Hl[1 : 1 + p, j] += -xc
            # sigma_eps2 row/column
            wre = w * (-r / (s2 * s2))
            ce = wre.sum(axis=2)
            Hl[i_eps, 0] += ce.sum()
            Hl[0, i_eps] += ce.sum()
            if p:
                xe = np.einsum("nt,ntj->j", ce, X)
                Hl[i_eps, 1 : 1 + p] += xe
                Hl[1 : 1 + p, i_eps] += xe
            se = np.einsum("ntq,q->", wre, nu)
            Hl[i_eps, i_sig] += se
            Hl[i_sig, i_eps] += se
            if h >= 1:
                j = i_xi0 + h - 1
                Hl[i_eps, j] += ce.sum()
                Hl[j, i_eps] += ce.sum()
            Hl[i_eps, i_eps] += float(np.sum(w * (0.5 / (s2 * s2) - r * r / s2**3)))
        return Q, grad, hess

    # categorical families
    muA, muB, slotA, slotB = _category_bounds(data.y, params.cut, fam.is_binary)
    flatA = slotA.reshape(-1)
    flatB = slotB.reshape(-1)
    mA = flatA >= 0
    mB = flatB >= 0
    idxA = flatA[mA]
    idxB = flatB[mB]
    Xf = X.reshape(n * T, p)

    for h in range(k):
        w = rw[h]
        base = xb + params.xi[h]
        A = muA[:, :, None] + base[:, :, None] + params.sigma * nu[None, None, :]
        B = muB[:, :, None] + base[:, :, None] + params.sigma * nu[None, None, :]
        logP, gA, gB, cA, cB = interval_logprob(A, B, fam.is_probit, derivs=True)
        Q += _safe_weighted_sum(w, logP)
        if not want_grad:
            continue
        wgA = w * gA
        wgB = w * gB
        # gradient
        ce = (wgA - wgB).sum(axis=2)  # eta coefficient, (n, T)
        gs = grad
        gs[:ncut] += np.bincount(idxA, weights=wgA.sum(axis=2).reshape(-1)[mA], minlength=ncut)
        gs[:ncut] -= np.bincount(idxB, weights=wgB.sum(axis=2).reshape(-1)[mB], minlength=ncut)
        if p:
            gs[ncut : ncut + p] += np.einsum("nt,ntj->j", ce, X)
        gs[i_sig] += np.einsum("ntq,q->", wgA - wgB, nu)
        if h >= 1:
            gs[i_xi0 + h - 1] += ce.sum()
        if not want_hess:
            continue
        hAA = w * (cA * gA - gA * gA)
        hBB = w * (-cB * gB - gB * gB)
        hAB = w * (gA * gB)
        Hl = hess
        # cut-cut: diagonal terms plus the (slotA, slotA+1) band
        Hl[:ncut, :ncut][np.arange(ncut), np.arange(ncut)] += np.bincount(
            idxA, weights=hAA.sum(axis=2).reshape(-1)[mA], minlength=ncut
        )
        Hl[np.arange(ncut), np.arange(ncut)] += np.bincount(
            idxB, weights=hBB.sum(axis=2).reshape(-1)[mB], minlength=ncut
        )
        both = mA & mB
        if both.any():
            off = np.bincount(
                flatA[both], weights=hAB.sum(axis=2).reshape(-1)[both], minlength=ncut
            )
            for j in range(ncut - 1):
                Hl[j, j + 1] += off[j]
                Hl[j + 1, j] += off[j]
        # eta-structured pieces
        hEE = hAA + 2.0 * hAB + hBB
        s_nt = hEE.sum(axis=2)
        sv_nt = np.einsum("ntq,q->nt", hEE, nu)
        sv2 = np.einsum("ntq,q->", hEE, nu * nu)
        if p:
            Hl[ncut : ncut + p, ncut : ncut + p] += np.einsum("nt,nti,ntj->ij", s_nt, X, X)
            xs = np.einsum("nt,ntj->j", sv_nt, X)
            Hl[ncut : ncut + p, i_sig] += xs
            Hl[i_sig, ncut : ncut + p] += xs
        Hl[i_sig, i_sig] += sv2
        if h >= 1:
            j = i_xi0 + h - 1
            Hl[j, j] += s_nt.sum()
            Hl[j, i_sig] += sv_nt.sum()
            Hl[i_sig, j] += sv_nt.sum()
            if p:
                xj = np.einsum("nt,ntj->j", s_nt, X)
                Hl[j, ncut : ncut + p] += xj
                Hl[ncut : ncut + p, j] += xj
        # cut rows against the eta-structured columns
        rA = hAA + hAB  # coefficient pairing the upper intercept with eta
        rB = hAB + hBB  # coefficient pairing the lower intercept with eta
        for slots_flat, mask, idx, coef in ((flatA, mA, idxA, rA), (flatB, mB, idxB, rB)):
            c_nt = coef.sum(axis=2).reshape(-1)[mask]
            cv_nt = np.einsum("ntq,q->nt", coef, nu).reshape(-1)[mask]
            col_sig = np.bincount(idx, weights=cv_nt, minlength=ncut)
            Hl[:ncut, i_sig] += col_sig
            Hl[i_sig, :ncut] += col_sig
            if h >= 1:
                col_xi = np.bincount(idx, weights=c_nt, minlength=ncut)
                Hl[:ncut, i_xi0 + h - 1] += col_xi
                Hl[i_xi0 + h - 1, :ncut] += col_xi
            if p:
                blk = np.zeros((ncut, p))
                np.add.at(blk, idx, c_nt[:, None] * Xf[mask])
                Hl[:ncut, ncut : ncut + p] += blk
                Hl[ncut : ncut + p, :ncut] += blk.T
    return Q, grad, hess
