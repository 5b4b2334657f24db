import numpy as np
import pytest

from conftest import ALL_FAMILIES, random_params
from mlar import ModelSpec, Parameters, ResponseFamily, cond_logprob, cond_score_hess, make_knots
from mlar.response import response_logprob_table, weighted_score_hess
from oracles import cell_logprob, central_diff


def _dataset_for(spec, rng, n=4, T=3):
    from conftest import random_dataset

    return random_dataset(spec, rng, n, T)


class TestProbabilities:
    def test_binary_logit_at_zero(self):
        spec = ModelSpec(ResponseFamily("binary-logit"), p=0, k=1, q=3)
        params = Parameters(cut=[0.0], beta=[], sigma=1.0, xi=[0.0], rho=[0.0], pi=[1.0])
        knots = np.array([-1.0, 0.0, 1.0])
        # eta = 0 at the middle knot
        assert np.exp(cond_logprob(1, 0, 1, [], params, spec, knots)) == pytest.approx(0.5)
        assert np.exp(cond_logprob(0, 0, 1, [], params, spec, knots)) == pytest.approx(0.5)

    def test_ordinal_logit_four_categories(self):
        spec = ModelSpec(ResponseFamily("ordinal-logit", 4), p=0, k=1, q=3)
        params = Parameters(cut=[1.0, 0.0, -1.0], beta=[], sigma=1.0,
                            xi=[0.0], rho=[0.0], pi=[1.0])
        knots = np.array([-1.0, 0.0, 1.0])
        probs = [np.exp(cond_logprob(j, 0, 1, [], params, spec, knots)) for j in (1, 2, 3, 4)]
        assert np.allclose(probs, [0.268941, 0.231059, 0.231059, 0.268941], atol=1e-6)

    def test_binary_matches_direct_cdf(self):
        rng = np.random.default_rng(0)
        for kind in ("binary-logit", "binary-probit"):
            spec = ModelSpec(ResponseFamily(kind), p=1, k=1, q=3)
            params = random_params(spec, rng)
            knots = make_knots(3, 5.0)
            x = rng.normal(size=1)
            for y in (0, 1):
                eta = params.xi[0] + knots[2] * params.sigma + x @ params.beta
                assert cond_logprob(y, 0, 2, x, params, spec, knots) == pytest.approx(
                    cell_logprob(y, eta, params, spec), abs=1e-12
                )

    @pytest.mark.parametrize("fam", ALL_FAMILIES, ids=lambda f: f.kind)
    def test_table_matches_cell_oracle(self, fam):
        rng = np.random.default_rng(5)
        spec = ModelSpec(fam, p=2, k=2, q=5)
        params = random_params(spec, rng)
        data = _dataset_for(spec, rng)
        knots = make_knots(5, 3.0)
        table = response_logprob_table(params, spec, data, knots)
        for i in range(data.n):
            for t in range(data.T):
                for h in range(2):
                    for m in range(5):
                        eta = params.xi[h] + knots[m] * params.sigma + data.X[i, t] @ params.beta
                        assert table[h, i, t, m] == pytest.approx(
                            cell_logprob(data.y[i, t], eta, params, spec), rel=1e-9, abs=1e-12
                        )

    def test_categorical_probabilities_sum_to_one(self):
        rng = np.random.default_rng(2)
        for fam in ALL_FAMILIES:
            if fam.is_continuous:
                continue
            spec = ModelSpec(fam, p=1, k=2, q=7)
            params = random_params(spec, rng)
            knots = make_knots(7, 5.0)
            x = rng.normal(size=1)
            cats = range(1, fam.categories + 1) if fam.is_ordinal else (0, 1)
            for h in range(2):
                for m in range(7):
                    tot = sum(np.exp(cond_logprob(y, h, m, x, params, spec, knots)) for y in cats)
                    assert abs(tot - 1.0) < 1e-12

    def test_survival_curve_nonincreasing(self):
        rng = np.random.default_rng(3)
        spec = ModelSpec(ResponseFamily("ordinal-logit", 5), p=0, k=1, q=5)
        params = random_params(spec, rng)
        knots = make_knots(5, 5.0)
        for m in range(5):
            probs = [np.exp(cond_logprob(j, 0, m, [], params, spec, knots)) for j in range(1, 6)]
            surv = np.cumsum(probs[::-1])[::-1]  # P(y >= j)
            assert np.all(np.diff(surv) <= 1e-15)

    def test_location_shift_invariance(self):
        # raising a (free) support point by delta while lowering every
        # intercept by delta leaves all probabilities unchanged
        spec = ModelSpec(ResponseFamily("ordinal-probit", 4), p=1, k=2, q=5)
        rng = np.random.default_rng(4)
        params = random_params(spec, rng)
        delta = 0.7
        shifted = params.replace(
            cut=params.cut - delta,
            xi=np.array([0.0, params.xi[1] + delta]),
        )
        knots = make_knots(5, 5.0)
        x = rng.normal(size=1)
        for j in range(1, 5):
            for m in range(5):
                a = cond_logprob(j, 1, m, x, params, spec, knots)
                b = cond_logprob(j, 1, m, x, shifted, spec, knots)
                assert b == pytest.approx(a, abs=1e-12)

    def test_extreme_tails_stay_finite(self):
        for kind in ("ordinal-logit", "ordinal-probit"):
            spec = ModelSpec(ResponseFamily(kind, 4), p=0, k=1, q=3)
            params = Parameters(cut=[40.0, 0.0, -40.0], beta=[], sigma=1.0,
                                xi=[0.0], rho=[0.0], pi=[1.0])
            knots = np.array([-1.0, 0.0, 1.0])
            for j in (1, 2, 3, 4):
                lp = cond_logprob(j, 0, 1, [], params, spec, knots)
                assert np.isfinite(lp)
                assert lp < 0

    def test_category_out_of_range_rejected(self):
        spec = ModelSpec(ResponseFamily("ordinal-logit", 4), p=0, k=1, q=3)
        params = Parameters(cut=[1.0, 0.0, -1.0], beta=[], sigma=1.0,
                            xi=[0.0], rho=[0.0], pi=[1.0])
        with pytest.raises(ValueError, match="category"):
            cond_logprob(5, 0, 0, [], params, spec, np.zeros(3))


class TestDerivatives:
    def test_binary_logit_eta_gradient_at_zero(self):
        spec = ModelSpec(ResponseFamily("binary-logit"), p=0, k=1, q=3)
        params = Parameters(cut=[0.0], beta=[], sigma=1.0, xi=[0.0], rho=[0.0], pi=[1.0])
        knots = np.array([-1.0, 0.0, 1.0])
        g, _ = cond_score_hess(1, 0, 1, [], params, spec, knots)
        assert g[1] == pytest.approx(0.5)  # xi coordinate carries d/d(eta)

    def test_sigma_gradient_is_knot_times_xi_gradient(self):
        rng = np.random.default_rng(8)
        for fam in ALL_FAMILIES:
            spec = ModelSpec(fam, p=2, k=1, q=5)
            params = random_params(spec, rng)
            knots = make_knots(5, 4.0)
            x = rng.normal(size=2)
            y = 1 if not fam.is_ordinal else 2
            if fam.is_continuous:
                y = 0.3
            for m in range(5):
                g, _ = cond_score_hess(y, 0, m, x, params, spec, knots)
                i_xi = fam.n_cut + 2
                assert g[i_xi + 1] == pytest.approx(knots[m] * g[i_xi], rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("fam", ALL_FAMILIES, ids=lambda f: f.kind)
    def test_gradient_hessian_match_finite_differences(self, fam):
        rng = np.random.default_rng(9)
        spec = ModelSpec(fam, p=2, k=2, q=5)
        knots = make_knots(5, 4.0)
        for trial in range(8):
            params = random_params(spec, rng)
            x = rng.normal(size=2)
            h = int(rng.integers(2))
            m = int(rng.integers(5))
            if fam.is_continuous:
                y = float(rng.normal())
            elif fam.is_binary:
                y = int(rng.integers(2))
            else:
                y = int(rng.integers(1, fam.categories + 1))

            ncut, p = fam.n_cut, 2
            d = ncut + p + 2 + (1 if fam.is_continuous else 0)

            def obj(v):
                cut = v[:ncut]
                if np.any(np.diff(cut) > 0):
                    cut = np.minimum.accumulate(cut)  # keep valid; FD steps are tiny
                pr = params.replace(
                    cut=cut,
                    beta=v[ncut : ncut + p],
                    xi=np.concatenate([params.xi[:h], [v[ncut + p]], params.xi[h + 1 :]])
                    if h > 0
                    else params.xi,
                    sigma=v[ncut + p + 1],
                    sigma_eps2=v[-1] if fam.is_continuous else None,
                )
                if h == 0:
                    # xi_1 is pinned at 0; a shift of it acts exactly like a
                    # common shift of every intercept
                    pr = pr.replace(cut=pr.cut + v[ncut + p])
                return cond_logprob(y, h, m, x, pr, spec, knots)

            v0 = np.concatenate(
                [params.cut, params.beta, [params.xi[h]], [params.sigma]]
                + ([[params.sigma_eps2]] if fam.is_continuous else [])
            )
            g, H = cond_score_hess(y, h, m, x, params, spec, knots)
            g_fd = central_diff(obj, v0, rel_step=1e-6)
            assert np.allclose(g, g_fd, rtol=1e-6, atol=1e-6)

            # Hessian columns against finite differences of the (independently
            # verified) analytic gradient
            def grad_at(v):
                # a shift of the pinned support point (h == 0) enters exactly
                # like a common intercept shift
                cut = v[:ncut] + (v[ncut + p] if h == 0 else 0.0)
                xi = (
                    np.concatenate([params.xi[:h], [v[ncut + p]], params.xi[h + 1 :]])
                    if h > 0
                    else params.xi
                )
                pr = params.replace(
                    cut=cut,
                    beta=v[ncut : ncut + p],
                    xi=xi,
                    sigma=v[ncut + p + 1],
                    sigma_eps2=v[-1] if fam.is_continuous else None,
                )
                return cond_score_hess(y, h, m, x, pr, spec, knots)[0]

            for j in range(d):
                step = 1e-6 * (1 + abs(v0[j]))
                up, dn = v0.copy(), v0.copy()
                up[j] += step
                dn[j] -= step
                col = (grad_at(up) - grad_at(dn)) / (2 * step)
                assert np.allclose(H[:, j], col, rtol=5e-5, atol=5e-6)

    @pytest.mark.parametrize("fam", ALL_FAMILIES, ids=lambda f: f.kind)
    def test_batched_accumulator_matches_per_cell(self, fam):
        rng = np.random.default_rng(11)
        spec = ModelSpec(fam, p=2, k=2, q=4)
        params = random_params(spec, rng)
        data = _dataset_for(spec, rng, n=3, T=3)
        knots = make_knots(4, 3.0)
        rw = rng.uniform(0.1, 1.0, (2, 3, 3, 4))

        Q, g, H = weighted_score_hess(params, spec, data, knots, rw)

        ncut, p, k = fam.n_cut, 2, 2
        cont = fam.is_continuous
        d = ncut + p + 1 + (1 if cont else 0) + (k - 1)
        Q_ref = 0.0
        g_ref = np.zeros(d)
        H_ref = np.zeros((d, d))
        i_sig = ncut + p
        i_eps = ncut + p + 1
        i_xi = ncut + p + 1 + (1 if cont else 0)
        for h in range(k):
            for i in range(3):
                for t in range(3):
                    for m in range(4):
                        w = rw[h, i, t, m]
                        y, x = data.y[i, t], data.X[i, t]
                        Q_ref += w * cond_logprob(y, h, m, x, params, spec, knots)
                        gc, Hc = cond_score_hess(y, h, m, x, params, spec, knots)
                        # map per-cell coords [cut, beta, xi_h, sigma, (eps)]
                        idx = list(range(ncut + p)) + (
                            [i_xi + h - 1] if h >= 1 else [None]
                        ) + [i_sig] + ([i_eps] if cont else [])
                        for a, ia in enumerate(idx):
                            if ia is None:
                                continue
                            g_ref[ia] += w * gc[a]
                            for b, ib in enumerate(idx):
                                if ib is None:
                                    continue
                                H_ref[ia, ib] += w * Hc[a, b]
        assert Q == pytest.approx(Q_ref, rel=1e-10)
        assert np.allclose(g, g_ref, rtol=1e-9, atol=1e-9)
        assert np.allclose(H, H_ref, rtol=1e-8, atol=1e-8)
