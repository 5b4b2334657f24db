"""Command-line front door: CSV ingestion, descriptive summaries, fitting,
model selection, prediction, simulation, and plot-ready density grids.

Data files are long-format CSV with header ``id,time,y,x1..xp``; times must
form a complete 1..T block per id.  Results are JSON plus CSV artifacts.
Exit codes: 0 success, 1 user error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ._config import set_threads
from .likelihood import NumericalError
from .model import (
    Dataset,
    ModelSpec,
    Parameters,
    ResponseFamily,
    count_parameters,
    validate_dataset,
)
from .newton import FitControls, FitResult, fit_mlar
from .predict import predict_alpha, select_k
from .quadrature import build_grid
from .simulate import SimControl, simulate_dataset

# procedure defaults, echoed into every output for provenance
DEFAULTS = {
    "q0": 21,
    "q_step": 10,
    "q_tol": 1e-3,
    "k_threshold": 0.99,
    "k_max": 4,
    "knot_bound": 5.0,
    "max_em": 100,
    "em_tol": 1e-4,
    "max_nr": 50,
}


class UserError(ValueError):
    """Bad input from the user (file contents, flags); exits with code 1."""


# ---------------------------------------------------------------------------
# CSV ingestion


def ingest_csv(path) -> tuple[Dataset, list[str]]:
    """Read a long-format panel; returns (dataset, id labels in order)."""
    path = Path(path)
    if not path.exists():
        raise UserError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UserError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["id", "time", "y"]:
            raise UserError(f"{path}: header must start with id,time,y (got {header[:3]})")
        xcols = header[3:]
        for j, name in enumerate(xcols):
            if name != f"x{j + 1}":
                raise UserError(f"{path}: covariate columns must be x1..xp, got {name!r}")
        p = len(xcols)

        rows: dict[str, dict[int, tuple[int, float, np.ndarray]]] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3 + p:
                raise UserError(f"{path}:{lineno}: expected {3 + p} fields, got {len(row)}")
            sid = row[0].strip()
            try:
                t = int(row[1])
                yv = float(row[2])
                xv = np.array([float(c) for c in row[3:]], dtype=float)
            except ValueError as exc:
                raise UserError(f"{path}:{lineno}: parse failure ({exc})") from None
            if sid not in rows:
                rows[sid] = {}
                order.append(sid)
            if t in rows[sid]:
                first = rows[sid][t][0]
                raise UserError(
                    f"{path}:{lineno}: duplicate (id={sid}, time={t}); first seen on line {first}"
                )
            rows[sid][t] = (lineno, yv, xv)

    if not rows:
        raise UserError(f"{path}: no data rows")
    T = max(max(times) for times in rows.values())
    for sid in order:
        expected = set(range(1, T + 1))
        got = set(rows[sid])
        if got != expected:
            missing = sorted(expected - got)
            raise UserError(f"{path}: id {sid} is missing times {missing} (panel must be balanced 1..{T})")
    n = len(order)
    y = np.empty((n, T))
    X = np.empty((n, T, p))
    for i, sid in enumerate(order):
        for t in range(1, T + 1):
            _, yv, xv = rows[sid][t]
            y[i, t - 1] = yv
            X[i, t - 1] = xv
    return Dataset(y, X), order


def write_panel_csv(path, data: Dataset, ids: list[str] | None = None) -> None:
    ids = ids or [str(i + 1) for i in range(data.n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "time", "y"] + [f"x{j + 1}" for j in range(data.p)])
        for i in range(data.n):
            for t in range(data.T):
                w.writerow([ids[i], t + 1, repr(float(data.y[i, t]))]
                           + [repr(float(v)) for v in data.X[i, t]])


# ---------------------------------------------------------------------------
# summaries and density grids


def summarize(data: Dataset, spec: ModelSpec) -> dict:
    """Per-occasion response distribution, pooled lag-1 transition matrix
    (percentages, rows summing to 100), and covariate moments."""
    out: dict = {"n": data.n, "T": data.T, "p": data.p}
    fam = spec.family
    if fam.is_continuous:
        out["occasion_means"] = [float(m) for m in data.y.mean(axis=0)]
        out["occasion_sds"] = [float(s) for s in data.y.std(axis=0)]
    else:
        J = fam.categories
        lo = 1 if fam.is_ordinal else 0
        cats = list(range(lo, lo + J))
        y = np.asarray(np.round(data.y), dtype=int)
        occ = np.zeros((J, data.T))
        for t in range(data.T):
            counts = np.array([(y[:, t] == c).sum() for c in cats], dtype=float)
            occ[:, t] = 100.0 * counts / counts.sum()
        out["categories"] = cats
        out["occasion_percent"] = occ.tolist()
        trans = np.zeros((J, J))
        prev = y[:, :-1].reshape(-1)
        curr = y[:, 1:].reshape(-1)
        for a_idx, a in enumerate(cats):
            sel = prev == a
            tot = sel.sum()
            for b_idx, b in enumerate(cats):
                trans[a_idx, b_idx] = 100.0 * (curr[sel] == b).sum() / tot if tot else 0.0
        out["transition_percent"] = trans.tolist()
    out["covariate_means"] = [float(m) for m in data.X.reshape(-1, data.p).mean(axis=0)] if data.p else []
    out["covariate_sds"] = [float(s) for s in data.X.reshape(-1, data.p).std(axis=0)] if data.p else []
    return out


def _norm_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def density_grid(params: Parameters, rng: tuple[float, float] | None = None, resolution: int = 201):
    """Gridded mixture densities of the latent effect.

    Returns (axis, univariate density, bivariate density (resolution^2,)).
    The univariate density is sum_h pi_h N(xi_h, sigma^2); the bivariate one
    uses the per-component lag-1 covariance sigma^2 [[1, rho_h], [rho_h, 1]].
    """
    s = params.sigma
    if rng is None:
        rng = (float(params.xi.min() - 8 * s), float(params.xi.max() + 8 * s))
    axis = np.linspace(rng[0], rng[1], resolution)
    uni = np.zeros_like(axis)
    for h in range(params.k):
        uni += params.pi[h] * _norm_pdf(axis, params.xi[h], s * s)
    a = axis[:, None]
    b = axis[None, :]
    biv = np.zeros((resolution, resolution))
    for h in range(params.k):
        rho = params.rho[h]
        det = (s * s) ** 2 * (1 - rho * rho)
        za = a - params.xi[h]
        zb = b - params.xi[h]
        quad = (za * za - 2 * rho * za * zb + zb * zb) / (s * s * (1 - rho * rho))
        biv += params.pi[h] * np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))
    return axis, uni, biv


# ---------------------------------------------------------------------------
# JSON serialization


def params_to_dict(params: Parameters) -> dict:
    return {
        "cut": params.cut.tolist(),
        "beta": params.beta.tolist(),
        "sigma": params.sigma,
        "sigma_eps2": params.sigma_eps2,
        "xi": params.xi.tolist(),
        "rho": params.rho.tolist(),
        "pi": params.pi.tolist(),
    }


def params_from_dict(d: dict) -> Parameters:
    return Parameters(
        cut=np.array(d["cut"], dtype=float),
        beta=np.array(d["beta"], dtype=float),
        sigma=float(d["sigma"]),
        xi=np.array(d["xi"], dtype=float),
        rho=np.array(d["rho"], dtype=float),
        pi=np.array(d["pi"], dtype=float),
        sigma_eps2=None if d.get("sigma_eps2") is None else float(d["sigma_eps2"]),
    )


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "family": spec.family.kind,
        "categories": spec.family.categories,
        "p": spec.p,
        "k": spec.k,
        "q": spec.q,
        "knot_bound": spec.knot_bound,
    }


def spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(
        family=ResponseFamily(d["family"], d.get("categories", 0)),
        p=int(d["p"]),
        k=int(d["k"]),
        q=int(d["q"]),
        knot_bound=float(d.get("knot_bound", 5.0)),
    )


def fit_to_dict(fit: FitResult, data: Dataset) -> dict:
    se = fit.se
    return {
        "spec": spec_to_dict(fit.spec),
        "estimates": params_to_dict(fit.params),
        "standard_errors": None
        if se is None
        else {
            "cut": se.cut.tolist(),
            "beta": se.beta.tolist(),
            "sigma": se.sigma,
            "sigma_eps2": se.sigma_eps2,
            "xi": se.xi.tolist(),
            "rho": se.rho.tolist(),
            "pi": se.pi.tolist(),
        },
        "loglik": fit.loglik,
        "n_params": count_parameters(fit.spec),
        "bic": fit.bic(data.n),
        "aic": fit.aic(),
        "n": data.n,
        "T": data.T,
        "score_norm": fit.score_norm,
        "converged": fit.converged,
        "trajectory": [[step, ll] for step, ll in fit.trajectory],
        "diagnostics": {k: v for k, v in fit.diagnostics.items()},
        "defaults": DEFAULTS,
    }


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_alpha_csv(path, surface, ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "time", "alpha_hat", "map_component"])
        n, T = surface.alpha_hat.shape
        for i in range(n):
            for t in range(T):
                w.writerow([ids[i], t + 1, repr(float(surface.alpha_hat[i, t])),
                            int(surface.component_map[i]) + 1])


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", required=True,
                   choices=["continuous", "binary-logit", "binary-probit",
                            "ordinal-logit", "ordinal-probit"])
    p.add_argument("--categories", type=int, default=0,
                   help="number of ordered categories (ordinal families)")
    p.add_argument("--bound", type=float, default=DEFAULTS["knot_bound"],
                   help="knot grid extends from -bound to +bound")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-em", type=int, default=DEFAULTS["max_em"])
    p.add_argument("--em-tol", type=float, default=DEFAULTS["em_tol"])
    p.add_argument("--max-nr", type=int, default=DEFAULTS["max_nr"])
    p.add_argument("--start", default="default",
                   help="'default' or 'random:N' for N extra seeded starts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="cap for compiled-kernel threads")
    p.add_argument("--deterministic", action="store_true",
                   help="ordered reductions (always on in this implementation)")


def build_parser() -> _Parser:
    parser = _Parser(prog="mlar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("fit", help="fit one model configuration")
    pf.add_argument("--data", required=True)
    _add_model_flags(pf)
    pf.add_argument("--k", type=int, required=True)
    pf.add_argument("--q", type=int, required=True)
    _add_fit_flags(pf)
    pf.add_argument("--out", required=True, help="output directory")

    ps = sub.add_parser("select", help="select q and k automatically")
    ps.add_argument("--data", required=True)
    _add_model_flags(ps)
    ps.add_argument("--q0", type=int, default=DEFAULTS["q0"])
    ps.add_argument("--q-step", type=int, default=DEFAULTS["q_step"])
    ps.add_argument("--q-tol", type=float, default=DEFAULTS["q_tol"])
    ps.add_argument("--q-max", type=int, default=101)
    ps.add_argument("--k-threshold", type=float, default=DEFAULTS["k_threshold"])
    ps.add_argument("--k-max", type=int, default=DEFAULTS["k_max"])
    _add_fit_flags(ps)
    ps.add_argument("--out", required=True)

    pp = sub.add_parser("predict", help="posterior latent effects from a saved fit")
    pp.add_argument("--fit", required=True, help="fit.json from a previous run")
    pp.add_argument("--data", required=True)
    pp.add_argument("--out", required=True)

    pm = sub.add_parser("simulate", help="generate a synthetic panel")
    _add_model_flags(pm)
    pm.add_argument("--params", required=True, help="JSON file with true parameters")
    pm.add_argument("--n", type=int, required=True)
    pm.add_argument("--T", type=int, required=True)
    pm.add_argument("--p", type=int, default=0)
    pm.add_argument("--covariates", choices=["none", "standard-normal"],
                    default="standard-normal")
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--out", required=True)

    pz = sub.add_parser("summarize", help="descriptive summaries of a panel")
    pz.add_argument("--data", required=True)
    _add_model_flags(pz)
    pz.add_argument("--out", required=True)

    pd = sub.add_parser("density", help="plot-ready latent density grids")
    pd.add_argument("--fit", required=True)
    pd.add_argument("--range", type=float, nargs=2, default=None)
    pd.add_argument("--resolution", type=int, default=201)
    pd.add_argument("--out", required=True)
    return parser


def _spec_from_args(args, p: int, k: int = 1, q: int = 21) -> ModelSpec:
    fam = ResponseFamily(args.family, args.categories)
    return ModelSpec(family=fam, p=p, k=k, q=q, knot_bound=args.bound)


def _controls_from_args(args) -> FitControls:
    return FitControls(max_em=args.max_em, em_switch_tol=args.em_tol, max_nr=args.max_nr)


def _n_random_starts(start: str) -> int:
    if start == "default":
        return 0
    if start.startswith("random:"):
        return int(start.split(":", 1)[1])
    raise UserError(f"--start must be 'default' or 'random:N', got {start!r}")


def _check_data(data: Dataset, spec: ModelSpec) -> None:
    issues = validate_dataset(data, spec)
    if issues:
        lines = "; ".join(
            f"(i={v.i}, t={v.t}) {v.message}" if v.i is not None else v.message
            for v in issues[:10]
        )
        raise UserError(f"invalid panel: {lines}" + (" ..." if len(issues) > 10 else ""))


def run(args) -> int:
    if getattr(args, "threads", None):
        set_threads(args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "fit":
        data, ids = ingest_csv(args.data)
        spec = _spec_from_args(args, p=data.p, k=args.k, q=args.q)
        _check_data(data, spec)
        fit = fit_mlar(data, spec, controls=_controls_from_args(args),
                       n_random_starts=_n_random_starts(args.start), seed=args.seed)
        _write_json(out / "fit.json", fit_to_dict(fit, data))
        grid = build_grid(spec, fit.params.rho)
        _write_alpha_csv(out / "alpha_hat.csv", predict_alpha(fit.params, grid, data, spec), ids)
        return 0

    if args.command == "select":
        import dataclasses as _dc

        from .newton import observed_info, standard_errors

        data, ids = ingest_csv(args.data)
        spec = _spec_from_args(args, p=data.p, k=1, q=args.q0)
        _check_data(data, spec)
        search_controls = _dc.replace(_controls_from_args(args), compute_se=False)
        k_star, report, fit = select_k(
            data, spec, threshold=args.k_threshold, k_max=args.k_max,
            q0=args.q0, q_step=args.q_step, q_tol=args.q_tol, q_max=args.q_max,
            controls=search_controls,
        )
        # standard errors only for the chosen model
        grid_sel = build_grid(fit.spec, fit.params.rho)
        try:
            info = observed_info(fit.params, grid_sel, data, fit.spec)
            fit.info = info
            fit.se = standard_errors(info, fit.params, fit.spec)
            fit.diagnostics["info_condition"] = float(np.linalg.cond(info))
        except (np.linalg.LinAlgError, NumericalError) as exc:
            fit.diagnostics["se_error"] = str(exc)
        sel = {
            "chosen_k": report.chosen_k,
            "chosen_q": report.chosen_q,
            "q_paths": {
                str(k): [[s.q, s.loglik, s.diff] for s in steps]
                for k, steps in report.q_paths.items()
            },
            "k_path": [[k, q, ll, corr] for k, q, ll, corr in report.k_path],
            "flags": report.flags,
            "defaults": DEFAULTS,
        }
        _write_json(out / "selection.json", sel)
        _write_json(out / "fit.json", fit_to_dict(fit, data))
        grid = build_grid(fit.spec, fit.params.rho)
        _write_alpha_csv(out / "alpha_hat.csv",
                         predict_alpha(fit.params, grid, data, fit.spec), ids)
        return 0

    if args.command == "predict":
        with open(args.fit) as fh:
            saved = json.load(fh)
        spec = spec_from_dict(saved["spec"])
        params = params_from_dict(saved["estimates"])
        data, ids = ingest_csv(args.data)
        if data.p != spec.p:
            raise UserError(f"data has {data.p} covariates but the fit used {spec.p}")
        grid = build_grid(spec, params.rho)
        _write_alpha_csv(out / "alpha_hat.csv", predict_alpha(params, grid, data, spec), ids)
        return 0

    if args.command == "simulate":
        with open(args.params) as fh:
            params = params_from_dict(json.load(fh))
        fam = ResponseFamily(args.family, args.categories)
        spec = ModelSpec(family=fam, p=args.p, k=params.k, q=21, knot_bound=args.bound)
        ctrl = SimControl(n=args.n, T=args.T, seed=args.seed, covariate_gen=args.covariates)
        sim = simulate_dataset(spec, params, ctrl)
        write_panel_csv(out / "data.csv", sim.data)
        with open(out / "truth.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "time", "alpha", "component"])
            for i in range(ctrl.n):
                for t in range(ctrl.T):
                    w.writerow([i + 1, t + 1, repr(float(sim.alpha[i, t])), int(sim.u[i])])
        return 0

    if args.command == "summarize":
        data, _ = ingest_csv(args.data)
        spec = _spec_from_args(args, p=data.p)
        _check_data(data, spec)
        _write_json(out / "summary.json", summarize(data, spec))
        return 0

    if args.command == "density":
        with open(args.fit) as fh:
            saved = json.load(fh)
        params = params_from_dict(saved["estimates"])
        rng = tuple(args.range) if args.range else None
        axis, uni, biv = density_grid(params, rng=rng, resolution=args.resolution)
        with open(out / "density_uni.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "density"])
            for a, v in zip(axis, uni):
                w.writerow([repr(float(a)), repr(float(v))])
        with open(out / "density_biv.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "b", "density"])
            for ia, a in enumerate(axis):
                for ib, b in enumerate(axis):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(biv[ia, ib]))])
        return 0

    raise UserError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return run(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
