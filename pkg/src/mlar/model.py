"""Model configuration, parameter and panel containers, and the bijection
between constrained parameters and an unconstrained optimization vector.

Parameter vector layout (unconstrained scale), in order:

==========  =========  ====================================================
block       length     transform
==========  =========  ====================================================
cut         n_cut      first intercept free, then log-decrements so the
                       intercepts are strictly decreasing
beta        p          identity
sigma       1          log
sigma_eps2  0 or 1     log (continuous family only)
xi          k - 1      identity; xi_1 is pinned to 0 and never packed
rho         k          atanh
pi          k - 1      multinomial logit with component 1 as reference
==========  =========  ====================================================
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

FAMILY_KINDS = (
    "continuous",
    "binary-logit",
    "binary-probit",
    "ordinal-logit",
    "ordinal-probit",
)

_PI_TOL = 1e-12


@dataclass(frozen=True)
class ResponseFamily:
    """Distribution/link of the occasion-level response.

    ``categories`` is the number of ordered categories for ordinal kinds
    (at least 3; two-category outcomes must be declared binary), is forced
    to 2 for binary kinds and to 0 for the continuous kind.
    """

    kind: str
    categories: int = 0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}; choose from {FAMILY_KINDS}")
        if self.is_ordinal and self.categories < 3:
            raise ValueError("ordinal families need >= 3 categories; declare 2 categories as binary")
        if self.is_binary:
            object.__setattr__(self, "categories", 2)
        if self.is_continuous:
            object.__setattr__(self, "categories", 0)

    @property
    def is_ordinal(self) -> bool:
        return self.kind.startswith("ordinal")

    @property
    def is_binary(self) -> bool:
        return self.kind.startswith("binary")

    @property
    def is_continuous(self) -> bool:
        return self.kind == "continuous"

    @property
    def is_probit(self) -> bool:
        return self.kind.endswith("probit")

    @property
    def n_cut(self) -> int:
        """Number of intercept parameters (J-1 for ordinal, 1 otherwise)."""
        return self.categories - 1 if self.is_ordinal else 1


@dataclass(frozen=True)
class ModelSpec:
    """Sizes and options that define one model configuration."""

    family: ResponseFamily
    p: int
    k: int
    q: int
    knot_bound: float = 5.0

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("covariate count p must be >= 0")
        if self.k < 1:
            raise ValueError("mixture size k must be >= 1")
        if self.q < 3:
            raise ValueError("quadrature size q must be >= 3")
        if not self.knot_bound > 0:
            raise ValueError("knot_bound must be positive")


@dataclass(frozen=True, eq=False)
class Parameters:
    """Constrained model parameters.

    Invariants enforced at construction: xi[0] == 0 exactly, sigma > 0,
    all pi > 0 summing to 1, |rho| < 1, non-increasing intercepts for
    ordinal families, and sigma_eps2 > 0 when present.
    """

    cut: np.ndarray
    beta: np.ndarray
    sigma: float
    xi: np.ndarray
    rho: np.ndarray
    pi: np.ndarray
    sigma_eps2: float | None = None

    def __post_init__(self):
        for name in ("cut", "beta", "xi", "rho", "pi"):
            arr = np.array(getattr(self, name), dtype=float, copy=True).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.sigma_eps2 is not None:
            object.__setattr__(self, "sigma_eps2", float(self.sigma_eps2))

        if not np.all(np.isfinite(self.cut)) or not np.all(np.isfinite(self.beta)):
            raise ValueError("non-finite intercepts or regression coefficients")
        if len(self.cut) > 1 and np.any(np.diff(self.cut) > 0):
            raise ValueError("ordinal intercepts must be non-increasing")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.sigma_eps2 is not None and not self.sigma_eps2 > 0:
            raise ValueError("sigma_eps2 must be positive")
        k = len(self.xi)
        if len(self.rho) != k or len(self.pi) != k:
            raise ValueError("xi, rho, pi must have the same length")
        if k < 1:
            raise ValueError("at least one mixture component required")
        if self.xi[0] != 0.0:
            raise ValueError("xi[0] must be exactly 0 (identifiability)")
        if np.any(np.abs(self.rho) >= 1):
            raise ValueError("all |rho| must be < 1")
        if np.any(self.pi <= 0) or abs(self.pi.sum() - 1.0) > _PI_TOL:
            raise ValueError("pi must be positive and sum to 1")

    @property
    def k(self) -> int:
        return len(self.xi)

    def replace(self, **changes) -> "Parameters":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Balanced, fully observed panel: y is (n, T), X is (n, T, p)."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float, copy=True)
        X = np.array(self.X, dtype=float, copy=True)
        if y.ndim != 2:
            raise ValueError("y must be a 2-d (n, T) array")
        if X.ndim != 3 or X.shape[:2] != y.shape:
            raise ValueError("X must be a 3-d (n, T, p) array matching y")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    def subject(self, i: int) -> "Dataset":
        return Dataset(self.y[i : i + 1], self.X[i : i + 1])


@dataclass(frozen=True)
class DataIssue:
    """One validation violation, located at subject i / occasion t when applicable."""

    i: int | None
    t: int | None
    message: str


@dataclass(frozen=True)
class PackLayout:
    """Index map of the unconstrained parameter vector."""

    cut: slice
    beta: slice
    sigma: int
    eps: int | None
    xi: slice
    rho: slice
    pi: slice
    size: int


def layout(spec: ModelSpec) -> PackLayout:
    ncut = spec.family.n_cut
    pos = 0
    cut = slice(pos, pos + ncut)
    pos += ncut
    beta = slice(pos, pos + spec.p)
    pos += spec.p
    sigma = pos
    pos += 1
    eps = None
    if spec.family.is_continuous:
        eps = pos
        pos += 1
    xi = slice(pos, pos + spec.k - 1)
    pos += spec.k - 1
    rho = slice(pos, pos + spec.k)
    pos += spec.k
    pi = slice(pos, pos + spec.k - 1)
    pos += spec.k - 1
    return PackLayout(cut, beta, sigma, eps, xi, rho, pi, pos)


def count_parameters(spec: ModelSpec) -> int:
    """Free parameter count: intercept-scale params + p + 1 (sigma) + (3k - 2)."""
    return layout(spec).size


def resp_block_size(spec: ModelSpec) -> int:
    """Length of the leading response-scale block [cut, beta, sigma, (eps), xi]."""
    return layout(spec).xi.stop


def cut_to_free(cut: np.ndarray) -> np.ndarray:
    c = np.empty_like(cut)
    c[0] = cut[0]
    if len(cut) > 1:
        with np.errstate(divide="ignore"):
            c[1:] = np.log(-np.diff(cut))
    return c


def free_to_cut(c: np.ndarray) -> np.ndarray:
    cut = np.empty_like(c)
    cut[0] = c[0]
    if len(c) > 1:
        cut[1:] = c[0] - np.cumsum(np.exp(c[1:]))
    return cut


def cut_jacobian(c: np.ndarray) -> np.ndarray:
    """d(cut)/d(free): column 0 is ones, entry (j, l >= 1) is -exp(c_l) for l <= j."""
    m = len(c)
    jac = np.zeros((m, m))
    jac[:, 0] = 1.0
    for l in range(1, m):
        jac[l:, l] = -np.exp(c[l])
    return jac


def pack(params: Parameters) -> np.ndarray:
    """Map constrained parameters to the unconstrained vector (inverse of unpack)."""
    parts = [cut_to_free(params.cut), params.beta, [np.log(params.sigma)]]
    if params.sigma_eps2 is not None:
        parts.append([np.log(params.sigma_eps2)])
    parts.append(params.xi[1:])
    parts.append(np.arctanh(params.rho))
    parts.append(np.log(params.pi[1:] / params.pi[0]))
    u = np.concatenate([np.asarray(p, dtype=float) for p in parts])
    if not np.all(np.isfinite(u)):
        raise ValueError("parameters are not representable on the unconstrained scale "
                         "(tied intercepts or boundary values)")
    return u


def unpack(u: np.ndarray, spec: ModelSpec) -> Parameters:
    """Map an unconstrained vector back to constrained parameters."""
    u = np.asarray(u, dtype=float).reshape(-1)
    lay = layout(spec)
    if u.shape[0] != lay.size:
        raise ValueError(f"vector has length {u.shape[0]}, expected {lay.size}")
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite entries in parameter vector")
    cut = free_to_cut(u[lay.cut])
    beta = u[lay.beta]
    sigma = float(np.exp(u[lay.sigma]))
    eps = float(np.exp(u[lay.eps])) if lay.eps is not None else None
    xi = np.concatenate([[0.0], u[lay.xi]])
    rho = np.tanh(u[lay.rho])
    g = np.concatenate([[0.0], u[lay.pi]])
    g = g - g.max()
    pi = np.exp(g)
    pi /= pi.sum()
    return Parameters(cut=cut, beta=beta, sigma=sigma, xi=xi, rho=rho, pi=pi, sigma_eps2=eps)


def check_compatible(params: Parameters, spec: ModelSpec) -> None:
    fam = spec.family
    if len(params.cut) != fam.n_cut:
        raise ValueError(f"expected {fam.n_cut} intercepts, got {len(params.cut)}")
    if len(params.beta) != spec.p:
        raise ValueError(f"expected {spec.p} regression coefficients, got {len(params.beta)}")
    if params.k != spec.k:
        raise ValueError(f"expected {spec.k} mixture components, got {params.k}")
    if fam.is_continuous != (params.sigma_eps2 is not None):
        raise ValueError("sigma_eps2 must be present exactly for the continuous family")


def validate_dataset(data: Dataset, spec: ModelSpec) -> list[DataIssue]:
    """Collect all violations (empty list means the panel is valid)."""
    issues: list[DataIssue] = []
    if data.p != spec.p:
        issues.append(DataIssue(None, None, f"dataset has {data.p} covariates, spec declares {spec.p}"))
    if data.n < 1 or data.T < 1:
        issues.append(DataIssue(None, None, "empty panel"))
        return issues

    bad_x = ~np.isfinite(data.X)
    for i, t in zip(*np.nonzero(bad_x.any(axis=2))):
        issues.append(DataIssue(int(i), int(t), "non-finite covariate value"))

    y = data.y
    bad_y = ~np.isfinite(y)
    fam = spec.family
    if fam.is_ordinal or fam.is_binary:
        lo, hi = (1, fam.categories) if fam.is_ordinal else (0, 1)
        bad_y = bad_y | (y != np.round(y)) | (y < lo) | (y > hi)
        label = f"response outside {{{lo}..{hi}}}"
    else:
        label = "non-finite response"
    for i, t in zip(*np.nonzero(bad_y)):
        issues.append(DataIssue(int(i), int(t), f"{label} (value {y[i, t]!r})"))
    return issues
