import numpy as np
import pytest

from mlar import (
    Dataset,
    ModelSpec,
    Parameters,
    ResponseFamily,
    SimControl,
    simulate_dataset,
)
from mlar import _kernels

ALL_FAMILIES = [
    ResponseFamily("ordinal-logit", 5),
    ResponseFamily("ordinal-probit", 4),
    ResponseFamily("binary-logit"),
    ResponseFamily("binary-probit"),
    ResponseFamily("continuous"),
]


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger jit compilation once so timed tests measure the algorithms."""
    probs = np.full((2, 3, 4), 0.25)
    w_init = np.full(4, 0.25)
    w_trans = np.full((4, 4), 0.25)
    ahat, c = _kernels.forward(probs, w_init, w_trans)
    _kernels.backward_smooth(probs, w_trans, ahat, c, np.ones(2))


def random_params(spec: ModelSpec, rng: np.random.Generator) -> Parameters:
    """A random parameter set satisfying every constraint."""
    fam = spec.family
    if fam.is_ordinal:
        top = rng.uniform(0.5, 2.5)
        decr = rng.uniform(0.3, 1.5, fam.n_cut - 1)
        cut = top - np.concatenate([[0.0], np.cumsum(decr)])
    else:
        cut = np.array([rng.normal(0.0, 1.0)])
    beta = rng.normal(0.0, 0.5, spec.p)
    sigma = rng.uniform(0.5, 2.5)
    xi = np.concatenate([[0.0], rng.normal(0.0, 1.5, spec.k - 1)])
    rho = rng.uniform(-0.9, 0.9, spec.k)
    w = rng.uniform(0.5, 1.5, spec.k)
    pi = w / w.sum()
    eps = float(rng.uniform(0.3, 2.0)) if fam.is_continuous else None
    return Parameters(cut=cut, beta=beta, sigma=sigma, xi=xi, rho=rho, pi=pi, sigma_eps2=eps)


def random_dataset(spec: ModelSpec, rng: np.random.Generator, n: int, T: int) -> Dataset:
    """A small panel drawn from a random configuration of the same family."""
    params = random_params(spec, rng)
    sim = simulate_dataset(spec, params, SimControl(n=n, T=T, seed=int(rng.integers(2**31))))
    return sim.data


@pytest.fixture(scope="session")
def ordinal_spec():
    return ModelSpec(ResponseFamily("ordinal-logit", 5), p=2, k=2, q=11)


@pytest.fixture(scope="session")
def ordinal_sim(ordinal_spec):
    params = Parameters(
        cut=[2.0, 1.0, -0.5, -2.0],
        beta=[0.5, -0.3],
        sigma=1.5,
        xi=[0.0, 1.5],
        rho=[0.8, 0.3],
        pi=[0.6, 0.4],
    )
    sim = simulate_dataset(ordinal_spec, params, SimControl(n=80, T=5, seed=42))
    return params, sim
