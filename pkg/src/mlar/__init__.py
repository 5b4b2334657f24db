"""Maximum-likelihood fitting of panel models whose latent process is a
finite mixture of stationary AR(1) components sharing one scale.

The latent integral is discretized on an equispaced knot grid with
self-normalized density weights; likelihoods, posteriors, and scores run
through scaled forward-backward recursions.  Estimation combines EM with a
full Newton-Raphson stage; standard errors come from the numerically
differentiated observed information.
"""

from ._config import HAVE_NUMBA, USE_NUMBA
from .em import (
    EMResult,
    Posteriors,
    default_start,
    e_step,
    em_fit,
    m_step_pi,
    m_step_response,
    m_step_rho,
)
from .likelihood import (
    ForwardResult,
    NumericalError,
    component_loglik,
    dataset_loglik,
    forward_all,
    manifest_loglik,
    total_loglik,
)
from .model import (
    Dataset,
    ModelSpec,
    Parameters,
    ResponseFamily,
    count_parameters,
    pack,
    unpack,
    validate_dataset,
)
from .newton import (
    FitControls,
    FitResult,
    SEReport,
    fit_mlar,
    lr_test,
    nr_fit,
    observed_info,
    score,
    standard_errors,
)
from .predict import (
    PredictionSurface,
    SelectionReport,
    choose_k_from_corrs,
    choose_q_from_path,
    predict_alpha,
    select_k,
    select_q,
    surface_correlation,
)
from .quadrature import (
    QuadratureGrid,
    build_grid,
    initial_weights,
    make_knots,
    transition_weights,
)
from .response import cond_logprob, cond_score_hess
from .simulate import SimControl, SimResult, replicate_study, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EMResult",
    "FitControls",
    "FitResult",
    "ForwardResult",
    "HAVE_NUMBA",
    "ModelSpec",
    "NumericalError",
    "Parameters",
    "Posteriors",
    "PredictionSurface",
    "QuadratureGrid",
    "ResponseFamily",
    "SEReport",
    "SelectionReport",
    "SimControl",
    "SimResult",
    "USE_NUMBA",
    "build_grid",
    "choose_k_from_corrs",
    "choose_q_from_path",
    "component_loglik",
    "cond_logprob",
    "cond_score_hess",
    "count_parameters",
    "dataset_loglik",
    "default_start",
    "e_step",
    "em_fit",
    "fit_mlar",
    "forward_all",
    "initial_weights",
    "lr_test",
    "m_step_pi",
    "m_step_response",
    "m_step_rho",
    "make_knots",
    "manifest_loglik",
    "nr_fit",
    "observed_info",
    "pack",
    "predict_alpha",
    "replicate_study",
    "score",
    "select_k",
    "select_q",
    "simulate_dataset",
    "standard_errors",
    "surface_correlation",
    "total_loglik",
    "transition_weights",
    "unpack",
    "validate_dataset",
]
