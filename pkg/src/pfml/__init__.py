"""Iterated maximum-likelihood identification for nonlinear state-space models.

Run a bootstrap particle filter at a reference parameter, freeze its
random outcomes, deterministically re-evaluate the likelihood estimator
at other parameters over the frozen system, maximize with a standard
optimizer, and iterate.
"""

__version__ = "0.1.0"

from .filtering import (
    ApfConfig,
    ParticleSystem,
    Proposal,
    WeightDegeneracy,
    categorical_resample,
    load_system,
    run_apf,
    run_frozen_bootstrap,
    save_system,
)
from .identify import (
    EstimateSummary,
    IdentifyConfig,
    IterationTrace,
    extract_estimate,
    identify,
    sgd_identify,
)
from .models import (
    LgssModel,
    get_model,
    kalman_loglik,
    make_example1,
    make_example2,
    make_lgss,
)
from .optimize import (
    OptimizerConfig,
    OptResult,
    from_unconstrained,
    maximize,
    to_unconstrained,
)
from .ssm import (
    Dataset,
    ModelContract,
    ParamVector,
    RngStream,
    load_dataset,
    log_joint,
    save_dataset,
    simulate,
)
from .surface import (
    LocalLikelihoodSurface,
    SurfaceValue,
    build_surface,
    structural_loglik,
)

__all__ = [
    "__version__",
    "ApfConfig", "ParticleSystem", "Proposal", "WeightDegeneracy",
    "categorical_resample", "load_system", "run_apf", "run_frozen_bootstrap",
    "save_system",
    "EstimateSummary", "IdentifyConfig", "IterationTrace", "extract_estimate",
    "identify", "sgd_identify",
    "LgssModel", "get_model", "kalman_loglik", "make_example1",
    "make_example2", "make_lgss",
    "OptimizerConfig", "OptResult", "from_unconstrained", "maximize",
    "to_unconstrained",
    "Dataset", "ModelContract", "ParamVector", "RngStream", "load_dataset",
    "log_joint", "save_dataset", "simulate",
    "LocalLikelihoodSurface", "SurfaceValue", "build_surface",
    "structural_loglik",
]
