"""Planning and diagnostics toolkit for randomized trials whose goal is
predicting unit-specific treatment effects.

Submodules:

* ``core``    shared numerics (summaries, OLS, quantiles, ATE, tau^2)
* ``planner`` closed-form MSPE, prediction intervals, MDES, model selection
* ``shift``   population-shift penalties and distance metrics
* ``weights`` inverse-odds weighting, common support, Kish VIF
* ``oracle``  Monte Carlo verification of every closed form
* ``ingest``  population file loading and balance diagnostics
* ``cli``     command-line surface (``rctpred``)
"""

from . import core, errors, ingest, oracle, planner, shift, weights
from .core import (
    AteResult,
    DesignSpec,
    OlsFit,
    PopulationSummary,
    PredictionModel,
    TrialData,
    VarianceSpec,
)
from .planner import (
    ANCOVA_ALWAYS_PREFERRED,
    AncovaAlwaysPreferred,
    ModelChoice,
    PlanCell,
    PlanResult,
)

__version__ = "0.1.0"

__all__ = [
    "ANCOVA_ALWAYS_PREFERRED",
    "AncovaAlwaysPreferred",
    "AteResult",
    "DesignSpec",
    "ModelChoice",
    "OlsFit",
    "PlanCell",
    "PlanResult",
    "PopulationSummary",
    "PredictionModel",
    "TrialData",
    "VarianceSpec",
    "core",
    "errors",
    "ingest",
    "oracle",
    "planner",
    "shift",
    "weights",
    "__version__",
]
