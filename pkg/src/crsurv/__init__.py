"""Competing-risks survival analysis toolkit.

Cause-specific and subdistribution hazards regression with L1 paths and
componentwise likelihood boosting, nonparametric and model-based cumulative
incidence estimation, simulation generators with analytic oracles, and a
Monte Carlo benchmark harness.
"""

from .data import CompetingRisksDataset, StepFunction, censoring_km, load_dataset, save_dataset
from .cox import (
    CoxFit,
    CoxProblem,
    IpcwSpec,
    breslow_baseline,
    neg_log_partial_likelihood,
    newton_fit,
    score_information,
)

__version__ = "0.1.0"
