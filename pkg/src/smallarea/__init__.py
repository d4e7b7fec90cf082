"""Small-area estimation of survey proportions.

Design-based estimators (SRS, stratified, ratio, combined
post-stratification) and Bayesian hierarchical spatial models with a
Leroux CAR field, verified against synthetic gold-standard populations.
"""

from .assess import (
    AssessmentReport,
    assess,
    morans_comparison_bayes,
    morans_comparison_freq,
)
from .car import LcarParams, lcar_logpdf, lcar_precision, lcar_sample
from .design import (
    EstimateSet,
    bayes_srs_estimate,
    combined_estimate,
    ratio_estimate,
    srs_estimate,
    stratified_estimate,
)
from .errors import DegenerateValuesError, ValidationError
from .frame import (
    CellCounts,
    DesignDescriptor,
    PopulationMargins,
    SurveySample,
    Variable,
    cell_counts,
)
from .graph import AreaGraph, build_graph, morans_i
from .hb import (
    Hyperpriors,
    McmcConfig,
    ModelParams,
    ModelSpec,
    PosteriorDraws,
    finite_population_estimate,
    log_likelihood,
    log_posterior,
    pi_star_cells,
    poststratified_posterior,
    run_mcmc,
    summarize,
)
from .synth import (
    SyntheticTruth,
    TruthConfig,
    VariableSpec,
    draw_srs,
    draw_stratified,
    generate_population,
)

__version__ = "0.1.0"

__all__ = [
    "AreaGraph",
    "AssessmentReport",
    "CellCounts",
    "DegenerateValuesError",
    "DesignDescriptor",
    "EstimateSet",
    "Hyperpriors",
    "LcarParams",
    "McmcConfig",
    "ModelParams",
    "ModelSpec",
    "PopulationMargins",
    "PosteriorDraws",
    "SurveySample",
    "SyntheticTruth",
    "TruthConfig",
    "ValidationError",
    "Variable",
    "VariableSpec",
    "assess",
    "bayes_srs_estimate",
    "build_graph",
    "cell_counts",
    "combined_estimate",
    "draw_srs",
    "draw_stratified",
    "finite_population_estimate",
    "generate_population",
    "lcar_logpdf",
    "lcar_precision",
    "lcar_sample",
    "log_likelihood",
    "log_posterior",
    "morans_comparison_bayes",
    "morans_comparison_freq",
    "morans_i",
    "pi_star_cells",
    "poststratified_posterior",
    "ratio_estimate",
    "run_mcmc",
    "srs_estimate",
    "stratified_estimate",
    "summarize",
    "__version__",
]
