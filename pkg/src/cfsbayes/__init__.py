"""Bayesian sparse estimation and parametric dictionary learning for
compressed fiber sensing."""

from cfsbayes.dictionary import (
    DictionaryBank,
    GeneratingPulse,
    ParametricDictionary,
    ThetaGrid,
    build_dictionary,
    dictionary_derivative,
    generating_pulse,
    theta_grid,
)
from cfsbayes.sensing import (
    CsMatrix,
    MeasurementScenario,
    ScenarioConfig,
    df_matrix,
    gauss_matrix,
    synthesize_scenario,
)
from cfsbayes.sparse_prior import HyperPriorConfig, HyperState, KernelConfig

__version__ = "0.1.0"

__all__ = [
    "CsMatrix",
    "DictionaryBank",
    "GeneratingPulse",
    "HyperPriorConfig",
    "HyperState",
    "KernelConfig",
    "MeasurementScenario",
    "ParametricDictionary",
    "ScenarioConfig",
    "ThetaGrid",
    "build_dictionary",
    "df_matrix",
    "dictionary_derivative",
    "gauss_matrix",
    "generating_pulse",
    "synthesize_scenario",
    "theta_grid",
]
