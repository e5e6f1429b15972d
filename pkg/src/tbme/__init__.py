"""Time-windowed Bayesian model evidence diagnostics.

Detects when a dynamic simulation model stops explaining its observations:
a sliding window scores the data against a Monte Carlo prior ensemble, a
leave-one-out resampling of the ensemble provides the reference
distribution of that score under "the model family is adequate", and
excursions below the reference band become timed, phased error signals.
"""

from .dataio import (ForcingSeries, ObservationSeries, PredictionEnsemble,
                     load_bands, load_curve, load_dataset, load_ensemble,
                     load_forcing, load_observations, load_report,
                     save_bands, save_curve, save_ensemble, save_forcing,
                     save_observations, save_outputs, save_report)
from .detection import (DetectionReport, Signal, classify_states,
                        run_detection, segment_signals, test_windows)
from .errors import DegenerateWindowError, TbmeError, ValidationError
from .evidence import (TbmeCurve, ess_of, log_sum_exp, tbme_curve,
                       window_log_tbme)
from .likelihood import LogLikTable, gauss_log_terms, table_from_terms, window_loglik
from .posterior import (Marginal, PosteriorSnapshot, posterior_weights,
                        weighted_kde, weighted_quantile)
from .reference import (ConvergenceReport, ReferenceBands, check_convergence,
                        default_ess_floor, sample_reference)
from .soilfuncs import (DurnerParams, MvgParams, WrcBands, curve_bands,
                        durner_theta, mvg_conductivity, mvg_head_from_saturation,
                        mvg_saturation, mvg_theta)
from .synthlab import (CaseBundle, ErrorInjection, SynthConfig, ToyModelParams,
                       build_case, case_injection, default_forcing,
                       sample_prior_ensemble, save_case, select_truth,
                       simulate_toy, step_residual_observations)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "TbmeError", "ValidationError", "DegenerateWindowError",
    # data containers and io
    "ObservationSeries", "PredictionEnsemble", "ForcingSeries",
    "load_observations", "save_observations", "load_ensemble", "save_ensemble",
    "load_forcing", "save_forcing", "load_dataset",
    "load_curve", "save_curve", "load_bands", "save_bands",
    "load_report", "save_report", "save_outputs",
    # likelihood and evidence
    "LogLikTable", "gauss_log_terms", "table_from_terms", "window_loglik",
    "TbmeCurve", "tbme_curve", "window_log_tbme", "log_sum_exp", "ess_of",
    # reference distribution
    "ReferenceBands", "sample_reference", "ConvergenceReport",
    "check_convergence", "default_ess_floor",
    # detection
    "DetectionReport", "Signal", "test_windows", "segment_signals",
    "classify_states", "run_detection",
    # posterior
    "PosteriorSnapshot", "Marginal", "posterior_weights",
    "weighted_quantile", "weighted_kde",
    # soil hydraulic curves
    "MvgParams", "DurnerParams", "mvg_theta", "mvg_saturation",
    "mvg_conductivity", "mvg_head_from_saturation", "durner_theta",
    "WrcBands", "curve_bands",
    # synthetic laboratory
    "ToyModelParams", "ErrorInjection", "SynthConfig", "CaseBundle",
    "simulate_toy", "default_forcing", "sample_prior_ensemble", "select_truth",
    "case_injection", "build_case", "step_residual_observations", "save_case",
]
