"""Penalised logistic regression for multi-layer data.

Elastic-net solver with per-column penalty weights and mixing, Gaussian-process
hyperparameter search, multi-layer integration strategies, a synthetic
benchmark and rank aggregation.
"""
__version__ = "0.1.0"

from .core import (DegenerateDesignError, FoldDegenerateError, Layer, LayerStack, ParseError,
                   load_csv, save_csv, split, standardize)
from .cv import (CvError, CvResult, RepeatedSelection, cv_lambda, make_folds,
                 misclassification_rate, repeated_cv_selection)
from .enet import (EnetConfig, EnetFit, SeparationWarning, SolverError, fit_enet, fit_path,
                   kkt_residual, lambda_grid, lambda_max, predict_proba)
from .epsgo import (Dim, EpsgoConfig, EpsgoError, EpsgoResult, GpSurrogate, SearchSpace,
                    epsgo_minimize, expected_improvement, gp_fit, gp_update, latin_hypercube,
                    propose_next)
from .methods import (KINDS, MethodError, MethodResult, MethodSpec, run_ipf_en, run_method,
                      run_naive_en, run_sipf_en, run_two_step_epsgo, run_two_step_fixed,
                      run_univariate_mw, run_univariate_wald)
from .ranking import RankTable, aggregate_ranks, per_layer_probabilities, validate_signature
from .simulate import (SETTINGS, MetricsReport, SimDataset, SimSetting, build_sigma,
                       reduce_setting, run_benchmark, sample_dataset, score_method)
from .stats import benjamini_hochberg, mann_whitney

__all__ = [
    "DegenerateDesignError", "FoldDegenerateError", "Layer", "LayerStack", "ParseError",
    "load_csv", "save_csv", "split", "standardize", "CvError", "CvResult", "RepeatedSelection",
    "cv_lambda", "make_folds", "misclassification_rate", "repeated_cv_selection", "EnetConfig",
    "EnetFit", "SeparationWarning", "SolverError", "fit_enet", "fit_path", "kkt_residual",
    "lambda_grid", "lambda_max", "predict_proba", "Dim", "EpsgoConfig", "EpsgoError",
    "EpsgoResult", "GpSurrogate", "SearchSpace", "epsgo_minimize", "expected_improvement",
    "gp_fit", "gp_update", "latin_hypercube", "propose_next", "KINDS", "MethodError",
    "MethodResult", "MethodSpec", "run_ipf_en", "run_method", "run_naive_en", "run_sipf_en",
    "run_two_step_epsgo", "run_two_step_fixed", "run_univariate_mw", "run_univariate_wald",
    "RankTable", "aggregate_ranks", "per_layer_probabilities", "validate_signature", "SETTINGS",
    "MetricsReport", "SimDataset", "SimSetting", "build_sigma", "reduce_setting",
    "run_benchmark", "sample_dataset", "score_method", "benjamini_hochberg", "mann_whitney",
]
