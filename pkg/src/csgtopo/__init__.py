"""Topology optimization under uncertainty with continuous stochastic gradients."""
from .config import RunConfig, build_run, resolve_config
from .evaluation import EvaluationReport, ensemble_quantiles, exact_expected_compliance, integration_error_study
from .optimizer import OptimizerConfig, run_optimization
from .problems import make_problem

__all__ = ["EvaluationReport", "OptimizerConfig", "RunConfig", "build_run", "ensemble_quantiles",
           "exact_expected_compliance", "integration_error_study", "make_problem", "resolve_config",
           "run_optimization"]
