"""Bayesian sample-size planning for external validation of risk prediction models."""

from .calibration import CalibrationLocationSpec, CalibrationModel, resolve_intercept
from .errors import (ConfigError, DomainError, IdentificationError,
                     InfeasibleTargetError, NumericError, PriorInfeasibleError,
                     ValplanError)
from .evidence import (EvidencePrior, Marginal, ThetaDraw, ThetaSample,
                       bootstrap_correlation, default_pilot_size, draw_theta,
                       iman_conover, marginal_from_moments,
                       marginal_from_upper95, pointmass, theta_from_point)
from .planner import (ComponentResult, PlanResult, SearchConfig, plan,
                      solve_assurance_rule, solve_width_rule)
from .precision import (MetricEstimates, PrecisionDraws, SampleSizeRule,
                        ValidationSample, calibration_error_bands,
                        conventional_min_n, estimate_metrics,
                        preposterior_widths, qciw, riley_min_n, se_cstat,
                        se_log_oe, se_slope, simulate_sample, summarize)
from .riskdist import RiskDistribution, RiskMoments, identify
from .voi import (ConfusionCounts, NBTriple, VoIResult, enbs, evsi_curve,
                  net_benefit, sample_confusion, voi_run)

__version__ = "0.1.0"

__all__ = [
    "CalibrationLocationSpec", "CalibrationModel", "ComponentResult",
    "ConfigError", "ConfusionCounts", "DomainError", "EvidencePrior",
    "IdentificationError", "InfeasibleTargetError", "Marginal",
    "MetricEstimates", "NBTriple", "NumericError", "PlanResult",
    "PrecisionDraws", "PriorInfeasibleError", "RiskDistribution",
    "RiskMoments", "SampleSizeRule", "SearchConfig", "ThetaDraw",
    "ThetaSample", "VoIResult", "ValidationSample", "ValplanError",
    "bootstrap_correlation", "calibration_error_bands", "conventional_min_n",
    "default_pilot_size", "draw_theta", "enbs", "estimate_metrics",
    "evsi_curve", "identify", "iman_conover", "marginal_from_moments",
    "marginal_from_upper95", "net_benefit", "plan", "pointmass",
    "preposterior_widths", "qciw", "resolve_intercept", "riley_min_n",
    "sample_confusion", "se_cstat", "se_log_oe", "se_slope",
    "simulate_sample", "solve_assurance_rule", "solve_width_rule",
    "summarize", "theta_from_point", "voi_run",
]
