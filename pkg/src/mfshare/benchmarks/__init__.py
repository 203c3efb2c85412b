"""Ready-made model pairs: the linear closed-form example, the analytic pair and reaction-diffusion."""

from .analytic import AnalyticPair, analytic_pair
from .theoretical import TheoreticalOracles, theoretical_models, theoretical_oracles

__all__ = ["AnalyticPair", "TheoreticalOracles", "analytic_pair", "theoretical_models", "theoretical_oracles"]
