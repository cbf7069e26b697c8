"""risklq: risk-constrained linear-quadratic control.

Synthesis of risk-aware LQR/LQG controllers that bound the cumulative
predictive variance of the state penalty, closed-form risk evaluation,
optimal-multiplier recovery by dual bisection, an exponential-cost baseline,
and a seeded closed-loop simulation engine.
"""

__version__ = "0.1.0"

from . import baselines, duality, lqg, lqr, model, riccati, scenarios, sim
from .errors import (AssumptionError, BreakdownError, ConfigurationError,
                     DivergenceError, InfeasibleError, NonConvergenceError,
                     RiskLqError, ScenarioParseError, SingularityError,
                     StructuralError, UnsupportedCaseError)
from .model import (AssumptionReport, ChannelNoise, CostSpec, DiscreteNoise,
                    GaussianMixtureNoise, GaussianNoise, LinearSystem,
                    MonteCarloConfig, NoiseSpec, QWeightedMoments,
                    compute_moments, sample_noise, validate_assumptions)
from .scenarios import Scenario, get_scenario, load_scenario, save_scenario

__all__ = [
    "__version__",
    "baselines", "duality", "lqg", "lqr", "model", "riccati", "scenarios", "sim",
    "AssumptionError", "BreakdownError", "ConfigurationError", "DivergenceError",
    "InfeasibleError", "NonConvergenceError", "RiskLqError", "ScenarioParseError",
    "SingularityError", "StructuralError", "UnsupportedCaseError",
    "AssumptionReport", "ChannelNoise", "CostSpec", "DiscreteNoise",
    "GaussianMixtureNoise", "GaussianNoise", "LinearSystem", "MonteCarloConfig",
    "NoiseSpec", "QWeightedMoments", "compute_moments", "sample_noise",
    "validate_assumptions",
    "Scenario", "get_scenario", "load_scenario", "save_scenario",
]
