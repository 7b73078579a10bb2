"""Feasibility probabilities for flow networks with random boundary data."""

from .errors import FlowProbError
from .kde import KdeModel, MinMaxKde, box_probability, minmax_box_probability
from .montecarlo import ProbabilityEstimate, confidence_interval, mc_probability
from .network import Network, build_incidence, load_network, parse_network
from .optimize import KktPoint, OptimizationProblem, kkt_residuals, solve_chance
from .scenarios import load_scenario
from .srd import srd_probability

__version__ = "0.1.0"

__all__ = [
    "FlowProbError", "KdeModel", "MinMaxKde", "box_probability", "minmax_box_probability",
    "ProbabilityEstimate", "confidence_interval", "mc_probability", "Network", "build_incidence",
    "load_network", "parse_network", "KktPoint", "OptimizationProblem", "kkt_residuals", "solve_chance",
    "load_scenario", "srd_probability",
]
