"""Staffing design and simulation for multi-skill service systems under FCFS-ALIS.

Matching rates come from the FCFS infinite bipartite matching model; designs
are checked against a discrete-event simulator of the full queueing system.
"""

from .distributions import Deterministic, Exponential, Pareto, Uniform, parse_distribution
from .model import CompatibilityGraph, ModelError, ProbabilityVector, SystemSpec
from .rates import CRPViolation, RateMatrix, check_crp, decompose, matching_rates
from .design import PriorityPartition, QoSTarget, design, design_differentiated
from .simcore import SimConfig, run_replication, run_replications
from .stats import Tolerances, aggregate, compare_to_design

__version__ = "0.1.0"

__all__ = [
    "Deterministic", "Exponential", "Pareto", "Uniform", "parse_distribution",
    "CompatibilityGraph", "ModelError", "ProbabilityVector", "SystemSpec",
    "CRPViolation", "RateMatrix", "check_crp", "decompose", "matching_rates",
    "PriorityPartition", "QoSTarget", "design", "design_differentiated",
    "SimConfig", "run_replication", "run_replications",
    "Tolerances", "aggregate", "compare_to_design",
]
