"""Markov bridge models of network segregation.

Hidden-state filtering of graph conductance or polarization scores under
time-pinned Markov dynamics, with EM parameter fitting.
"""

from .bridge import (
    BridgeProcess,
    BridgeSegment,
    StateSpace,
    Trajectory,
    default_bridge,
    exact_marginals,
    make_state_space,
    make_toeplitz_transition,
    sample_paths,
    sample_trajectory,
)
from .errors import BridgeNetError
from .estimation import HmbParameters, em_fit, log_likelihood, smooth
from .filtering import FilterRun, HmbModel, HmmModel, mse, run_filter
from .graph import (
    CommunityLayout,
    WeightedGraph,
    algebraic_connectivity,
    build_company_customer_graph,
    graph_conductance,
)
from .kernels import BACKEND
from .observation import EdgeSampleConfig, NoiseModel, calibrate_noise, simulate_observations

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BridgeNetError",
    "BridgeProcess",
    "BridgeSegment",
    "CommunityLayout",
    "EdgeSampleConfig",
    "FilterRun",
    "HmbModel",
    "HmbParameters",
    "HmmModel",
    "NoiseModel",
    "StateSpace",
    "Trajectory",
    "WeightedGraph",
    "algebraic_connectivity",
    "build_company_customer_graph",
    "calibrate_noise",
    "default_bridge",
    "em_fit",
    "exact_marginals",
    "graph_conductance",
    "log_likelihood",
    "make_state_space",
    "make_toeplitz_transition",
    "mse",
    "run_filter",
    "sample_paths",
    "sample_trajectory",
    "simulate_observations",
    "smooth",
]
