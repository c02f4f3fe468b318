"""Simulator and bound calculators for distributed constrained convex optimization
with consensus mixing and projected stochastic subgradient steps."""

from .bounds import (BoundInputs, BoundReport, StoppingRule, averaged_bound, bound_inputs, bound_report,
                     bound_vs_empirical, constants_from_run, disagreement_bound, finite_time_bound,
                     function_value_bound, stopping_rule)
from .engine import (AggregatedTrace, RunTrace, SimConfig, SimState, disagreement, mix, monte_carlo, run,
                     step)
from .mixing import WeightSchedule, phi_product, rate_certificate, verify_geometric_rate
from .problem import (AbsDeviation, Ball, Box, Halfspace, Hinge, Problem, Quadratic, Simplex,
                      WeightedQuadratic, WholeSpace, project, solve_reference, subgradient_bound)
from .stochastic import KieferWolfowitz, NoiseModel, RobbinsMonro, StepsizeSchedule
from .topology import TopologySchedule

__version__ = "0.1.0"
