"""Mirror descent optimal transport with Sinkhorn and preconditioned-CG projections."""

from .core import (
    MDConfig,
    Marginals,
    NumericalInstability,
    Projector,
    ScaledPlan,
    SolveTrace,
    cost_matrix,
    dual_gradient,
    dual_objective,
    entropy,
    gen_kl,
    h_min,
    infeasibility,
    materialize,
    sinkhorn_direction,
)
from .mirror import ConvergenceError, MDSolveReport, default_epsilon, mdot, step_schedule
from .projections import pncg_project, sinkhorn_project
from .rounding import round_to_polytope

__version__ = "0.1.0"
