"""Unbalanced and minibatch optimal transport toolkit."""

from ._accel import backend
from .errors import ContractViolation, NumericalFailure, UnsupportedOperation
from .gradients import FlowConfig, euler_flow, grad_cost, grad_minibatch, grad_positions
from .measures import (
    CostMatrix,
    DivergenceKind,
    Measure,
    PointCloud,
    build_cost,
    csiszar_div,
    kl,
    uniform_measure,
)
from .minibatch import (
    MinibatchScheme,
    averaged_plan,
    complete_estimator,
    cross_label_mass,
    deviation_bound,
    incomplete_estimator,
    incomplete_plan,
    marginal_deviation_bound,
)
from .solvers import (
    SolverConfig,
    SolveResult,
    TransportPlan,
    bound_constant,
    exact_balanced_ot,
    sinkhorn_divergence,
    sinkhorn_uot,
    solve,
    uot_primal_oracle,
)

__version__ = "0.1.0"
