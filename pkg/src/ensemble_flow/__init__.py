"""Most-likely flow estimation for indistinguishable agents on hidden
Markov chains, from aggregate noisy observations.

The package turns per-time aggregate counts into the most likely joint
evolution of the ensemble: hidden marginals, state-to-state transfer
plans and state-to-symbol observation plans, found by scaling iterations
on the dual of a convex KL program.  A simulator, exact likelihood
bounds, entropic-transport conversions and brute-force reference solvers
round out the toolbox; ``ensemble-flow`` on the command line exposes all
of it.
"""

import os as _os

# Cap BLAS/numba thread pools before numpy configures its backend.  Best
# effort: only takes effect when this package is the first numpy importer
# in the process (true for the console script).
if "ENSEMBLE_FLOW_THREADS" in _os.environ:
    _cap = _os.environ["ENSEMBLE_FLOW_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .bridge import (
    BridgeProblem,
    BridgeSolution,
    EntropicOmtProblem,
    OmtEquivalence,
    factor_row_stochastic,
    omt_to_kl,
    solve_chain,
    solve_single_step,
)
from .core import (
    AggregateObservation,
    Marginal,
    ObservationModel,
    ObservationPlan,
    ProblemInstance,
    TransferPlan,
    TransitionModel,
    Violation,
    forward_propagate,
    validate_instance,
)
from .divergence import (
    LikelihoodReport,
    kl_divergence,
    log_transfer_likelihood,
    proposition1_bounds,
)
from .errors import (
    ConvergenceError,
    DegenerateSupportError,
    DimensionMismatchError,
    EnsembleFlowError,
    EnumerationBoundError,
    FactorizationError,
    InfeasibleMarginalsError,
    NetworkModelError,
    PreconditionError,
    SchemaError,
    SupportViolationError,
)
from .estimator import (
    DualState,
    FlowEstimate,
    estimate_flow,
    estimate_flow_multi,
    evaluate_primal_objective,
    sweep_cost_probe,
)
from .experiments import ExperimentConfig, run_network, run_particle_cloud
from .oracle import OracleResult, brute_force_ml_plan, generic_kl_solver
from .simulate import (
    NetworkModel,
    Trajectory,
    build_binned_observation,
    build_gaussian_chain,
    build_network_transitions,
    build_reference_network,
    build_sensor_models,
    network_initial_marginal,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateObservation",
    "BridgeProblem",
    "BridgeSolution",
    "ConvergenceError",
    "DegenerateSupportError",
    "DimensionMismatchError",
    "DualState",
    "EnsembleFlowError",
    "EntropicOmtProblem",
    "EnumerationBoundError",
    "ExperimentConfig",
    "FactorizationError",
    "FlowEstimate",
    "InfeasibleMarginalsError",
    "LikelihoodReport",
    "Marginal",
    "NetworkModel",
    "NetworkModelError",
    "ObservationModel",
    "ObservationPlan",
    "OmtEquivalence",
    "OracleResult",
    "PreconditionError",
    "ProblemInstance",
    "SchemaError",
    "SupportViolationError",
    "Trajectory",
    "TransferPlan",
    "TransitionModel",
    "Violation",
    "brute_force_ml_plan",
    "build_binned_observation",
    "build_gaussian_chain",
    "build_network_transitions",
    "build_reference_network",
    "build_sensor_models",
    "estimate_flow",
    "estimate_flow_multi",
    "evaluate_primal_objective",
    "factor_row_stochastic",
    "forward_propagate",
    "generic_kl_solver",
    "kl_divergence",
    "log_transfer_likelihood",
    "network_initial_marginal",
    "omt_to_kl",
    "proposition1_bounds",
    "run_network",
    "run_particle_cloud",
    "simulate",
    "solve_chain",
    "solve_single_step",
    "sweep_cost_probe",
    "validate_instance",
]
