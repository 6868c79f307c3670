"""Threshold parallel repetition for single-prover quantum interactive proofs.

Verifier protocols are compiled into a winning operator whose pairing with a
prover strategy gives the success probability; optimal values come from a
semidefinite program with a certified duality gap, and the planner picks
the repetition count from closed-form tail bounds.
"""

__version__ = "0.1.0"

from .errors import (
    BoundVacuousError,
    DimensionError,
    InstanceTooLarge,
    ProtocolFormatError,
    SolverError,
    ThresholdRepError,
    ValidationError,
)
from .quantum import (
    BinaryPOVM,
    ChoiOperator,
    DensityOperator,
    SpaceDims,
    ValidationReport,
    apply_channel,
    link_product,
    partial_trace,
    validate,
)
from .protocol import (
    BUILTIN_PROTOCOLS,
    ProtocolSpec,
    ProverProgram,
    ThresholdTask,
    WinningOperator,
    compile_threshold,
    compile_winning_operator,
    load_protocol,
    restrict_to_subset,
    save_protocol,
    simulate,
    validate_protocol,
)
from .sdp import SdpProblem, SdpSolution, SolverOptions, solve_sdp
from .strategy import (
    StrategyOperator,
    optimal_threshold_value,
    optimal_value,
    see_saw,
    see_saw_lower_bound,
    solve_threshold_value,
    solve_value,
    strategy_from_program,
    validate_strategy,
)
from .bounds import (
    ErrorParams,
    PlanningError,
    RepetitionPlan,
    binary_kl,
    binomial_tail,
    hedging_bound,
    ik_bound,
    monte_carlo_tail,
    plan_repetition,
    plan_with_shrinking_gap,
)
