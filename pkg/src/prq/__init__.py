"""Periodic regularized Q-learning with linear features on finite MDPs:
model-based planners, sample-based learners and their diagnostics."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConditioningError,
    DivergenceError,
    IndexOutOfRange,
    ModelError,
    NumericError,
    PreconditionError,
    PrqError,
    SizeError,
    ValidationError,
)
from .mdp import (  # noqa: F401
    DeterministicPolicy,
    FeatureSet,
    MdpModel,
    StochasticPolicy,
    bellman_apply,
    greedy_policy,
    policy_matrix,
    sa_index,
    value_iteration,
)
from .projection import (  # noqa: F401
    RegularizedProjector,
    WeightDistribution,
    build_projector,
    contraction_report,
    convexity_constants,
)
from .planners import p_vi, regq_model_based, rp_vi, solve_by_enumeration, mspbe_value  # noqa: F401
from .sampling import (  # noqa: F401
    BehaviorChain,
    Observation,
    SeededRng,
    build_behavior_chain,
    expected_hitting_times,
    make_rng,
    sample_iid,
    step_markov,
)
from .learners import (  # noqa: F401
    LearnerRun,
    PrqConfig,
    grad_L_eta,
    inner_target_solution,
    loss_L_eta,
    prq_run,
    regq_run,
    stochastic_grad,
)
