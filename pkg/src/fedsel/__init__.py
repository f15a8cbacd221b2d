"""Client selection for federated learning under intermittent availability.

The library models clients that come and go (availability processes),
selects among the present ones under a per-round communication budget,
and aggregates their updates so that the global model still optimizes the
intended weighted objective.  The centerpiece is a greedy rate-tracking
policy that steers each client's long-run participation rate toward the
variance-minimizing point of the achievable rate region; FedAvg-style
random selection, a loss-based power-of-choice rule, and static lookup
policies are included as baselines, along with an exact small-instance
region oracle and an experiment harness.
"""

from .availability import (
    AvailabilityKind,
    AvailabilityModel,
    CapacitySchedule,
    ConfigurationDistribution,
    ConfigurationSample,
    MarkovAvailability,
    derive_client_probs,
    independent_distribution,
    periodic_mixture_distribution,
    sample_round,
    two_client_example,
)
from .data_models import (
    ClientData,
    ClientDataset,
    EvalMetrics,
    FederatedDataset,
    GlmModel,
    TaskKind,
    dataset_loss,
    evaluate,
    generate_synthetic_alpha,
    generate_synthetic_iid,
    global_objective,
    lognormal_client_sizes,
    loss_and_grad,
    split_train_val,
)
from .fedtrain import (
    AggregateUpdate,
    ClientUpdate,
    LearningRateSchedule,
    Policy,
    PolicyKind,
    ServerOptimizer,
    TrainingDivergedError,
    TrainState,
    aggregate_debias,
    aggregate_unweighted_mean,
    aggregate_weighted_mean,
    client_local_sgd,
    recommended_gamma,
    run_round,
    server_step,
)
from .rate_region import (
    MembershipResult,
    OptimalRateResult,
    RateRegionModel,
    SelectionCovariance,
    VarianceBounds,
    debiased_rows,
    linear_argmax_table,
    linear_max_oracle,
    membership,
    mix_tables,
    optimal_rate,
    random_policy_table,
    rate_of_policy,
    sampling_variance_exact,
    selection_covariance,
    variance_bounds,
)
from .records import RoundRecord
from .rng import availability_rng, batch_rng, data_rng, policy_rng, substream
from .selection import (
    CorrelationMode,
    HObjective,
    ParticipationRate,
    PolicyIncompleteError,
    PolicyTable,
    SelectionResult,
    f3ast_select,
    fedavg_select,
    fixed_policy_select,
    h_gradient,
    h_value,
    poc_select,
    smooth_update,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateUpdate",
    "AvailabilityKind",
    "AvailabilityModel",
    "CapacitySchedule",
    "ClientData",
    "ClientDataset",
    "ClientUpdate",
    "ConfigurationDistribution",
    "ConfigurationSample",
    "CorrelationMode",
    "EvalMetrics",
    "FederatedDataset",
    "GlmModel",
    "HObjective",
    "LearningRateSchedule",
    "MarkovAvailability",
    "MembershipResult",
    "OptimalRateResult",
    "ParticipationRate",
    "Policy",
    "PolicyIncompleteError",
    "PolicyKind",
    "PolicyTable",
    "RateRegionModel",
    "RoundRecord",
    "SelectionCovariance",
    "SelectionResult",
    "ServerOptimizer",
    "TaskKind",
    "TrainState",
    "TrainingDivergedError",
    "VarianceBounds",
    "aggregate_debias",
    "aggregate_unweighted_mean",
    "aggregate_weighted_mean",
    "availability_rng",
    "batch_rng",
    "client_local_sgd",
    "data_rng",
    "dataset_loss",
    "debiased_rows",
    "derive_client_probs",
    "evaluate",
    "f3ast_select",
    "fedavg_select",
    "fixed_policy_select",
    "generate_synthetic_alpha",
    "generate_synthetic_iid",
    "global_objective",
    "h_gradient",
    "h_value",
    "independent_distribution",
    "linear_argmax_table",
    "linear_max_oracle",
    "lognormal_client_sizes",
    "loss_and_grad",
    "membership",
    "mix_tables",
    "optimal_rate",
    "periodic_mixture_distribution",
    "poc_select",
    "policy_rng",
    "random_policy_table",
    "rate_of_policy",
    "recommended_gamma",
    "run_round",
    "sample_round",
    "sampling_variance_exact",
    "selection_covariance",
    "server_step",
    "smooth_update",
    "split_train_val",
    "substream",
    "two_client_example",
    "variance_bounds",
]
