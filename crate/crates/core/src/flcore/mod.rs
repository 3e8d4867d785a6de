//! The learning side: data, model, protocol and the two baselines.

pub mod data;
pub mod model;
pub mod protocol;
pub mod smoothness;

pub use data::{Dataset, FederatedData, SyntheticTask};
pub use model::{solve_optimum, DatasetObjective, LogisticModel, Objective, Quadratic};
pub use protocol::{
    aggregate_once, final_accuracy, init_aggregation, local_train, lossy_receive, Algorithm, FleetState,
    LossPolicy, RoundMetrics, Simulation,
};
pub use smoothness::{estimate_smoothness, gradient_ratio_range, SmoothnessEstimate};
