//! Transition data, policies, Q-functions and exact tabular oracles.

mod dataset;
mod policy;
mod qfunction;
mod tabular;

pub use dataset::{Action, State, StateAlphabet, Transition, TransitionDataset};
pub use policy::Policy;
pub use qfunction::{
    bellman_target, value_under_policy, FnQ, QFunction, QKind, RecordQ, TabularQ,
};
pub use tabular::{
    discounted_occupancy, population_dataset, tabular_occupancy_ratio, tabular_q_solve,
    tabular_weighting_function, OccupancyRatio, TabularMDP, DEFAULT_TRUNCATION,
};
