//! Exact centralized solution of tiny instances.

pub mod cmdp;
pub mod decomposition;
pub mod dual;
pub mod rvi;
pub mod stationary;

pub use cmdp::{build_cmdp, Action, EnumeratedCmdp, PowerGrid, Restriction, MAX_STATE_ACTIONS};
pub use decomposition::{per_user_best_csi, PerUserValues};
pub use dual::{dual_ascent, DualOptions, DualSolution};
pub use rvi::{
    bellman_span_residual, greedy_policy, reachable_states, relative_value_iteration, relative_value_iteration_with, OracleSolution,
    RviOptions,
};
pub use stationary::{evaluate_policy, queue_chain, Policy, StationaryMetrics};

pub use rvi::channel_average;
