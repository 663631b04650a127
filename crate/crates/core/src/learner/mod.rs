//! Per-user online learning of per-subband Q-factors and multipliers.

pub mod local;
pub mod multipliers;
pub mod qtable;
pub mod stepsize;
pub mod vector;

use serde::{Deserialize, Serialize};

pub use local::{poisson_pmf_lumped, LocalModel};
pub use multipliers::{update_multipliers, ConstraintSample, LagrangePair};
pub use qtable::{
    bellman_residual, delta_wtilde, delta_wtilde_from, expected_next_w, per_stage_cost, solve_subband_fixed_point,
    subband_bellman_rhs, update_qtable, wtilde, wtilde_all, Pair, QTable, ReferenceAnchor, SlotObservation,
    VisitCounters, REFERENCE_PAIR,
};
pub use stepsize::{stepsize, StepKind, StepSizeSchedule};
pub use vector::{update_qtable_vector, vector_bellman_residual, VectorPair, VectorQTable};

use crate::error::Result;
use crate::model::SimConfig;

/// Everything one user carries between slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserLearner {
    pub table: QTable,
    pub anchor: ReferenceAnchor,
    pub counters: VisitCounters,
    pub gamma: LagrangePair,
}

impl UserLearner {
    pub fn new(config: &SimConfig, k: usize) -> Result<Self> {
        let levels = config.channel_model()?.num_levels();
        let mut table = QTable::zeros(k, config.buffer, levels);
        if config.prior_slope != 0.0 {
            for i in 0..table.num_pairs() {
                let p = table.pair_at(i);
                table.values[i] = config.prior_slope * p.queue as f64;
            }
        }
        let init = config.initial_multipliers;
        Ok(Self {
            counters: VisitCounters::new(table.num_pairs()),
            table,
            anchor: ReferenceAnchor::default(),
            gamma: LagrangePair::new(init.gamma_bar, init.gamma_under),
        })
    }
}
