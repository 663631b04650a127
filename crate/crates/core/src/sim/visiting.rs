use serde::{Deserialize, Serialize};

use crate::sim::trace::TraceRecord;

/// Ergodic visiting speed min_i l_k(φ^i, T)/T of one user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitingSpeed {
    pub user: usize,
    pub speed: f64,
    /// False when some pair was never visited (speed is then 0).
    pub all_visited: bool,
}

pub fn measure_visiting_speed(trace: &TraceRecord, slots: u64) -> Vec<VisitingSpeed> {
    trace
        .visits
        .iter()
        .enumerate()
        .map(|(user, counts)| {
            let min = counts.iter().copied().min().unwrap_or(0);
            VisitingSpeed {
                user,
                speed: if slots == 0 { 0.0 } else { min as f64 / slots as f64 },
                all_visited: min > 0,
            }
        })
        .collect()
}
