use serde::{Deserialize, Serialize};

/// Learning diagnostics sampled every `stride` slots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stride: u64,
    /// Slot count at each sample.
    pub slots: Vec<u64>,
    /// W̃^k(Q) = NF·w̃^k(Q), indexed [sample][user][Q].
    pub big_w: Vec<Vec<Vec<f64>>>,
    pub gamma_bar: Vec<Vec<f64>>,
    pub gamma_under: Vec<Vec<f64>>,
    /// Per-subband Bellman residual, when requested.
    pub residual: Vec<Vec<f64>>,
    /// min_i l_k(φ^i, t) at each sample.
    pub min_visits: Vec<Vec<u64>>,
    /// Final visit counts per user and pair.
    pub visits: Vec<Vec<u64>>,
    /// Slots simulated in total, warmup included.
    pub total_slots: u64,
}

impl TraceRecord {
    pub fn new(stride: u64) -> Self {
        Self {
            stride,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// User-averaged W̃(q) at every sample.
    pub fn average_w(&self, q: usize) -> Vec<f64> {
        self.big_w
            .iter()
            .map(|users| users.iter().map(|w| w[q]).sum::<f64>() / users.len() as f64)
            .collect()
    }
}
