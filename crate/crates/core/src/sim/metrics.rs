use serde::{Deserialize, Serialize};

use crate::model::{AllocationDecision, QueueStep, SimConfig};

/// Steady-state statistics of one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    /// E[Q_k] in packets.
    pub avg_delay_pck: f64,
    /// E[Q_k]/λ_k in seconds.
    pub avg_delay_s: f64,
    /// Fraction of slots that start with a full buffer.
    pub drop_rate: f64,
    /// Dropped over arrived traffic.
    pub overflow_frac: f64,
    pub avg_power_w: f64,
    /// Average power spent while the queue was empty.
    pub wasted_power_w: f64,
    /// Slots spent at each queue level 0..=NQ.
    pub histogram: Vec<u64>,
}

impl UserMetrics {
    /// Empirical Pr[Q ≤ q] for q = 0..=NQ.
    pub fn cdf(&self) -> Vec<f64> {
        let total: u64 = self.histogram.iter().sum();
        let mut acc = 0u64;
        self.histogram
            .iter()
            .map(|c| {
                acc += c;
                if total == 0 {
                    0.0
                } else {
                    acc as f64 / total as f64
                }
            })
            .collect()
    }
}

/// Metrics of one episode, warmup excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scheduler: String,
    pub seed: u64,
    /// Measured slots.
    pub slots: u64,
    pub idle_subband_frac: f64,
    pub users: Vec<UserMetrics>,
}

impl MetricsRecord {
    /// Mean of E[Q_k] over users.
    pub fn mean_delay_pck(&self) -> f64 {
        self.users.iter().map(|u| u.avg_delay_pck).sum::<f64>() / self.users.len() as f64
    }

    /// Σ_k β_k E[Q_k] / K.
    pub fn weighted_delay_pck(&self, config: &SimConfig) -> f64 {
        self.users
            .iter()
            .map(|u| config.users[u.user].delay_weight * u.avg_delay_pck)
            .sum::<f64>()
            / self.users.len() as f64
    }

    pub fn mean_drop_rate(&self) -> f64 {
        self.users.iter().map(|u| u.drop_rate).sum::<f64>() / self.users.len() as f64
    }
}

/// Running sums behind [`MetricsRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub slots: u64,
    pub idle_subbands: u64,
    pub subbands: usize,
    /// Σ_t Q_k(t) in packets.
    pub queue_sum: Vec<f64>,
    pub full: Vec<u64>,
    pub power_sum: Vec<f64>,
    pub wasted_sum: Vec<f64>,
    pub arrived: Vec<u64>,
    pub dropped: Vec<u64>,
    pub histogram: Vec<Vec<u64>>,
}

impl MetricsAccumulator {
    pub fn new(users: usize, subbands: usize, buffer: usize) -> Self {
        Self {
            slots: 0,
            idle_subbands: 0,
            subbands,
            queue_sum: vec![0.0; users],
            full: vec![0; users],
            power_sum: vec![0.0; users],
            wasted_sum: vec![0.0; users],
            arrived: vec![0; users],
            dropped: vec![0; users],
            histogram: vec![vec![0; buffer + 1]; users],
        }
    }

    /// Records one slot. `levels` are the control levels at the start of
    /// the slot and `packets` the queue in packets.
    pub fn record(
        &mut self,
        levels: &[usize],
        packets: &[f64],
        buffer: usize,
        decision: &AllocationDecision,
        arrivals: &[u64],
        step: &QueueStep,
    ) {
        self.slots += 1;
        self.idle_subbands += decision.idle_subbands() as u64;
        for k in 0..levels.len() {
            self.queue_sum[k] += packets[k];
            self.histogram[k][levels[k]] += 1;
            if levels[k] == buffer {
                self.full[k] += 1;
            }
            let p = decision.total_power(k);
            self.power_sum[k] += p;
            if levels[k] == 0 {
                self.wasted_sum[k] += p;
            }
            self.arrived[k] += arrivals[k];
            self.dropped[k] += step.dropped[k];
        }
    }

    pub fn finish(&self, scheduler: &str, seed: u64, config: &SimConfig) -> MetricsRecord {
        let n = self.slots.max(1) as f64;
        let users = (0..self.queue_sum.len())
            .map(|k| {
                let q = self.queue_sum[k] / n;
                let rate = config.users[k].arrival_rate;
                UserMetrics {
                    user: k,
                    avg_delay_pck: q,
                    avg_delay_s: if rate > 0.0 { q / rate } else { 0.0 },
                    drop_rate: self.full[k] as f64 / n,
                    overflow_frac: if self.arrived[k] > 0 {
                        self.dropped[k] as f64 / self.arrived[k] as f64
                    } else {
                        0.0
                    },
                    avg_power_w: self.power_sum[k] / n,
                    wasted_power_w: self.wasted_sum[k] / n,
                    histogram: self.histogram[k].clone(),
                }
            })
            .collect();
        MetricsRecord {
            scheduler: scheduler.to_string(),
            seed,
            slots: self.slots,
            idle_subband_frac: self.idle_subbands as f64 / (n * self.subbands as f64),
            users,
        }
    }
}
