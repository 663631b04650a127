use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{AnchorMode, ChannelModel, SimConfig};

/// Constants user k needs for learning and bidding, derived once from the
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub user: usize,
    pub users: usize,
    pub subbands: usize,
    pub buffer: usize,
    pub channel: ChannelModel,
    /// Pr[own level h beats the best of the other K−1 users], ties won.
    pub win: Vec<f64>,
    /// Arrival pmf on {0, …, NQ} with the tail mass lumped at NQ.
    pub arrival_pmf: Vec<f64>,
    /// κ = Wτ/N̄.
    pub service_scale: f64,
    pub xi: f64,
    /// P_k after SNR scaling.
    pub power_budget: f64,
    pub drop_budget: f64,
    pub delay_weight: f64,
    /// f(Q) for Q = 0..=NQ.
    pub utility: Vec<f64>,
    pub anchor: AnchorMode,
}

impl LocalModel {
    pub fn new(config: &SimConfig, k: usize) -> Result<Self> {
        let channel = config.channel_model()?;
        let others = config.num_users() - 1;
        let win = (0..channel.num_levels())
            .map(|h| channel.win_probability(h, others))
            .collect();
        Ok(Self {
            user: k,
            users: config.num_users(),
            subbands: config.subbands,
            buffer: config.buffer,
            win,
            arrival_pmf: poisson_pmf_lumped(config.arrival_mean(k), config.buffer),
            service_scale: config.service_scale(k),
            xi: config.rate_constant,
            power_budget: config.power_budget(k),
            drop_budget: config.users[k].drop_budget,
            delay_weight: config.users[k].delay_weight,
            utility: (0..=config.buffer).map(|q| config.utility_cost(k, q)).collect(),
            channel,
            anchor: config.anchor,
        })
    }

    pub fn levels(&self) -> usize {
        self.channel.num_levels()
    }

    /// ξ|H|² at level h.
    pub fn effective_gain(&self, h: usize) -> f64 {
        self.xi * self.channel.gain(h)
    }
}

/// Poisson(mean) pmf on {0, …, cap} with Pr[A ≥ cap] assigned to cap.
pub fn poisson_pmf_lumped(mean: f64, cap: usize) -> Vec<f64> {
    let mut pmf = vec![0.0; cap + 1];
    if mean <= 0.0 {
        pmf[0] = 1.0;
        return pmf;
    }
    let mut term = (-mean).exp();
    let mut acc = 0.0;
    for (a, slot) in pmf.iter_mut().enumerate().take(cap) {
        *slot = term;
        acc += term;
        term *= mean / (a + 1) as f64;
    }
    pmf[cap] = (1.0 - acc).max(0.0);
    pmf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lumped_pmf_sums_to_one() {
        let p = poisson_pmf_lumped(0.1, 10);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[0] - (-0.1f64).exp()).abs() < 1e-15);
        let p = poisson_pmf_lumped(30.0, 3);
        assert!(p[3] > 0.99);
        assert_eq!(poisson_pmf_lumped(0.0, 4), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
