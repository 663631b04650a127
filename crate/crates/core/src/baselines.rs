//! Reference schedulers: M-LWDF, CSIT-only and round robin.

use serde::{Deserialize, Serialize};

use crate::auction::best_csi_allocation;
use crate::error::{Error, Result};
use crate::model::{AllocationDecision, ChannelMatrix, ChannelModel, SimConfig};

/// Classical water-filling: powers (ν − 1/g)⁺ summing to `budget`.
pub fn waterfill_budget(gains: &[f64], budget: f64) -> Vec<f64> {
    let mut out = vec![0.0; gains.len()];
    if budget <= 0.0 || gains.is_empty() {
        return out;
    }
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut level = 0.0;
    let mut inv_sum = 0.0;
    for (m, &i) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[i];
        let candidate = (budget + inv_sum) / (m + 1) as f64;
        if candidate > 1.0 / gains[i] {
            level = candidate;
        } else {
            break;
        }
    }
    for &i in &order {
        out[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    out
}

/// Per-user power credit: refilled by P_k each slot, capped, and spent
/// when the user transmits. Keeps the long-run average at most P_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerBudgetTracker {
    pub credit: Vec<f64>,
    pub refill: Vec<f64>,
    pub cap: Vec<f64>,
}

impl PowerBudgetTracker {
    /// Refill P_k per slot with a cap of K·P_k.
    pub fn new(config: &SimConfig) -> Self {
        let k_users = config.num_users();
        let refill: Vec<f64> = (0..k_users).map(|k| config.power_budget(k)).collect();
        Self {
            credit: vec![0.0; k_users],
            cap: refill.iter().map(|p| p * k_users as f64).collect(),
            refill,
        }
    }

    pub fn refill(&mut self) {
        for k in 0..self.credit.len() {
            self.credit[k] = (self.credit[k] + self.refill[k]).min(self.cap[k]);
        }
    }

    pub fn spend(&mut self, k: usize, amount: f64) {
        self.credit[k] = (self.credit[k] - amount).max(0.0);
    }
}

fn waterfill_winners(
    winners: Vec<Option<usize>>,
    channel: &ChannelMatrix,
    model: &ChannelModel,
    xi: f64,
    budget: impl Fn(usize) -> f64,
) -> AllocationDecision {
    let k_users = channel.users();
    let mut d = AllocationDecision::idle(k_users, channel.subbands());
    d.winners = winners;
    for k in 0..k_users {
        let won: Vec<usize> = (0..channel.subbands()).filter(|&n| d.winners[n] == Some(k)).collect();
        if won.is_empty() {
            continue;
        }
        let gains: Vec<f64> = won.iter().map(|&n| xi * model.gain(channel[(k, n)])).collect();
        for (&n, p) in won.iter().zip(waterfill_budget(&gains, budget(k))) {
            d.power[(k, n)] = p;
        }
    }
    d
}

/// M-LWDF: subband n goes to argmax β_k Q_k log(1 + ξ (P_k/NF) |H_{k,n}|²),
/// then each winner water-fills its available credit over its won set.
pub fn mlwdf_schedule(
    config: &SimConfig,
    model: &ChannelModel,
    queues: &[usize],
    channel: &ChannelMatrix,
    tracker: &mut PowerBudgetTracker,
) -> AllocationDecision {
    tracker.refill();
    let nf = config.subbands;
    let xi = config.rate_constant;
    let winners: Vec<Option<usize>> = (0..nf)
        .map(|n| {
            let mut best: Option<(usize, f64)> = None;
            for (k, &q) in queues.iter().enumerate() {
                let p_hat = config.power_budget(k) / nf as f64;
                let metric = config.users[k].delay_weight * q as f64 * (xi * p_hat * model.gain(channel[(k, n)])).ln_1p();
                if metric > 0.0 && best.is_none_or(|(_, b)| metric > b) {
                    best = Some((k, metric));
                }
            }
            best.map(|(k, _)| k)
        })
        .collect();
    let credit = tracker.credit.clone();
    let d = waterfill_winners(winners, channel, model, xi, |k| credit[k]);
    for k in 0..config.num_users() {
        tracker.spend(k, d.total_power(k));
    }
    d
}

/// Water levels ν_k of the CSIT-only scheduler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsitLevels {
    pub levels: Vec<f64>,
}

/// Finds ν_k with E[Σ_n s_{k,n} (ν_k − 1/(ξ|H|²))⁺] = P_k under best-gain
/// allocation, computing the expectation exactly from the channel pmf.
pub fn calibrate_csit(config: &SimConfig) -> Result<CsitLevels> {
    let model = config.channel_model()?;
    let k_users = config.num_users();
    let nf = config.subbands as f64;
    let xi = config.rate_constant;
    let nh = model.num_levels();
    let mut levels = Vec::with_capacity(k_users);
    for k in 0..k_users {
        // lower-index users win ties, so they must be strictly worse
        let win: Vec<f64> = (0..nh)
            .map(|h| model.cdf_below(h).powi(k as i32) * model.cdf(h).powi((k_users - 1 - k) as i32))
            .collect();
        let spend = |nu: f64| -> f64 {
            nf * (0..nh)
                .map(|h| model.pmf()[h] * win[h] * (nu - 1.0 / (xi * model.gain(h))).max(0.0))
                .sum::<f64>()
        };
        let target = config.power_budget(k);
        let mut lo = 0.0;
        let mut hi = 1.0;
        while spend(hi) < target {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Calibration(format!("user {k} never wins a subband")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spend(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let nu = 0.5 * (lo + hi);
        if ((spend(nu) - target) / target).abs() > 1e-9 {
            return Err(Error::Calibration(format!("user {k}: residual {}", spend(nu) - target)));
        }
        levels.push(nu);
    }
    Ok(CsitLevels { levels })
}

/// Best-gain allocation with power (ν_k − 1/(ξ|H|²))⁺, ignoring queues.
pub fn csit_only_schedule(channel: &ChannelMatrix, model: &ChannelModel, xi: f64, levels: &CsitLevels) -> AllocationDecision {
    let mut d = AllocationDecision::idle(channel.users(), channel.subbands());
    d.winners = best_csi_allocation(channel);
    for n in 0..channel.subbands() {
        if let Some(k) = d.winners[n] {
            d.power[(k, n)] = (levels.levels[k] - 1.0 / (xi * model.gain(channel[(k, n)]))).max(0.0);
        }
    }
    d
}

/// User t mod K takes every subband and water-fills its available credit.
pub fn round_robin_schedule(
    slot: u64,
    channel: &ChannelMatrix,
    model: &ChannelModel,
    xi: f64,
    tracker: &mut PowerBudgetTracker,
) -> AllocationDecision {
    tracker.refill();
    let k = (slot % channel.users() as u64) as usize;
    let winners = vec![Some(k); channel.subbands()];
    let credit = tracker.credit[k];
    let d = waterfill_winners(winners, channel, model, xi, |_| credit);
    tracker.spend(k, d.total_power(k));
    d
}
