//! Per-slot auctions: the scalarized per-subband auction with closed-form
//! power, the exhaustive auction over vector tables, and best-CSI.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{delta_wtilde_from, wtilde_all, LagrangePair, LocalModel, QTable, VectorPair, VectorQTable};
use crate::model::{AllocationDecision, ChannelMatrix, TieBreak, UserBand};

/// Floor applied to γ̄ before dividing by it.
pub const GAMMA_FLOOR: f64 = 1e-6;

/// Largest K^NF the exhaustive auction enumerates.
pub const MAX_ASSIGNMENTS: usize = 100_000;

/// Water level of one user for the current slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterLevelParams {
    pub level: f64,
    pub gamma_bar: f64,
}

impl WaterLevelParams {
    /// level = NF·δw̃·κ/γ̄; fails if γ̄ ≤ 0.
    pub fn new(delta_w: f64, gamma_bar: f64, subbands: usize, service_scale: f64) -> Result<Self> {
        if !(gamma_bar > 0.0) {
            return Err(Error::DegenerateMultiplier(gamma_bar));
        }
        Ok(Self {
            level: subbands as f64 * delta_w * service_scale / gamma_bar,
            gamma_bar,
        })
    }

    /// As [`WaterLevelParams::new`] with γ̄ raised to [`GAMMA_FLOOR`].
    pub fn clamped(delta_w: f64, gamma_bar: f64, subbands: usize, service_scale: f64) -> Self {
        Self::new(delta_w, gamma_bar.max(GAMMA_FLOOR), subbands, service_scale).expect("floored multiplier")
    }

    /// NF·δw̃·κ, the value of one nat of spectral efficiency.
    pub fn marginal_value(&self) -> f64 {
        self.level * self.gamma_bar
    }

    /// (level − 1/g)⁺ for effective gain g = ξ|H|².
    pub fn power_for(&self, gain: f64) -> f64 {
        (self.level - 1.0 / gain).max(0.0)
    }
}

/// p = s·(level − 1/(ξ|H|²))⁺.
pub fn waterfill_power(assigned: bool, gain: f64, params: &WaterLevelParams) -> Result<f64> {
    if !(params.gamma_bar > 0.0) {
        return Err(Error::DegenerateMultiplier(params.gamma_bar));
    }
    Ok(if assigned { params.power_for(gain) } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub user: usize,
    pub subband: usize,
    pub value: f64,
}

/// X = NF·δw̃·κ·log(1 + g p*) − γ̄ p*.
pub fn compute_bid(user: usize, subband: usize, gain: f64, params: &WaterLevelParams) -> Bid {
    let p = params.power_for(gain);
    Bid {
        user,
        subband,
        value: params.marginal_value() * (gain * p).ln_1p() - params.gamma_bar * p,
    }
}

/// Highest positive bid wins each subband; ties go to the lowest index.
pub fn allocate_subbands(bids: &UserBand<f64>) -> Vec<Option<usize>> {
    (0..bids.subbands())
        .map(|n| {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..bids.users() {
                let x = bids[(k, n)];
                if best.is_none_or(|(_, b)| x > b) {
                    best = Some((k, x));
                }
            }
            best.filter(|&(_, x)| x > 0.0).map(|(k, _)| k)
        })
        .collect()
}

/// [`allocate_subbands`] with the configured tie rule.
pub fn allocate_subbands_with<R: Rng + ?Sized>(bids: &UserBand<f64>, tie: TieBreak, rng: &mut R) -> Vec<Option<usize>> {
    match tie {
        TieBreak::LowestIndex => allocate_subbands(bids),
        TieBreak::Random => (0..bids.subbands())
            .map(|n| {
                let top = (0..bids.users()).map(|k| bids[(k, n)]).fold(f64::NEG_INFINITY, f64::max);
                if !(top > 0.0) {
                    return None;
                }
                let tied: Vec<usize> = (0..bids.users()).filter(|&k| bids[(k, n)] == top).collect();
                Some(if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] })
            })
            .collect(),
    }
}

/// Each subband to the user with the largest gain; ties to the lowest index.
pub fn best_csi_allocation(channel: &ChannelMatrix) -> Vec<Option<usize>> {
    (0..channel.subbands())
        .map(|n| {
            let mut best = 0;
            for k in 1..channel.users() {
                if channel[(k, n)] > channel[(best, n)] {
                    best = k;
                }
            }
            Some(best)
        })
        .collect()
}

/// Bids, water levels and the resulting decision of one scalarized auction.
#[derive(Clone, Debug, PartialEq)]
pub struct AuctionOutcome {
    pub decision: AllocationDecision,
    pub bids: UserBand<f64>,
    pub levels: Vec<WaterLevelParams>,
}

/// Water level each user would bid with at its current queue level.
pub fn water_levels(tables: &[QTable], models: &[LocalModel], gammas: &[LagrangePair], queues: &[usize]) -> Vec<WaterLevelParams> {
    tables
        .iter()
        .zip(models)
        .zip(gammas)
        .zip(queues)
        .map(|(((t, m), g), &q)| {
            let w = wtilde_all(t, m);
            let dw = delta_wtilde_from(&w, q, &m.arrival_pmf);
            WaterLevelParams::clamped(dw, g.gamma_bar, m.subbands, m.service_scale)
        })
        .collect()
}

/// Runs the scalarized per-subband auction for one slot.
pub fn scalarized_auction<R: Rng + ?Sized>(
    levels: Vec<WaterLevelParams>,
    models: &[LocalModel],
    channel: &ChannelMatrix,
    tie: TieBreak,
    rng: &mut R,
) -> AuctionOutcome {
    let k_users = channel.users();
    let nf = channel.subbands();
    let bids = UserBand::from_fn(k_users, nf, |k, n| {
        compute_bid(k, n, models[k].effective_gain(channel[(k, n)]), &levels[k]).value
    });
    let winners = allocate_subbands_with(&bids, tie, rng);
    let power = UserBand::from_fn(k_users, nf, |k, n| {
        if winners[n] == Some(k) {
            levels[k].power_for(models[k].effective_gain(channel[(k, n)]))
        } else {
            0.0
        }
    });
    AuctionOutcome {
        decision: AllocationDecision { winners, power },
        bids,
        levels,
    }
}

/// Exhaustive minimization of Σ_k Q^k(χ_k, s_k) over all assignments,
/// then closed-form power for the chosen assignment.
pub fn solve_generic_auction(
    tables: &[VectorQTable],
    models: &[LocalModel],
    gammas: &[LagrangePair],
    channel: &ChannelMatrix,
    queues: &[usize],
) -> Result<AllocationDecision> {
    let k_users = channel.users();
    let nf = channel.subbands();
    let count = (k_users as f64).powi(nf as i32);
    if count > MAX_ASSIGNMENTS as f64 {
        return Err(Error::TooLarge(format!("{k_users}^{nf} assignments exceed {MAX_ASSIGNMENTS}")));
    }
    let count = count as usize;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut assign = vec![0usize; nf];
    for code in 0..count {
        let mut x = code;
        for a in assign.iter_mut() {
            *a = x % k_users;
            x /= k_users;
        }
        let value: f64 = (0..k_users)
            .map(|k| {
                tables[k].get(
                    &VectorPair {
                        queue: queues[k],
                        levels: channel.row(k).to_vec(),
                        assigned: assign.iter().map(|&a| a == k).collect(),
                    }
                    .canonical(),
                )
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, assign.clone()));
        }
    }
    let (_, assign) = best.expect("at least one assignment");
    let winners: Vec<Option<usize>> = assign.into_iter().map(Some).collect();
    let power = UserBand::from_fn(k_users, nf, |k, n| {
        if winners[n] != Some(k) {
            return 0.0;
        }
        let dw = tables[k].delta_big_w(queues[k], &models[k]);
        let params = WaterLevelParams::clamped(dw, gammas[k].gamma_bar, 1, models[k].service_scale);
        params.power_for(models[k].effective_gain(channel[(k, n)]))
    });
    Ok(AllocationDecision { winners, power })
}

/// Objective minimized by [`solve_generic_auction`] for a given assignment.
pub fn generic_objective(tables: &[VectorQTable], channel: &ChannelMatrix, queues: &[usize], assign: &[usize]) -> f64 {
    (0..channel.users())
        .map(|k| {
            tables[k].get(
                &VectorPair {
                    queue: queues[k],
                    levels: channel.row(k).to_vec(),
                    assigned: assign.iter().map(|&a| a == k).collect(),
                }
                .canonical(),
            )
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waterfill_examples() {
        let p = WaterLevelParams { level: 2.0, gamma_bar: 1.0 };
        assert_eq!(waterfill_power(true, 1.0, &p).unwrap(), 1.0);
        assert_eq!(waterfill_power(false, 1.0, &p).unwrap(), 0.0);
        assert_eq!(waterfill_power(true, 0.5, &p).unwrap(), 0.0);
        let bad = WaterLevelParams { level: 2.0, gamma_bar: 0.0 };
        assert!(waterfill_power(true, 1.0, &bad).is_err());
        assert!(WaterLevelParams::new(1.0, 0.0, 1, 1.0).is_err());
        assert_eq!(WaterLevelParams::clamped(1.0, 0.0, 1, 1.0).gamma_bar, GAMMA_FLOOR);
    }

    #[test]
    fn bid_examples() {
        // w_term = 1, gain 1, level 2 ⇒ γ̄ = 0.5, p* = 1
        let p = WaterLevelParams { level: 2.0, gamma_bar: 0.5 };
        let b = compute_bid(0, 0, 1.0, &p);
        assert!((b.value - (2f64.ln() - 0.5)).abs() < 1e-15);
        let zero = WaterLevelParams::clamped(0.0, 0.3, 4, 1.0);
        assert_eq!(compute_bid(0, 0, 3.0, &zero).value, 0.0);
    }

    #[test]
    fn allocation_rules() {
        let bids = UserBand::from_fn(2, 3, |k, n| match (k, n) {
            (0, 0) => 3.2,
            (1, 0) => 1.1,
            (_, 1) => -1.0,
            (_, 2) => 0.7,
            _ => unreachable!(),
        });
        assert_eq!(allocate_subbands(&bids), vec![Some(0), None, Some(0)]);
        let best = best_csi_allocation(&UserBand::from_fn(3, 2, |k, n| if n == 0 { k } else { 2 - k }));
        assert_eq!(best, vec![Some(2), Some(0)]);
    }
}
