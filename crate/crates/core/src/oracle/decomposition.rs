use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{poisson_pmf_lumped, LagrangePair};
use crate::model::{DepartureModel, SimConfig};
use crate::oracle::cmdp::PowerGrid;
use crate::oracle::rvi::RviOptions;

/// Relative values of one user's queue under best-CSI allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerUserValues {
    pub theta: f64,
    /// W̃_k(Q) with W̃_k(0) = 0.
    pub w: Vec<f64>,
    pub sweeps: usize,
}

/// Solves the (NQ+1)-state Poisson equation of user `k` when every subband
/// goes to the user with the best channel and powers come from `grid`.
pub fn per_user_best_csi(
    config: &SimConfig,
    grid: &PowerGrid,
    gamma: LagrangePair,
    k: usize,
    opts: RviOptions,
) -> Result<PerUserValues> {
    let channel = config.channel_model()?;
    let nh = channel.num_levels();
    let nf = config.subbands;
    let nq = config.buffer;
    let w = nq + 1;
    let others_below = k;
    let others_above = config.num_users() - 1 - k;
    // Pr[user k wins a subband | own level h], lowest index wins ties
    let win: Vec<f64> = (0..nh)
        .map(|h| channel.cdf_below(h).powi(others_below as i32) * channel.cdf(h).powi(others_above as i32))
        .collect();
    let levels = &grid.levels[k];
    let arrivals = poisson_pmf_lumped(config.arrival_mean(k), nq);
    let kappa = config.service_scale(k);
    let xi = config.rate_constant;
    let budget = config.power_budget(k);
    let pd = config.users[k].drop_budget;
    let beta = config.users[k].delay_weight;

    // (probability, per-subband effective gain or None when lost)
    let mut patterns: Vec<(f64, Vec<Option<f64>>)> = Vec::new();
    for code in 0..nh.pow(nf as u32) * (1 << nf) {
        let mut x = code;
        let mut prob = 1.0;
        let mut gains = Vec::with_capacity(nf);
        for _ in 0..nf {
            let h = x % nh;
            x /= nh;
            let s = x % 2 == 1;
            x /= 2;
            prob *= channel.pmf()[h] * if s { win[h] } else { 1.0 - win[h] };
            gains.push(if s { Some(xi * channel.gain(h)) } else { None });
        }
        if prob > 0.0 {
            patterns.push((prob, gains));
        }
    }
    // every power choice over the won subbands of each pattern:
    // (Σp, spectral efficiency)
    let l = levels.len();
    let choices: Vec<Vec<(f64, f64)>> = patterns
        .iter()
        .map(|(_, gains)| {
            let won: Vec<f64> = gains.iter().flatten().copied().collect();
            (0..l.pow(won.len() as u32))
                .map(|code| {
                    let mut x = code;
                    let (mut p, mut e) = (0.0, 0.0);
                    for g in &won {
                        let pw = levels[x % l];
                        x /= l;
                        p += pw;
                        e += (pw * g).ln_1p();
                    }
                    (p, e)
                })
                .collect()
        })
        .collect();

    let next = |q: usize, d: f64, v: &[f64]| -> f64 {
        arrivals
            .iter()
            .enumerate()
            .map(|(a, pa)| {
                let stay = v[(q + a).min(nq)];
                let leave = v[(q.saturating_sub(1) + a).min(nq)];
                pa * ((1.0 - d) * stay + d * leave)
            })
            .sum()
    };
    let mut v = vec![0.0; w];
    let mut span = f64::INFINITY;
    let mut theta = 0.0;
    for sweep in 1..=opts.max_sweeps {
        let mut tv = vec![0.0; w];
        for q in 0..w {
            let full = if q == nq { 1.0 } else { 0.0 };
            let base = beta * config.utility_cost(k, q) - gamma.gamma_bar * budget + gamma.gamma_under * (full - pd);
            let mut acc = 0.0;
            for ((prob, _), opts_p) in patterns.iter().zip(&choices) {
                let best = opts_p
                    .iter()
                    .map(|&(p, e)| {
                        let d = if q == 0 {
                            0.0
                        } else {
                            match config.departure {
                                DepartureModel::Linear => (kappa * e).clamp(0.0, 1.0),
                                DepartureModel::Exact => -(-kappa * e).exp_m1(),
                            }
                        };
                        gamma.gamma_bar * p + next(q, d, &v)
                    })
                    .fold(f64::INFINITY, f64::min);
                acc += prob * best;
            }
            tv[q] = base + acc;
        }
        theta = tv[0];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for q in 0..w {
            let d = tv[q] - v[q];
            lo = lo.min(d);
            hi = hi.max(d);
            v[q] = tv[q] - theta;
        }
        span = hi - lo;
        if span <= opts.tol {
            return Ok(PerUserValues { theta, w: v, sweeps: sweep });
        }
    }
    let _ = theta;
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        span,
    })
}
