use serde::{Deserialize, Serialize};

use crate::auction::best_csi_allocation;
use crate::error::{Error, Result};
use crate::learner::{poisson_pmf_lumped, LagrangePair};
use crate::model::{AllocationDecision, ChannelMatrix, ChannelModel, DepartureModel, SimConfig, UserBand};

/// Largest I_χ·|actions| accepted by [`build_cmdp`].
pub const MAX_STATE_ACTIONS: usize = 10_000_000;

/// Finite power levels per user searched by the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub levels: Vec<Vec<f64>>,
}

impl PowerGrid {
    /// {0, P/16, P/8, P/4, P/2, P, 2P, 4P} with P the scaled budget.
    pub fn geometric(config: &SimConfig) -> Self {
        let levels = (0..config.num_users())
            .map(|k| {
                let p = config.power_budget(k);
                let mut v = vec![0.0];
                v.extend((0..7).map(|i| p * 2f64.powi(i - 4)));
                v
            })
            .collect();
        Self { levels }
    }

    pub fn uniform(users: usize, levels: Vec<f64>) -> Self {
        Self {
            levels: vec![levels; users],
        }
    }

    pub fn size(&self) -> usize {
        self.levels[0].len()
    }
}

/// Which subband assignments the oracle may choose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Restriction {
    None,
    BestCsi,
}

/// One centralized action: a holder and a grid index per subband.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub winners: Vec<usize>,
    pub grid: Vec<usize>,
}

/// The fully enumerated CMDP of a tiny configuration.
///
/// Transition rows are stored factored: the next channel is independent of
/// everything, and each queue moves independently given its departure
/// probability.
#[derive(Clone, Debug)]
pub struct EnumeratedCmdp {
    pub users: usize,
    pub subbands: usize,
    pub buffer: usize,
    pub channel: ChannelModel,
    pub grid: PowerGrid,
    pub restriction: Restriction,
    pub gamma: Vec<LagrangePair>,
    pub(crate) h_prob: Vec<f64>,
    pub(crate) actions: Vec<Action>,
    /// Actions admissible in each state, as indices into `actions`.
    pub(crate) admissible: Vec<Vec<u32>>,
    /// Departure probability per (state, admissible action, user).
    pub(crate) departure: Vec<f64>,
    /// Σ_n p_{k,n} per (action, user).
    pub(crate) action_power: Vec<f64>,
    /// Per-user queue transition matrices without and with a departure.
    pub(crate) stay: Vec<Vec<f64>>,
    pub(crate) leave: Vec<Vec<f64>>,
    /// β_k f(Q) per user and queue level.
    pub(crate) utility: Vec<Vec<f64>>,
    pub(crate) power_budget: Vec<f64>,
    pub(crate) drop_budget: Vec<f64>,
    /// Offsets of each state's block in `departure`.
    pub(crate) offsets: Vec<usize>,
}

impl EnumeratedCmdp {
    pub fn num_channel_states(&self) -> usize {
        self.h_prob.len()
    }

    pub fn num_queue_states(&self) -> usize {
        (self.buffer + 1).pow(self.users as u32)
    }

    /// I_χ.
    pub fn num_states(&self) -> usize {
        self.num_channel_states() * self.num_queue_states()
    }

    pub fn state_index(&self, h: usize, q: usize) -> usize {
        h * self.num_queue_states() + q
    }

    pub fn split_state(&self, s: usize) -> (usize, usize) {
        (s / self.num_queue_states(), s % self.num_queue_states())
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn admissible(&self, s: usize) -> &[u32] {
        &self.admissible[s]
    }

    pub fn channel_prob(&self, h: usize) -> f64 {
        self.h_prob[h]
    }

    /// Levels of the channel matrix with index `h` (user-major).
    pub fn channel_levels(&self, h: usize) -> ChannelMatrix {
        let nh = self.channel.num_levels();
        let mut x = h;
        UserBand::from_fn(self.users, self.subbands, |_, _| {
            let v = x % nh;
            x /= nh;
            v
        })
    }

    pub fn channel_index(&self, h: &ChannelMatrix) -> usize {
        let nh = self.channel.num_levels();
        let mut idx = 0;
        let mut mul = 1;
        for k in 0..self.users {
            for n in 0..self.subbands {
                idx += h[(k, n)] * mul;
                mul *= nh;
            }
        }
        idx
    }

    pub fn queue_levels(&self, q: usize) -> Vec<usize> {
        let mut x = q;
        (0..self.users)
            .map(|_| {
                let v = x % (self.buffer + 1);
                x /= self.buffer + 1;
                v
            })
            .collect()
    }

    pub fn queue_index(&self, q: &[usize]) -> usize {
        q.iter().rev().fold(0, |acc, &v| acc * (self.buffer + 1) + v)
    }

    pub fn set_gamma(&mut self, gamma: Vec<LagrangePair>) {
        self.gamma = gamma;
    }

    /// Lagrangian per-stage cost of action `a` in state `s`.
    pub fn cost(&self, s: usize, a: usize) -> f64 {
        let (_, q) = self.split_state(s);
        let ql = self.queue_levels(q);
        (0..self.users)
            .map(|k| {
                let g = self.gamma[k];
                let full = if ql[k] == self.buffer { 1.0 } else { 0.0 };
                self.utility[k][ql[k]]
                    + g.gamma_bar * (self.action_power[a * self.users + k] - self.power_budget[k])
                    + g.gamma_under * (full - self.drop_budget[k])
            })
            .sum()
    }

    pub fn action_power(&self, a: usize, k: usize) -> f64 {
        self.action_power[a * self.users + k]
    }

    /// Departure probabilities of all users for the `j`-th admissible action
    /// of state `s`.
    pub fn departures(&self, s: usize, j: usize) -> &[f64] {
        let start = self.offsets[s] + j * self.users;
        &self.departure[start..start + self.users]
    }

    /// Pr[Q_k' | Q_k, departure probability d] as a vector over Q_k'.
    pub fn user_transition(&self, k: usize, q: usize, d: f64) -> Vec<f64> {
        let w = self.buffer + 1;
        (0..w)
            .map(|qn| (1.0 - d) * self.stay[k][q * w + qn] + d * self.leave[k][q * w + qn])
            .collect()
    }

    /// Expected value of `v` (indexed by joint queue state) after one step
    /// from joint queue `q` with per-user departure probabilities `d`.
    pub fn expect_queue(&self, q: usize, d: &[f64], v: &[f64]) -> f64 {
        let ql = self.queue_levels(q);
        let marg: Vec<Vec<f64>> = (0..self.users).map(|k| self.user_transition(k, ql[k], d[k])).collect();
        // contract the least significant user first
        let w = self.buffer + 1;
        let mut cur = v.to_vec();
        for m in &marg {
            let outer = cur.len() / w;
            let mut next = vec![0.0; outer];
            for (o, slot) in next.iter_mut().enumerate() {
                let block = &cur[o * w..(o + 1) * w];
                *slot = m.iter().zip(block).map(|(p, x)| p * x).sum();
            }
            cur = next;
        }
        cur[0]
    }

    /// Full transition row over I_χ next states, for checks.
    pub fn kernel_row(&self, s: usize, j: usize) -> Vec<f64> {
        let (_, q) = self.split_state(s);
        let d = self.departures(s, j);
        let iq = self.num_queue_states();
        let ql = self.queue_levels(q);
        let marg: Vec<Vec<f64>> = (0..self.users).map(|k| self.user_transition(k, ql[k], d[k])).collect();
        let mut qrow = vec![0.0; iq];
        for (qn, slot) in qrow.iter_mut().enumerate() {
            let levels = self.queue_levels(qn);
            *slot = (0..self.users).map(|k| marg[k][levels[k]]).product();
        }
        let mut row = Vec::with_capacity(self.num_states());
        for h in 0..self.num_channel_states() {
            for qn in 0..iq {
                row.push(self.h_prob[h] * qrow[qn]);
            }
        }
        row
    }

    /// Decision in state `s` under action index `a`.
    pub fn decision(&self, a: usize) -> AllocationDecision {
        let act = &self.actions[a];
        let mut d = AllocationDecision::idle(self.users, self.subbands);
        for n in 0..self.subbands {
            let k = act.winners[n];
            let p = self.grid.levels[k][act.grid[n]];
            d.winners[n] = Some(k);
            d.power[(k, n)] = p;
        }
        d
    }

    /// Encodes the assignment of action `a` as Σ_n winner_n·K^n.
    pub fn assignment_code(&self, a: usize) -> usize {
        self.actions[a]
            .winners
            .iter()
            .rev()
            .fold(0, |acc, &k| acc * self.users + k)
    }

    pub fn num_assignments(&self) -> usize {
        self.users.pow(self.subbands as u32)
    }
}

fn queue_matrices(mean: f64, buffer: usize) -> (Vec<f64>, Vec<f64>) {
    let pmf = poisson_pmf_lumped(mean, buffer);
    let w = buffer + 1;
    let mut stay = vec![0.0; w * w];
    let mut leave = vec![0.0; w * w];
    for q in 0..w {
        for (a, pa) in pmf.iter().enumerate() {
            stay[q * w + (q + a).min(buffer)] += pa;
            let base = if q > 0 { q - 1 } else { 0 };
            leave[q * w + (base + a).min(buffer)] += pa;
        }
    }
    (stay, leave)
}

/// Enumerates states, actions, costs and the factored kernel.
pub fn build_cmdp(
    config: &SimConfig,
    grid: &PowerGrid,
    gamma: &[LagrangePair],
    restriction: Restriction,
) -> Result<EnumeratedCmdp> {
    config.validate()?;
    let channel = config.channel_model()?;
    let k_users = config.num_users();
    let nf = config.subbands;
    let nh = channel.num_levels();
    if grid.levels.len() != k_users || grid.levels.iter().any(|l| l.is_empty() || l.len() != grid.size()) {
        return Err(Error::Config("power grid needs one equally sized level list per user".into()));
    }
    if gamma.len() != k_users {
        return Err(Error::Config("one multiplier pair per user is required".into()));
    }
    let i_h = (nh as f64).powi((k_users * nf) as i32);
    let i_q = ((config.buffer + 1) as f64).powi(k_users as i32);
    let l = grid.size();
    let n_actions = ((k_users * l) as f64).powi(nf as i32);
    let per_state = match restriction {
        Restriction::None => n_actions,
        Restriction::BestCsi => (l as f64).powi(nf as i32),
    };
    if i_h * i_q * per_state > MAX_STATE_ACTIONS as f64 {
        return Err(Error::TooLarge(format!(
            "{} states × {} actions exceeds {MAX_STATE_ACTIONS}",
            i_h * i_q,
            per_state
        )));
    }
    let (i_h, i_q, n_actions) = (i_h as usize, i_q as usize, n_actions as usize);

    let mut actions = Vec::with_capacity(n_actions);
    for code in 0..n_actions {
        let mut x = code;
        let mut winners = Vec::with_capacity(nf);
        let mut g = Vec::with_capacity(nf);
        for _ in 0..nf {
            let c = x % (k_users * l);
            x /= k_users * l;
            winners.push(c / l);
            g.push(c % l);
        }
        actions.push(Action { winners, grid: g });
    }
    let mut action_power = vec![0.0; n_actions * k_users];
    for (a, act) in actions.iter().enumerate() {
        for n in 0..nf {
            let k = act.winners[n];
            action_power[a * k_users + k] += grid.levels[k][act.grid[n]];
        }
    }

    let mut cmdp = EnumeratedCmdp {
        users: k_users,
        subbands: nf,
        buffer: config.buffer,
        channel,
        grid: grid.clone(),
        restriction,
        gamma: gamma.to_vec(),
        h_prob: Vec::with_capacity(i_h),
        actions,
        admissible: Vec::with_capacity(i_h * i_q),
        departure: Vec::new(),
        action_power,
        stay: Vec::with_capacity(k_users),
        leave: Vec::with_capacity(k_users),
        utility: (0..k_users)
            .map(|k| {
                (0..=config.buffer)
                    .map(|q| config.users[k].delay_weight * config.utility_cost(k, q))
                    .collect()
            })
            .collect(),
        power_budget: (0..k_users).map(|k| config.power_budget(k)).collect(),
        drop_budget: config.users.iter().map(|u| u.drop_budget).collect(),
        offsets: Vec::with_capacity(i_h * i_q),
    };
    for k in 0..k_users {
        let (s, lv) = queue_matrices(config.arrival_mean(k), config.buffer);
        cmdp.stay.push(s);
        cmdp.leave.push(lv);
    }
    for h in 0..i_h {
        let levels = cmdp.channel_levels(h);
        cmdp.h_prob
            .push(levels.iter().map(|&i| cmdp.channel.pmf()[i]).product());
    }

    for h in 0..i_h {
        let levels = cmdp.channel_levels(h);
        let allowed: Vec<u32> = match restriction {
            Restriction::None => (0..n_actions as u32).collect(),
            Restriction::BestCsi => {
                let best: Vec<usize> = best_csi_allocation(&levels).into_iter().map(|w| w.unwrap()).collect();
                (0..n_actions as u32)
                    .filter(|&a| cmdp.actions[a as usize].winners == best)
                    .collect()
            }
        };
        // spectral efficiency per (action, user) for this channel draw
        let spectral: Vec<f64> = allowed
            .iter()
            .flat_map(|&a| {
                let act = &cmdp.actions[a as usize];
                let mut e = vec![0.0; k_users];
                for n in 0..nf {
                    let k = act.winners[n];
                    let p = grid.levels[k][act.grid[n]];
                    e[k] += (config.rate_constant * p * cmdp.channel.gain(levels[(k, n)])).ln_1p();
                }
                e
            })
            .collect();
        for q in 0..i_q {
            let ql = cmdp.queue_levels(q);
            cmdp.offsets.push(cmdp.departure.len());
            for j in 0..allowed.len() {
                for k in 0..k_users {
                    let d = if ql[k] == 0 {
                        0.0
                    } else {
                        let mu_tau = config.service_scale(k) * spectral[j * k_users + k];
                        match config.departure {
                            DepartureModel::Linear => mu_tau.clamp(0.0, 1.0),
                            DepartureModel::Exact => -(-mu_tau).exp_m1(),
                        }
                    };
                    cmdp.departure.push(d);
                }
            }
            cmdp.admissible.push(allowed.clone());
        }
    }
    Ok(cmdp)
}
