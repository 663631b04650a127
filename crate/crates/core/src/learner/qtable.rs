use serde::{Deserialize, Serialize};

use crate::auction::WaterLevelParams;
use crate::error::{Error, Result};
use crate::learner::local::LocalModel;
use crate::learner::multipliers::LagrangePair;
use crate::learner::stepsize::{stepsize, StepKind, StepSizeSchedule};
use crate::model::AnchorMode;

/// A per-subband state-action pair (Q, h, s).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub queue: usize,
    pub level: usize,
    pub assigned: bool,
}

impl Pair {
    pub fn new(queue: usize, level: usize, assigned: bool) -> Self {
        Self { queue, level, assigned }
    }

    /// An empty queue cannot transmit, so (0, h, 1) and (0, h, 0) are the
    /// same pair. This returns the s = 0 representative.
    pub fn canonical(self) -> Self {
        if self.queue == 0 {
            Self { assigned: false, ..self }
        } else {
            self
        }
    }
}

/// The pinned pair φ^I = (0, lowest level, 0).
pub const REFERENCE_PAIR: Pair = Pair {
    queue: 0,
    level: 0,
    assigned: false,
};

/// Per-user per-subband Q-factors q(Q, h, s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub owner: usize,
    pub queue_levels: usize,
    pub channel_levels: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(owner: usize, buffer: usize, channel_levels: usize) -> Self {
        Self {
            owner,
            queue_levels: buffer + 1,
            channel_levels,
            values: vec![0.0; 2 * channel_levels * (buffer + 1)],
        }
    }

    pub fn buffer(&self) -> usize {
        self.queue_levels - 1
    }

    /// I_φ = 2·NH·(NQ+1).
    pub fn num_pairs(&self) -> usize {
        self.values.len()
    }

    pub fn index(&self, p: Pair) -> usize {
        (p.queue * self.channel_levels + p.level) * 2 + usize::from(p.assigned)
    }

    pub fn pair_at(&self, i: usize) -> Pair {
        let assigned = i % 2 == 1;
        let rest = i / 2;
        Pair::new(rest / self.channel_levels, rest % self.channel_levels, assigned)
    }

    pub fn get(&self, p: Pair) -> f64 {
        self.values[self.index(p)]
    }

    pub fn set(&mut self, p: Pair, v: f64) {
        let i = self.index(p);
        self.values[i] = v;
    }

    pub fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        (0..self.values.len()).map(|i| self.pair_at(i))
    }

    fn check_queue(&self, q: usize) -> Result<()> {
        if q >= self.queue_levels {
            return Err(Error::OutOfRange {
                what: "queue level",
                value: q.to_string(),
                allowed: format!("0..={}", self.buffer()),
            });
        }
        Ok(())
    }
}

/// Per-pair update counts l(φ, t).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitCounters {
    pub counts: Vec<u64>,
}

impl VisitCounters {
    pub fn new(pairs: usize) -> Self {
        Self { counts: vec![0; pairs] }
    }

    pub fn min(&self) -> u64 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Cached quantities from the most recent visit to the reference pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAnchor {
    pub pair: Pair,
    /// g at the last reference visit.
    pub last_cost: f64,
    /// Q(t̄+1) after the last reference visit; w̃ is re-evaluated on it with
    /// the current table.
    pub last_next_queue: Option<usize>,
}

impl Default for ReferenceAnchor {
    fn default() -> Self {
        Self {
            pair: REFERENCE_PAIR,
            last_cost: 0.0,
            last_next_queue: None,
        }
    }
}

impl ReferenceAnchor {
    /// The offset subtracted in every update; zero before the first visit.
    pub fn value(&self, table: &QTable, gamma: LagrangePair, model: &LocalModel) -> Result<f64> {
        let Some(next) = self.last_next_queue else {
            return Ok(0.0);
        };
        Ok(match model.anchor {
            AnchorMode::Sampled => self.last_cost + wtilde(table, next, model)?,
            AnchorMode::Expected => {
                let w = wtilde_all(table, model);
                per_stage_cost(gamma, self.pair.queue, 0.0, model)
                    + expected_next_w(&w, self.pair.queue, &model.arrival_pmf)
            }
        } - table.get(self.pair))
    }
}

/// What user k observes over one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotObservation<'a> {
    pub queue: usize,
    pub channel: &'a [usize],
    pub assigned: &'a [bool],
    pub power: &'a [f64],
    pub next_queue: usize,
}

/// w̃(Q): expected per-subband Q-factor when the subband goes to the best
/// of K users.
pub fn wtilde(table: &QTable, q: usize, model: &LocalModel) -> Result<f64> {
    table.check_queue(q)?;
    Ok(wtilde_unchecked(table, q, model))
}

fn wtilde_unchecked(table: &QTable, q: usize, model: &LocalModel) -> f64 {
    let pmf = model.channel.pmf();
    (0..table.channel_levels)
        .map(|h| {
            let win = model.win[h];
            pmf[h] * (win * table.get(Pair::new(q, h, true)) + (1.0 - win) * table.get(Pair::new(q, h, false)))
        })
        .sum()
}

/// w̃ at every queue level.
pub fn wtilde_all(table: &QTable, model: &LocalModel) -> Vec<f64> {
    (0..table.queue_levels).map(|q| wtilde_unchecked(table, q, model)).collect()
}

/// δw̃(Q) = E[w̃(Q+A) − w̃(Q+A−1)], arguments clipped to the buffer.
/// An empty queue cannot release a packet, so δw̃(0) = 0.
pub fn delta_wtilde_from(w: &[f64], q: usize, arrival_pmf: &[f64]) -> f64 {
    if q == 0 {
        return 0.0;
    }
    let cap = w.len() - 1;
    arrival_pmf
        .iter()
        .enumerate()
        .map(|(a, pa)| {
            let hi = (q + a).min(cap);
            let lo = (q + a - 1).min(cap);
            pa * (w[hi] - w[lo])
        })
        .sum()
}

pub fn delta_wtilde(table: &QTable, q: usize, model: &LocalModel) -> Result<f64> {
    table.check_queue(q)?;
    Ok(delta_wtilde_from(&wtilde_all(table, model), q, &model.arrival_pmf))
}

/// E[w̃(min(Q+A, NQ))].
pub fn expected_next_w(w: &[f64], q: usize, arrival_pmf: &[f64]) -> f64 {
    let cap = w.len() - 1;
    arrival_pmf
        .iter()
        .enumerate()
        .map(|(a, pa)| pa * w[(q + a).min(cap)])
        .sum()
}

/// g_{k,n}: per-subband share of the Lagrangian per-stage cost.
pub fn per_stage_cost(gamma: LagrangePair, q: usize, power: f64, model: &LocalModel) -> f64 {
    let full = if q == model.buffer { 1.0 } else { 0.0 };
    gamma.gamma_bar * power
        + (model.delay_weight * model.utility[q] - gamma.gamma_bar * model.power_budget
            + gamma.gamma_under * (full - model.drop_budget))
            / model.subbands as f64
}

fn validate_observation(obs: &SlotObservation<'_>, table: &QTable, nf: usize) -> Result<()> {
    if obs.channel.len() != nf || obs.assigned.len() != nf || obs.power.len() != nf {
        return Err(Error::Observation(format!("expected {nf} subbands per observation")));
    }
    table.check_queue(obs.queue)?;
    table.check_queue(obs.next_queue)?;
    for n in 0..nf {
        if obs.channel[n] >= table.channel_levels {
            return Err(Error::Observation(format!("channel level {} on subband {n}", obs.channel[n])));
        }
        let p = obs.power[n];
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::Observation(format!("power {p} on subband {n}")));
        }
        if p > 0.0 && !obs.assigned[n] {
            return Err(Error::Observation(format!("power on unassigned subband {n}")));
        }
    }
    Ok(())
}

/// One asynchronous, anchored update of every pair observed this slot.
pub fn update_qtable(
    table: &mut QTable,
    anchor: &mut ReferenceAnchor,
    counters: &mut VisitCounters,
    schedule: &StepSizeSchedule,
    obs: &SlotObservation<'_>,
    gamma: LagrangePair,
    model: &LocalModel,
) -> Result<()> {
    let nf = obs.channel.len();
    validate_observation(obs, table, model.subbands)?;

    let mut seen: Vec<(Pair, f64)> = Vec::with_capacity(nf);
    for n in 0..nf {
        let pair = Pair::new(obs.queue, obs.channel[n], obs.assigned[n]).canonical();
        if !seen.iter().any(|(p, _)| *p == pair) {
            seen.push((pair, per_stage_cost(gamma, obs.queue, obs.power[n], model)));
        }
    }
    if let Some(&(_, cost)) = seen.iter().find(|(p, _)| *p == anchor.pair) {
        anchor.last_cost = cost;
        anchor.last_next_queue = Some(obs.next_queue);
    }

    let next_w = wtilde_unchecked(table, obs.next_queue, model);
    let offset = anchor.value(table, gamma, model)?;
    let mut updates = Vec::with_capacity(seen.len());
    for &(pair, cost) in &seen {
        bump(counters, table, pair);
        if pair == anchor.pair {
            continue;
        }
        let m = counters.counts[table.index(pair)];
        let eps = stepsize(schedule, m, StepKind::Q)?;
        let old = table.get(pair);
        updates.push((pair, old + eps * (cost + next_w - offset - old)));
    }
    for (pair, v) in updates {
        table.set(pair, v);
        if pair.queue == 0 {
            table.set(Pair { assigned: true, ..pair }, v);
        }
    }
    Ok(())
}

fn bump(counters: &mut VisitCounters, table: &QTable, pair: Pair) {
    counters.counts[table.index(pair)] += 1;
    if pair.queue == 0 {
        counters.counts[table.index(Pair { assigned: true, ..pair })] += 1;
    }
}

/// Right side of the per-subband fixed-point equation with θ/NF removed,
/// evaluated with closed-form optimal power.
pub fn subband_bellman_rhs(table: &QTable, gamma: LagrangePair, model: &LocalModel) -> Vec<f64> {
    let w = wtilde_all(table, model);
    let nf = model.subbands as f64;
    let mut out = vec![0.0; table.values.len()];
    for q in 0..table.queue_levels {
        let dw = delta_wtilde_from(&w, q, &model.arrival_pmf);
        let ew = expected_next_w(&w, q, &model.arrival_pmf);
        let params = WaterLevelParams::clamped(dw, gamma.gamma_bar, model.subbands, model.service_scale);
        let wterm = nf * dw * model.service_scale;
        for h in 0..table.channel_levels {
            let gain = model.effective_gain(h);
            let idle = per_stage_cost(gamma, q, 0.0, model) + ew;
            out[table.index(Pair::new(q, h, false))] = idle;
            let p = params.power_for(gain);
            let busy = per_stage_cost(gamma, q, p, model) - wterm * (gain * p).ln_1p() + ew;
            out[table.index(Pair::new(q, h, true))] = busy;
        }
    }
    out
}

/// Max-norm distance of `table` from its per-subband fixed point, with θ/NF
/// recovered at the reference pair.
pub fn bellman_residual(table: &QTable, gamma: LagrangePair, model: &LocalModel) -> f64 {
    let rhs = subband_bellman_rhs(table, gamma, model);
    let r = table.index(REFERENCE_PAIR);
    let theta = rhs[r] - table.values[r];
    rhs.iter()
        .zip(&table.values)
        .map(|(t, q)| (t - theta - q).abs())
        .fold(0.0, f64::max)
}

/// Solves the per-subband fixed-point equation by relative value iteration.
/// Returns the table and θ/NF.
pub fn solve_subband_fixed_point(
    owner: usize,
    gamma: LagrangePair,
    model: &LocalModel,
    tol: f64,
    max_sweeps: usize,
) -> Result<(QTable, f64)> {
    let mut table = QTable::zeros(owner, model.buffer, model.levels());
    let r = table.index(REFERENCE_PAIR);
    let mut span = f64::INFINITY;
    for _ in 0..max_sweeps {
        let rhs = subband_bellman_rhs(&table, gamma, model);
        let theta = rhs[r];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (q, t) in table.values.iter_mut().zip(&rhs) {
            let next = t - theta;
            let d = next - *q;
            lo = lo.min(d);
            hi = hi.max(d);
            *q = next;
        }
        span = hi - lo;
        if span <= tol {
            return Ok((table, theta));
        }
    }
    Err(Error::NotConverged {
        sweeps: max_sweeps,
        span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SimConfig;

    fn model(users: usize, levels: Vec<f64>, pmf: Vec<f64>) -> LocalModel {
        let mut c = SimConfig::reference();
        c.users.truncate(1);
        while c.users.len() < users {
            c.users.push(c.users[0].clone());
        }
        c.channel = crate::model::ChannelSpec::Explicit { levels, pmf };
        c.subbands = 2;
        c.buffer = 3;
        LocalModel::new(&c, 0).unwrap()
    }

    #[test]
    fn win_probabilities_by_enumeration() {
        let m = model(2, vec![0.5, 1.5], vec![0.5, 0.5]);
        assert_eq!(m.win, vec![0.5, 1.0]);
        let m = model(1, vec![0.5, 1.5], vec![0.5, 0.5]);
        assert_eq!(m.win, vec![1.0, 1.0]);
    }

    #[test]
    fn wtilde_of_single_user_uses_assigned_entries() {
        let m = model(1, vec![0.5, 1.5], vec![0.25, 0.75]);
        let mut t = QTable::zeros(0, 3, 2);
        t.set(Pair::new(2, 0, true), 4.0);
        t.set(Pair::new(2, 1, true), 8.0);
        t.set(Pair::new(2, 1, false), 100.0);
        assert!((wtilde(&t, 2, &m).unwrap() - 7.0).abs() < 1e-12);
        assert!(wtilde(&t, 4, &m).is_err());
    }

    #[test]
    fn delta_of_identity_is_one_inside_buffer() {
        let w = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        // arrivals that never reach the boundary from Q = 2
        let pmf = [0.5, 0.3, 0.2];
        assert!((delta_wtilde_from(&w, 2, &pmf) - 1.0).abs() < 1e-15);
        assert_eq!(delta_wtilde_from(&w, 10, &[1.0]), 1.0);
        assert_eq!(delta_wtilde_from(&[3.0; 5], 2, &pmf), 0.0);
        assert_eq!(delta_wtilde_from(&w, 0, &pmf), 0.0);
    }

    #[test]
    fn per_stage_cost_constants() {
        let m = model(2, vec![0.5, 1.5], vec![0.5, 0.5]);
        let g = LagrangePair::new(0.3, 2.0);
        let c0 = per_stage_cost(g, 0, 0.0, &m);
        let expect = -(0.3 * m.power_budget + 2.0 * m.drop_budget) / 2.0;
        assert!((c0 - expect).abs() < 1e-12);
        let full = per_stage_cost(g, 3, 0.0, &m) - m.utility[3] / 2.0;
        assert!((full - (expect + 2.0 / 2.0)).abs() < 1e-12);
        let free = per_stage_cost(LagrangePair::zero(), 2, 0.0, &m);
        assert!((free - m.utility[2] / 2.0).abs() < 1e-12);
    }

    #[test]
    fn first_update_from_zero_table() {
        let m = model(2, vec![0.5, 1.5], vec![0.5, 0.5]);
        let mut t = QTable::zeros(0, 3, 2);
        let mut a = ReferenceAnchor::default();
        let mut c = VisitCounters::new(t.num_pairs());
        let s = StepSizeSchedule { c_q: 0.5, ..StepSizeSchedule::default() };
        let g = LagrangePair::new(0.1, 0.0);
        let obs = SlotObservation {
            queue: 2,
            channel: &[1, 1],
            assigned: &[true, true],
            power: &[0.4, 0.4],
            next_queue: 1,
        };
        update_qtable(&mut t, &mut a, &mut c, &s, &obs, g, &m).unwrap();
        let cost = per_stage_cost(g, 2, 0.4, &m);
        assert!((t.get(Pair::new(2, 1, true)) - 0.5 * cost).abs() < 1e-15);
        assert_eq!(c.counts[t.index(Pair::new(2, 1, true))], 1);
        assert_eq!(c.total(), 1);
    }

    #[test]
    fn reference_pair_stays_pinned() {
        let mut m = model(2, vec![0.5, 1.5], vec![0.5, 0.5]);
        m.anchor = AnchorMode::Sampled;
        let mut t = QTable::zeros(0, 3, 2);
        let mut a = ReferenceAnchor::default();
        let mut c = VisitCounters::new(t.num_pairs());
        let s = StepSizeSchedule::default();
        let obs = SlotObservation {
            queue: 0,
            channel: &[0, 1],
            assigned: &[false, false],
            power: &[0.0, 0.0],
            next_queue: 2,
        };
        update_qtable(&mut t, &mut a, &mut c, &s, &obs, LagrangePair::new(1.0, 1.0), &m).unwrap();
        assert_eq!(t.get(REFERENCE_PAIR), 0.0);
        assert_eq!(a.last_next_queue, Some(2));
        // same slot, same cost as the anchor: the increment cancels
        assert_eq!(t.get(Pair::new(0, 1, false)), 0.0);
        assert_eq!(c.counts[t.index(Pair::new(0, 1, true))], 1);
        assert_eq!(c.counts[t.index(REFERENCE_PAIR)], 1);
    }

    #[test]
    fn inconsistent_observation_is_rejected() {
        let m = model(2, vec![0.5, 1.5], vec![0.5, 0.5]);
        let mut t = QTable::zeros(0, 3, 2);
        let mut a = ReferenceAnchor::default();
        let mut c = VisitCounters::new(t.num_pairs());
        let obs = SlotObservation {
            queue: 1,
            channel: &[0, 1],
            assigned: &[false, true],
            power: &[0.5, 0.0],
            next_queue: 1,
        };
        let r = update_qtable(&mut t, &mut a, &mut c, &StepSizeSchedule::default(), &obs, LagrangePair::zero(), &m);
        assert!(r.is_err());
    }

    #[test]
    fn fixed_point_has_zero_residual_and_zero_table_does_not() {
        let m = model(2, vec![0.5, 1.5], vec![0.5, 0.5]);
        let g = LagrangePair::new(0.2, 0.5);
        let (t, _) = solve_subband_fixed_point(0, g, &m, 1e-12, 100_000).unwrap();
        assert!(bellman_residual(&t, g, &m) < 1e-9);
        assert_eq!(t.get(REFERENCE_PAIR), 0.0);
        let z = QTable::zeros(0, 3, 2);
        assert!(bellman_residual(&z, g, &m) > 0.0);
    }
}
