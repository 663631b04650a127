use serde::{Deserialize, Serialize};

use crate::auction::WaterLevelParams;
use crate::error::{Error, Result};
use crate::learner::local::LocalModel;
use crate::learner::multipliers::LagrangePair;
use crate::learner::qtable::{delta_wtilde_from, expected_next_w, per_stage_cost, SlotObservation};
use crate::learner::stepsize::{stepsize, StepKind, StepSizeSchedule};
use crate::model::AnchorMode;

/// Largest NF and NH the vector table accepts.
pub const MAX_VECTOR_SUBBANDS: usize = 2;
pub const MAX_VECTOR_LEVELS: usize = 4;

/// A per-user state-action pair over all subbands.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorPair {
    pub queue: usize,
    pub levels: Vec<usize>,
    pub assigned: Vec<bool>,
}

impl VectorPair {
    pub fn canonical(mut self) -> Self {
        if self.queue == 0 {
            self.assigned.iter_mut().for_each(|s| *s = false);
        }
        self
    }
}

/// Per-user Q-factors Q(Q, h-vector, s-vector).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorQTable {
    pub owner: usize,
    pub queue_levels: usize,
    pub channel_levels: usize,
    pub subbands: usize,
    pub values: Vec<f64>,
    pub counts: Vec<u64>,
    pub anchor_cost: f64,
    pub anchor_next_queue: Option<usize>,
}

impl VectorQTable {
    pub fn zeros(owner: usize, buffer: usize, channel_levels: usize, subbands: usize) -> Result<Self> {
        if subbands > MAX_VECTOR_SUBBANDS || channel_levels > MAX_VECTOR_LEVELS {
            return Err(Error::TooLarge(format!(
                "vector table needs NF <= {MAX_VECTOR_SUBBANDS} and NH <= {MAX_VECTOR_LEVELS}, got {subbands} and {channel_levels}"
            )));
        }
        let size = (buffer + 1) * channel_levels.pow(subbands as u32) * (1 << subbands);
        Ok(Self {
            owner,
            queue_levels: buffer + 1,
            channel_levels,
            subbands,
            values: vec![0.0; size],
            counts: vec![0; size],
            anchor_cost: 0.0,
            anchor_next_queue: None,
        })
    }

    pub fn reference(&self) -> VectorPair {
        VectorPair {
            queue: 0,
            levels: vec![0; self.subbands],
            assigned: vec![false; self.subbands],
        }
    }

    pub fn index(&self, p: &VectorPair) -> usize {
        let mut h = 0;
        for &l in p.levels.iter().rev() {
            h = h * self.channel_levels + l;
        }
        let s = p
            .assigned
            .iter()
            .enumerate()
            .fold(0usize, |acc, (n, &b)| acc | (usize::from(b) << n));
        ((p.queue * self.channel_levels.pow(self.subbands as u32)) + h) * (1 << self.subbands) + s
    }

    pub fn get(&self, p: &VectorPair) -> f64 {
        self.values[self.index(p)]
    }

    fn set(&mut self, p: &VectorPair, v: f64) {
        let i = self.index(p);
        self.values[i] = v;
    }

    /// Every (h-vector, s-vector) at one queue level.
    pub fn patterns(&self) -> Vec<(Vec<usize>, Vec<bool>)> {
        let nh = self.channel_levels.pow(self.subbands as u32);
        let mut out = Vec::with_capacity(nh << self.subbands);
        for hi in 0..nh {
            let mut levels = Vec::with_capacity(self.subbands);
            let mut x = hi;
            for _ in 0..self.subbands {
                levels.push(x % self.channel_levels);
                x /= self.channel_levels;
            }
            for si in 0..(1usize << self.subbands) {
                let assigned = (0..self.subbands).map(|n| si >> n & 1 == 1).collect();
                out.push((levels.clone(), assigned));
            }
        }
        out
    }

    /// W̃(Q) = E[Q(Q, H, s)] with s_n the indicator of winning subband n.
    pub fn big_w(&self, q: usize, model: &LocalModel) -> f64 {
        let pmf = model.channel.pmf();
        self.patterns()
            .into_iter()
            .map(|(levels, assigned)| {
                let prob: f64 = levels
                    .iter()
                    .zip(&assigned)
                    .map(|(&h, &s)| pmf[h] * if s { model.win[h] } else { 1.0 - model.win[h] })
                    .product();
                let v = self.get(&VectorPair {
                    queue: q,
                    levels,
                    assigned,
                });
                prob * v
            })
            .sum()
    }

    pub fn big_w_all(&self, model: &LocalModel) -> Vec<f64> {
        (0..self.queue_levels).map(|q| self.big_w(q, model)).collect()
    }

    /// δW̃(Q), the water level numerator for the vector table.
    pub fn delta_big_w(&self, q: usize, model: &LocalModel) -> f64 {
        delta_wtilde_from(&self.big_w_all(model), q, &model.arrival_pmf)
    }
}

/// Anchored update of the single vector pair observed this slot.
pub fn update_qtable_vector(
    table: &mut VectorQTable,
    schedule: &StepSizeSchedule,
    obs: &SlotObservation<'_>,
    gamma: LagrangePair,
    model: &LocalModel,
) -> Result<()> {
    let nf = table.subbands;
    if obs.channel.len() != nf || obs.assigned.len() != nf || obs.power.len() != nf {
        return Err(Error::Observation(format!("expected {nf} subbands per observation")));
    }
    if obs.queue >= table.queue_levels || obs.next_queue >= table.queue_levels {
        return Err(Error::Observation("queue level outside the table".into()));
    }
    if obs.power.iter().zip(obs.assigned).any(|(&p, &s)| !(p >= 0.0) || (p > 0.0 && !s)) {
        return Err(Error::Observation("power on an unassigned subband".into()));
    }
    let pair = VectorPair {
        queue: obs.queue,
        levels: obs.channel.to_vec(),
        assigned: obs.assigned.to_vec(),
    }
    .canonical();
    let cost: f64 = obs.power.iter().map(|&p| per_stage_cost(gamma, obs.queue, p, model)).sum();
    let reference = table.reference();
    if pair == reference {
        table.anchor_cost = cost;
        table.anchor_next_queue = Some(obs.next_queue);
    }
    let next_w = table.big_w(obs.next_queue, model);
    let offset = match (table.anchor_next_queue, model.anchor) {
        (None, _) => 0.0,
        (Some(q), AnchorMode::Sampled) => table.anchor_cost + table.big_w(q, model),
        (Some(_), AnchorMode::Expected) => {
            model.subbands as f64 * per_stage_cost(gamma, reference.queue, 0.0, model)
                + expected_next_w(&table.big_w_all(model), reference.queue, &model.arrival_pmf)
        }
    } - table.get(&reference);
    bump(table, &pair);
    if pair == reference {
        return Ok(());
    }
    let m = table.counts[table.index(&pair)];
    let eps = stepsize(schedule, m, StepKind::Q)?;
    let old = table.get(&pair);
    let new = old + eps * (cost + next_w - offset - old);
    set_aliased(table, &pair, new);
    Ok(())
}

fn aliases(table: &VectorQTable, pair: &VectorPair) -> Vec<VectorPair> {
    if pair.queue != 0 {
        return vec![pair.clone()];
    }
    (0..(1usize << table.subbands))
        .map(|si| VectorPair {
            assigned: (0..table.subbands).map(|n| si >> n & 1 == 1).collect(),
            ..pair.clone()
        })
        .collect()
}

fn bump(table: &mut VectorQTable, pair: &VectorPair) {
    for p in aliases(table, pair) {
        let i = table.index(&p);
        table.counts[i] += 1;
    }
}

fn set_aliased(table: &mut VectorQTable, pair: &VectorPair, v: f64) {
    for p in aliases(table, pair) {
        table.set(&p, v);
    }
}

/// Right side of the per-user fixed point with θ removed, for every entry.
pub fn vector_bellman_rhs(table: &VectorQTable, gamma: LagrangePair, model: &LocalModel) -> Vec<f64> {
    let w = table.big_w_all(model);
    let mut out = vec![0.0; table.values.len()];
    for q in 0..table.queue_levels {
        let dw = delta_wtilde_from(&w, q, &model.arrival_pmf);
        let ew = expected_next_w(&w, q, &model.arrival_pmf);
        // δW̃ = NF δw̃, so the per-subband level formula applies with NF = 1.
        let params = WaterLevelParams::clamped(dw, gamma.gamma_bar, 1, model.service_scale);
        let wterm = dw * model.service_scale;
        for (levels, assigned) in table.patterns() {
            let mut v = ew;
            for (&h, &s) in levels.iter().zip(&assigned) {
                let gain = model.effective_gain(h);
                let p = if s { params.power_for(gain) } else { 0.0 };
                v += per_stage_cost(gamma, q, p, model) - if s { wterm * (gain * p).ln_1p() } else { 0.0 };
            }
            let pair = VectorPair {
                queue: q,
                levels,
                assigned,
            };
            out[table.index(&pair)] = v;
        }
    }
    out
}

pub fn vector_bellman_residual(table: &VectorQTable, gamma: LagrangePair, model: &LocalModel) -> f64 {
    let rhs = vector_bellman_rhs(table, gamma, model);
    let r = table.index(&table.reference());
    let theta = rhs[r] - table.values[r];
    rhs.iter()
        .zip(&table.values)
        .map(|(t, q)| (t - theta - q).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::qtable::{Pair, QTable, ReferenceAnchor, VisitCounters, update_qtable};
    use crate::model::{ChannelSpec, SimConfig};

    fn model(nf: usize) -> LocalModel {
        let mut c = SimConfig::reference();
        c.subbands = nf;
        c.buffer = 2;
        c.channel = ChannelSpec::Explicit {
            levels: vec![0.5, 1.5],
            pmf: vec![0.5, 0.5],
        };
        LocalModel::new(&c, 0).unwrap()
    }

    #[test]
    fn size_guard() {
        assert!(VectorQTable::zeros(0, 2, 2, 3).is_err());
        assert!(VectorQTable::zeros(0, 2, 5, 1).is_err());
        let t = VectorQTable::zeros(0, 2, 2, 2).unwrap();
        assert_eq!(t.values.len(), 3 * 4 * 4);
    }

    #[test]
    fn index_is_a_bijection() {
        let t = VectorQTable::zeros(0, 2, 3, 2).unwrap();
        let mut seen = vec![false; t.values.len()];
        for q in 0..3 {
            for (levels, assigned) in t.patterns() {
                let i = t.index(&VectorPair { queue: q, levels, assigned });
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn single_subband_matches_per_subband_update() {
        let m = model(1);
        let sched = StepSizeSchedule::default();
        let g = LagrangePair::new(0.3, 0.2);
        let mut v = VectorQTable::zeros(0, 2, 2, 1).unwrap();
        let mut t = QTable::zeros(0, 2, 2);
        let mut a = ReferenceAnchor::default();
        let mut c = VisitCounters::new(t.num_pairs());
        let steps = [
            (0usize, 0usize, false, 0.0, 1usize),
            (1, 1, true, 0.7, 0),
            (0, 1, false, 0.0, 2),
            (2, 0, true, 0.2, 2),
            (2, 1, false, 0.0, 1),
            (1, 1, true, 0.7, 1),
        ];
        for &(q, h, s, p, nq) in steps.iter().cycle().take(60) {
            let obs = SlotObservation {
                queue: q,
                channel: &[h],
                assigned: &[s],
                power: &[p],
                next_queue: nq,
            };
            update_qtable(&mut t, &mut a, &mut c, &sched, &obs, g, &m).unwrap();
            update_qtable_vector(&mut v, &sched, &obs, g, &m).unwrap();
        }
        for q in 0..3 {
            for h in 0..2 {
                for s in [false, true] {
                    let a = t.get(Pair::new(q, h, s));
                    let b = v.get(&VectorPair { queue: q, levels: vec![h], assigned: vec![s] });
                    assert!((a - b).abs() < 1e-12, "{q} {h} {s}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_table_first_update() {
        let m = model(2);
        let mut v = VectorQTable::zeros(0, 2, 2, 2).unwrap();
        let g = LagrangePair::new(0.3, 0.2);
        let obs = SlotObservation {
            queue: 1,
            channel: &[1, 0],
            assigned: &[true, false],
            power: &[0.5, 0.0],
            next_queue: 1,
        };
        update_qtable_vector(&mut v, &StepSizeSchedule::default(), &obs, g, &m).unwrap();
        let cost = per_stage_cost(g, 1, 0.5, &m) + per_stage_cost(g, 1, 0.0, &m);
        let got = v.get(&VectorPair { queue: 1, levels: vec![1, 0], assigned: vec![true, false] });
        assert!((got - cost).abs() < 1e-15);
    }
}
