use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::LagrangePair;
use crate::oracle::cmdp::EnumeratedCmdp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RviOptions {
    /// Stop once the span of V_{m+1} − V_m falls to this value.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for RviOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_sweeps: 100_000,
        }
    }
}

/// Solution of the centralized Bellman equation at fixed multipliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub theta: f64,
    /// V(χ) = min_s Q(χ, s).
    pub vfunction: Vec<f64>,
    /// Q(χ, s), row-major with one column per assignment code; +∞ where the
    /// assignment is not admissible.
    pub qfactor: Vec<f64>,
    pub assignments: usize,
    /// Index into the action list per state.
    pub policy: Vec<usize>,
    pub gamma: Vec<LagrangePair>,
    pub sweeps: usize,
    pub span: f64,
    /// States reachable from the reference under some policy. Values of the
    /// others are relative to a different average cost and carry no meaning.
    pub reachable: Vec<bool>,
}

impl OracleSolution {
    pub fn q(&self, state: usize, assignment: usize) -> f64 {
        self.qfactor[state * self.assignments + assignment]
    }

    /// max − min over all finite Q-factors.
    pub fn q_range(&self) -> f64 {
        let finite = self.qfactor.iter().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }
}

/// Scratch-free evaluator for one Bellman backup.
pub(crate) struct Backup<'a> {
    cmdp: &'a EnumeratedCmdp,
    base: Vec<f64>,
    action_cost: Vec<f64>,
    levels: Vec<Vec<usize>>,
    marg: Vec<f64>,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
}

impl<'a> Backup<'a> {
    pub(crate) fn new(cmdp: &'a EnumeratedCmdp) -> Self {
        let iq = cmdp.num_queue_states();
        let k_users = cmdp.users;
        let levels: Vec<Vec<usize>> = (0..iq).map(|q| cmdp.queue_levels(q)).collect();
        let base = levels
            .iter()
            .map(|ql| {
                (0..k_users)
                    .map(|k| {
                        let g = cmdp.gamma[k];
                        let full = if ql[k] == cmdp.buffer { 1.0 } else { 0.0 };
                        cmdp.utility[k][ql[k]] - g.gamma_bar * cmdp.power_budget[k]
                            + g.gamma_under * (full - cmdp.drop_budget[k])
                    })
                    .sum()
            })
            .collect();
        let action_cost = (0..cmdp.actions.len())
            .map(|a| (0..k_users).map(|k| cmdp.gamma[k].gamma_bar * cmdp.action_power(a, k)).sum())
            .collect();
        Self {
            cmdp,
            base,
            action_cost,
            levels,
            marg: vec![0.0; k_users * (cmdp.buffer + 1)],
            buf_a: vec![0.0; iq],
            buf_b: vec![0.0; iq],
        }
    }

    /// g(χ, a) + E[Ṽ(Q')] for the `j`-th admissible action of state `s`,
    /// where `vt` is V averaged over the next channel.
    pub(crate) fn value(&mut self, s: usize, j: usize, vt: &[f64]) -> f64 {
        let cmdp = self.cmdp;
        let (_, q) = cmdp.split_state(s);
        let a = cmdp.admissible[s][j] as usize;
        let cost = self.base[q] + self.action_cost[a];
        let w = cmdp.buffer + 1;
        let d = cmdp.departures(s, j);
        let ql = &self.levels[q];
        for k in 0..cmdp.users {
            let row = ql[k] * w;
            let (st, lv) = (&cmdp.stay[k][row..row + w], &cmdp.leave[k][row..row + w]);
            let m = &mut self.marg[k * w..(k + 1) * w];
            for i in 0..w {
                m[i] = (1.0 - d[k]) * st[i] + d[k] * lv[i];
            }
        }
        let mut len = vt.len();
        self.buf_a[..len].copy_from_slice(vt);
        for k in 0..cmdp.users {
            let m = &self.marg[k * w..(k + 1) * w];
            let outer = len / w;
            for o in 0..outer {
                let block = &self.buf_a[o * w..(o + 1) * w];
                self.buf_b[o] = m.iter().zip(block).map(|(p, x)| p * x).sum();
            }
            std::mem::swap(&mut self.buf_a, &mut self.buf_b);
            len = outer;
        }
        cost + self.buf_a[0]
    }
}

/// Ṽ(Q) = Σ_H Pr[H] V(H, Q).
pub fn channel_average(cmdp: &EnumeratedCmdp, v: &[f64]) -> Vec<f64> {
    let iq = cmdp.num_queue_states();
    let mut vt = vec![0.0; iq];
    for h in 0..cmdp.num_channel_states() {
        let p = cmdp.h_prob[h];
        for q in 0..iq {
            vt[q] += p * v[h * iq + q];
        }
    }
    vt
}

pub fn relative_value_iteration(cmdp: &EnumeratedCmdp) -> Result<OracleSolution> {
    relative_value_iteration_with(cmdp, RviOptions::default(), None)
}

/// Relative value iteration anchored at χ = (H all lowest, Q all empty),
/// optionally warm-started.
pub fn relative_value_iteration_with(
    cmdp: &EnumeratedCmdp,
    opts: RviOptions,
    init: Option<&[f64]>,
) -> Result<OracleSolution> {
    let n = cmdp.num_states();
    let mut v = init.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut backup = Backup::new(cmdp);
    let mut tv = vec![0.0; n];
    let reachable = reachable_states(cmdp);
    let mut span = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let vt = channel_average(cmdp, &v);
        for (s, slot) in tv.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for j in 0..cmdp.admissible[s].len() {
                best = best.min(backup.value(s, j, &vt));
            }
            *slot = best;
        }
        let theta = tv[0];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((x, t), &r) in v.iter_mut().zip(&tv).zip(&reachable) {
            if r {
                let d = t - *x;
                lo = lo.min(d);
                hi = hi.max(d);
            }
            *x = t - theta;
        }
        span = hi - lo;
        if span <= opts.tol {
            break;
        }
    }
    if span > opts.tol {
        return Err(Error::NotConverged { sweeps, span });
    }
    Ok(assemble(cmdp, &mut backup, &v, sweeps, span, reachable))
}

/// States reachable from the reference state under the union of all
/// admissible actions.
pub fn reachable_states(cmdp: &EnumeratedCmdp) -> Vec<bool> {
    let iq = cmdp.num_queue_states();
    let mut succ = vec![vec![false; iq]; iq];
    for s in 0..cmdp.num_states() {
        let (_, q) = cmdp.split_state(s);
        for j in 0..cmdp.admissible[s].len() {
            let row = cmdp.kernel_row(s, j);
            for (t, p) in row.iter().enumerate() {
                if *p > 0.0 {
                    succ[q][t % iq] = true;
                }
            }
        }
    }
    let mut seen = vec![false; iq];
    seen[0] = true;
    let mut stack = vec![0usize];
    while let Some(q) = stack.pop() {
        for t in 0..iq {
            if succ[q][t] && !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    (0..cmdp.num_states()).map(|s| seen[cmdp.split_state(s).1]).collect()
}

fn assemble(
    cmdp: &EnumeratedCmdp,
    backup: &mut Backup<'_>,
    v: &[f64],
    sweeps: usize,
    span: f64,
    reachable: Vec<bool>,
) -> OracleSolution {
    let n = cmdp.num_states();
    let na = cmdp.num_assignments();
    let vt = channel_average(cmdp, v);
    let mut raw = vec![f64::INFINITY; n * na];
    let mut policy = vec![0usize; n];
    let mut best_vals = vec![f64::INFINITY; n];
    for s in 0..n {
        for (j, &a) in cmdp.admissible[s].iter().enumerate() {
            let val = backup.value(s, j, &vt);
            let code = cmdp.assignment_code(a as usize);
            let slot = &mut raw[s * na + code];
            if val < *slot {
                *slot = val;
            }
            if val < best_vals[s] {
                best_vals[s] = val;
                policy[s] = a as usize;
            }
        }
    }
    let theta = best_vals[0];
    let qfactor: Vec<f64> = raw.iter().map(|x| x - theta).collect();
    let vfunction = (0..n)
        .map(|s| qfactor[s * na..(s + 1) * na].iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    OracleSolution {
        theta,
        vfunction,
        qfactor,
        assignments: na,
        policy,
        gamma: cmdp.gamma.clone(),
        sweeps,
        span,
        reachable,
    }
}

/// Span seminorm of T V − θ − V for a candidate solution.
pub fn bellman_span_residual(cmdp: &EnumeratedCmdp, sol: &OracleSolution) -> f64 {
    let mut backup = Backup::new(cmdp);
    let vt = channel_average(cmdp, &sol.vfunction);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in (0..cmdp.num_states()).filter(|&s| sol.reachable[s]) {
        let mut best = f64::INFINITY;
        for j in 0..cmdp.admissible[s].len() {
            best = best.min(backup.value(s, j, &vt));
        }
        let r = best - sol.theta - sol.vfunction[s];
        lo = lo.min(r);
        hi = hi.max(r);
    }
    hi - lo
}

/// Greedy action per state for an arbitrary value function.
pub fn greedy_policy(cmdp: &EnumeratedCmdp, v: &[f64]) -> Vec<usize> {
    let mut backup = Backup::new(cmdp);
    let vt = channel_average(cmdp, v);
    (0..cmdp.num_states())
        .map(|s| {
            let mut best = (f64::INFINITY, 0usize);
            for (j, &a) in cmdp.admissible[s].iter().enumerate() {
                let val = backup.value(s, j, &vt);
                if val < best.0 {
                    best = (val, a as usize);
                }
            }
            best.1
        })
        .collect()
}
