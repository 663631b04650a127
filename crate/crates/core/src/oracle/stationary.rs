use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::cmdp::EnumeratedCmdp;

/// A stationary policy: one action per state, optionally mixed state-wise
/// with a second deterministic policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub primary: Vec<usize>,
    pub alternate: Option<Vec<usize>>,
    /// Probability of playing `alternate` in every state.
    pub weight: f64,
}

impl Policy {
    pub fn deterministic(actions: Vec<usize>) -> Self {
        Self {
            primary: actions,
            alternate: None,
            weight: 0.0,
        }
    }

    pub fn mixed(primary: Vec<usize>, alternate: Vec<usize>, weight: f64) -> Self {
        Self {
            primary,
            alternate: Some(alternate),
            weight,
        }
    }

    fn branches(&self) -> Vec<(&[usize], f64)> {
        match &self.alternate {
            Some(alt) if self.weight > 0.0 => {
                let mut v = vec![(alt.as_slice(), self.weight)];
                if self.weight < 1.0 {
                    v.push((self.primary.as_slice(), 1.0 - self.weight));
                }
                v
            }
            _ => vec![(self.primary.as_slice(), 1.0)],
        }
    }
}

/// Long-run averages under the stationary distribution of a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryMetrics {
    /// E[Q_k] in packets.
    pub avg_queue: Vec<f64>,
    /// E[Q_k]/λ_k in seconds.
    pub avg_delay_s: Vec<f64>,
    /// E[f(Q_k)].
    pub avg_utility: Vec<f64>,
    /// E[Σ_n p_{k,n}].
    pub avg_power: Vec<f64>,
    /// Pr[Q_k = NQ].
    pub drop_rate: Vec<f64>,
    /// Stationary distribution of the joint queue state.
    pub queue_distribution: Vec<f64>,
}

impl EnumeratedCmdp {
    /// Position of global action `a` in the admissible list of state `s`.
    pub fn position(&self, s: usize, a: usize) -> Option<usize> {
        self.admissible[s].binary_search(&(a as u32)).ok()
    }
}

/// Number of closed communicating classes of a chain given by its
/// adjacency (row i lists successors of i).
fn closed_classes(succ: &[Vec<usize>]) -> usize {
    let n = succ.len();
    // reachability by DFS from every node; fine at oracle sizes
    let mut reach = vec![vec![false; n]; n];
    for s in 0..n {
        let mut stack = vec![s];
        reach[s][s] = true;
        while let Some(i) = stack.pop() {
            for &j in &succ[i] {
                if !reach[s][j] {
                    reach[s][j] = true;
                    stack.push(j);
                }
            }
        }
    }
    // a state is recurrent iff everything it reaches reaches it back
    let recurrent: Vec<bool> = (0..n).map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i])).collect();
    let mut seen = vec![false; n];
    let mut classes = 0;
    for i in 0..n {
        if recurrent[i] && !seen[i] {
            classes += 1;
            for j in 0..n {
                if reach[i][j] {
                    seen[j] = true;
                }
            }
        }
    }
    classes
}

/// Queue-level transition matrix induced by a policy, channel averaged.
pub fn queue_chain(cmdp: &EnumeratedCmdp, policy: &Policy) -> Result<Vec<f64>> {
    let iq = cmdp.num_queue_states();
    let n = cmdp.num_states();
    if policy.primary.len() != n || policy.alternate.as_ref().is_some_and(|a| a.len() != n) {
        return Err(Error::Config(format!("policy must have one action per state ({n})")));
    }
    let mut p = vec![0.0; iq * iq];
    for (actions, w) in policy.branches() {
        for s in 0..n {
            let (h, q) = cmdp.split_state(s);
            let j = cmdp
                .position(s, actions[s])
                .ok_or_else(|| Error::Config(format!("action {} is not admissible in state {s}", actions[s])))?;
            let d = cmdp.departures(s, j);
            let ql = cmdp.queue_levels(q);
            let marg: Vec<Vec<f64>> = (0..cmdp.users).map(|k| cmdp.user_transition(k, ql[k], d[k])).collect();
            let scale = w * cmdp.channel_prob(h);
            for qn in 0..iq {
                let lv = cmdp.queue_levels(qn);
                let pr: f64 = (0..cmdp.users).map(|k| marg[k][lv[k]]).product();
                p[q * iq + qn] += scale * pr;
            }
        }
    }
    Ok(p)
}

/// Solves πP = π on the induced queue chain and returns long-run metrics.
pub fn evaluate_policy(cmdp: &EnumeratedCmdp, policy: &Policy, arrival_rates: &[f64]) -> Result<StationaryMetrics> {
    let iq = cmdp.num_queue_states();
    let p = queue_chain(cmdp, policy)?;
    let succ: Vec<Vec<usize>> = (0..iq)
        .map(|i| (0..iq).filter(|&j| p[i * iq + j] > 0.0).collect())
        .collect();
    let classes = closed_classes(&succ);
    if classes != 1 {
        return Err(Error::Reducible(classes));
    }
    // (Pᵀ − I)π = 0 with the last equation replaced by Σπ = 1
    let mut a = DMatrix::<f64>::zeros(iq, iq);
    for i in 0..iq {
        for j in 0..iq {
            a[(j, i)] = p[i * iq + j];
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..iq {
        a[(iq - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(iq);
    b[iq - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or(Error::Reducible(classes))?;
    let pi: Vec<f64> = pi.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    let pi: Vec<f64> = pi.iter().map(|x| x / total).collect();

    let k_users = cmdp.users;
    let mut m = StationaryMetrics {
        avg_queue: vec![0.0; k_users],
        avg_delay_s: vec![0.0; k_users],
        avg_utility: vec![0.0; k_users],
        avg_power: vec![0.0; k_users],
        drop_rate: vec![0.0; k_users],
        queue_distribution: pi.clone(),
    };
    for q in 0..iq {
        let ql = cmdp.queue_levels(q);
        for k in 0..k_users {
            m.avg_queue[k] += pi[q] * ql[k] as f64;
            m.avg_utility[k] += pi[q] * cmdp.utility[k][ql[k]];
            if ql[k] == cmdp.buffer {
                m.drop_rate[k] += pi[q];
            }
        }
    }
    for (actions, w) in policy.branches() {
        for s in 0..cmdp.num_states() {
            let (h, q) = cmdp.split_state(s);
            let mass = w * pi[q] * cmdp.channel_prob(h);
            for k in 0..k_users {
                m.avg_power[k] += mass * cmdp.action_power(actions[s], k);
            }
        }
    }
    for k in 0..k_users {
        m.avg_delay_s[k] = if arrival_rates[k] > 0.0 {
            m.avg_queue[k] / arrival_rates[k]
        } else {
            0.0
        };
    }
    Ok(m)
}
