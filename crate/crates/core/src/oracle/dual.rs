use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::LagrangePair;
use crate::model::SimConfig;
use crate::oracle::cmdp::{build_cmdp, EnumeratedCmdp, PowerGrid, Restriction};
use crate::oracle::rvi::{relative_value_iteration_with, OracleSolution, RviOptions};
use crate::oracle::stationary::{evaluate_policy, Policy, StationaryMetrics};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualOptions {
    /// c in the c/√m subgradient step; violations are measured relative
    /// to the budgets.
    pub step: f64,
    pub max_iters: usize,
    /// Relative tolerance on the power constraint.
    pub power_tol: f64,
    /// Absolute tolerance on the drop constraint.
    pub drop_tol: f64,
    /// Iterations at the bound with a persisting violation before the
    /// instance is declared infeasible.
    pub stall: usize,
    pub rvi: RviOptions,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            step: 1.0,
            max_iters: 200,
            power_tol: 1e-3,
            drop_tol: 1e-3,
            stall: 25,
            rvi: RviOptions::default(),
        }
    }
}

/// Result of dual ascent on a tiny instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub gamma_star: Vec<LagrangePair>,
    /// Deterministic optimal policy at `gamma_star`.
    pub solution: OracleSolution,
    pub metrics: StationaryMetrics,
    /// State-wise mixture of the two deterministic policies on either side
    /// of a breakpoint, when one constraint can only be met with equality
    /// by randomizing.
    pub randomized: Option<(Policy, StationaryMetrics)>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Constraint {
    Power(usize),
    Drop(usize),
}

struct Evaluator<'a> {
    cmdp: EnumeratedCmdp,
    opts: DualOptions,
    rates: Vec<f64>,
    budgets: Vec<(f64, f64)>,
    warm: Option<Vec<f64>>,
    _config: &'a SimConfig,
}

impl Evaluator<'_> {
    fn solve(&mut self, gamma: &[LagrangePair]) -> Result<(OracleSolution, StationaryMetrics)> {
        self.cmdp.set_gamma(gamma.to_vec());
        let sol = relative_value_iteration_with(&self.cmdp, self.opts.rvi, self.warm.as_deref())?;
        self.warm = Some(sol.vfunction.clone());
        let m = evaluate_policy(&self.cmdp, &Policy::deterministic(sol.policy.clone()), &self.rates)?;
        Ok((sol, m))
    }

    fn violation(&self, c: Constraint, m: &StationaryMetrics) -> f64 {
        match c {
            Constraint::Power(k) => (m.avg_power[k] - self.budgets[k].0) / self.budgets[k].0,
            Constraint::Drop(k) => m.drop_rate[k] - self.budgets[k].1,
        }
    }

    fn satisfied(&self, c: Constraint, gamma: &[LagrangePair], m: &StationaryMetrics) -> bool {
        let v = self.violation(c, m);
        let (tol, at_zero) = match c {
            Constraint::Power(k) => (self.opts.power_tol, gamma[k].gamma_bar == 0.0),
            Constraint::Drop(k) => (self.opts.drop_tol, gamma[k].gamma_under == 0.0),
        };
        v.abs() <= tol || (v < 0.0 && at_zero)
    }
}

fn get(gamma: &[LagrangePair], c: Constraint) -> f64 {
    match c {
        Constraint::Power(k) => gamma[k].gamma_bar,
        Constraint::Drop(k) => gamma[k].gamma_under,
    }
}

fn with(gamma: &[LagrangePair], c: Constraint, x: f64) -> Vec<LagrangePair> {
    let mut g = gamma.to_vec();
    match c {
        Constraint::Power(k) => g[k].gamma_bar = x,
        Constraint::Drop(k) => g[k].gamma_under = x,
    }
    g
}

/// Projected dual subgradient ascent with c/√m steps, followed by a
/// breakpoint search when a single constraint is left unmet.
pub fn dual_ascent(config: &SimConfig, grid: &PowerGrid, opts: DualOptions) -> Result<DualSolution> {
    let k_users = config.num_users();
    let bound = config.multiplier_bound;
    let init = config.initial_multipliers;
    let mut gamma = vec![LagrangePair::new(init.gamma_bar, init.gamma_under); k_users];
    let cmdp = build_cmdp(config, grid, &gamma, Restriction::None)?;
    let mut ev = Evaluator {
        cmdp,
        opts,
        rates: config.users.iter().map(|u| u.arrival_rate).collect(),
        budgets: (0..k_users)
            .map(|k| (config.power_budget(k), config.users[k].drop_budget))
            .collect(),
        warm: None,
        _config: config,
    };
    let constraints: Vec<Constraint> = (0..k_users)
        .flat_map(|k| [Constraint::Power(k), Constraint::Drop(k)])
        .collect();
    let mut stalled = vec![0usize; constraints.len()];
    let mut iterations = 0;
    let (mut sol, mut metrics) = ev.solve(&gamma)?;
    // the dual function is θ(γ); its last subgradient iterate can oscillate
    // between deterministic policies, so the best iterate is kept
    let mut best = (gamma.clone(), sol.clone(), metrics.clone());
    loop {
        if sol.theta > best.1.theta {
            best = (gamma.clone(), sol.clone(), metrics.clone());
        }
        let open: Vec<Constraint> = constraints
            .iter()
            .copied()
            .filter(|&c| !ev.satisfied(c, &gamma, &metrics))
            .collect();
        if open.is_empty() {
            return Ok(DualSolution {
                gamma_star: gamma,
                solution: sol,
                metrics,
                randomized: None,
                iterations,
                converged: true,
            });
        }
        if iterations >= opts.max_iters {
            if open.len() == 1 {
                return refine(&mut ev, gamma, open[0], bound, iterations);
            }
            let (gamma_star, solution, metrics) = best;
            return Ok(DualSolution {
                gamma_star,
                solution,
                metrics,
                randomized: None,
                iterations,
                converged: false,
            });
        }
        iterations += 1;
        let step = opts.step / (iterations as f64).sqrt();
        for (i, &c) in constraints.iter().enumerate() {
            let v = ev.violation(c, &metrics);
            let x = (get(&gamma, c) + step * v).clamp(0.0, bound);
            if x == bound && v > 0.0 && !ev.satisfied(c, &gamma, &metrics) {
                stalled[i] += 1;
                if stalled[i] >= opts.stall {
                    return Err(Error::Infeasible(format!(
                        "{c:?} still violated by {v:.4} with its multiplier at the bound {bound}"
                    )));
                }
            } else {
                stalled[i] = 0;
            }
            gamma = with(&gamma, c, x);
        }
        (sol, metrics) = ev.solve(&gamma)?;
    }
}

/// Bisection on one multiplier to its breakpoint, then on the mixing
/// weight between the two neighbouring deterministic policies.
fn refine(
    ev: &mut Evaluator<'_>,
    gamma: Vec<LagrangePair>,
    c: Constraint,
    bound: f64,
    iterations: usize,
) -> Result<DualSolution> {
    let x0 = get(&gamma, c);
    let (s0, m0) = ev.solve(&gamma)?;
    let v0 = ev.violation(c, &m0);
    // lo side violates (v > 0), hi side is slack (v < 0)
    let (mut lo, mut hi);
    let (mut lo_pol, mut hi_pol);
    if v0 > 0.0 {
        lo = (x0, s0, m0);
        let mut x = x0.max(1e-3);
        loop {
            x = (2.0 * x).min(bound);
            let (s, m) = ev.solve(&with(&gamma, c, x))?;
            if ev.violation(c, &m) <= 0.0 {
                hi = (x, s, m);
                break;
            }
            if x >= bound {
                return Err(Error::Infeasible(format!("{c:?} violated with its multiplier at the bound")));
            }
            lo = (x, s, m);
        }
    } else {
        hi = (x0, s0, m0);
        let mut x = x0;
        loop {
            x /= 2.0;
            if x < 1e-12 {
                x = 0.0;
            }
            let (s, m) = ev.solve(&with(&gamma, c, x))?;
            if ev.violation(c, &m) > 0.0 {
                lo = (x, s, m);
                break;
            }
            if x == 0.0 {
                // slack with the multiplier at zero
                let g = with(&gamma, c, 0.0);
                return Ok(DualSolution {
                    gamma_star: g,
                    solution: s,
                    metrics: m,
                    randomized: None,
                    iterations,
                    converged: true,
                });
            }
            hi = (x, s, m);
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo.0 + hi.0);
        if mid <= lo.0 || mid >= hi.0 {
            break;
        }
        let (s, m) = ev.solve(&with(&gamma, c, mid))?;
        if ev.violation(c, &m) > 0.0 {
            lo = (mid, s, m);
        } else {
            hi = (mid, s, m);
        }
    }
    lo_pol = lo.1.policy.clone();
    hi_pol = hi.1.policy.clone();
    let gamma_star = with(&gamma, c, hi.0);
    ev.cmdp.set_gamma(gamma_star.clone());
    if ev.satisfied(c, &gamma_star, &hi.2) {
        return Ok(DualSolution {
            gamma_star,
            solution: hi.1,
            metrics: hi.2,
            randomized: None,
            iterations,
            converged: true,
        });
    }
    // weight on the slack policy
    let (mut a_lo, mut a_hi) = (0.0, 1.0);
    let mut best = None;
    for _ in 0..60 {
        let a = 0.5 * (a_lo + a_hi);
        let pol = Policy::mixed(std::mem::take(&mut lo_pol), std::mem::take(&mut hi_pol), a);
        let m = evaluate_policy(&ev.cmdp, &pol, &ev.rates)?;
        let v = ev.violation(c, &m);
        lo_pol = pol.primary.clone();
        hi_pol = pol.alternate.clone().unwrap();
        if v > 0.0 {
            a_lo = a;
        } else {
            a_hi = a;
        }
        best = Some((pol, m));
        if v.abs() < 1e-12 {
            break;
        }
    }
    let (pol, m) = best.unwrap();
    let converged = ev.violation(c, &m).abs()
        <= match c {
            Constraint::Power(_) => ev.opts.power_tol,
            Constraint::Drop(_) => ev.opts.drop_tol,
        };
    Ok(DualSolution {
        gamma_star,
        solution: hi.1,
        metrics: hi.2,
        randomized: Some((pol, m)),
        iterations,
        converged,
    })
}
