use serde::{Deserialize, Serialize};

use crate::learner::stepsize::{stepsize, StepKind, StepSizeSchedule};
use crate::error::Result;

/// Power and drop-rate multipliers of one user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangePair {
    pub gamma_bar: f64,
    pub gamma_under: f64,
}

impl LagrangePair {
    pub fn new(gamma_bar: f64, gamma_under: f64) -> Self {
        Self { gamma_bar, gamma_under }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }
}

/// What one slot reveals about the constraints of one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintSample {
    /// Σ_n p_{k,n} in the slot.
    pub total_power: f64,
    /// Whether Q_k(t) = NQ.
    pub at_capacity: bool,
}

/// Projected subgradient step on both multipliers at slot `t` (t ≥ 1).
pub fn update_multipliers(
    gamma: LagrangePair,
    sample: ConstraintSample,
    power_budget: f64,
    drop_budget: f64,
    schedule: &StepSizeSchedule,
    t: u64,
    bound: f64,
) -> Result<LagrangePair> {
    let eps = stepsize(schedule, t, StepKind::Gamma)?;
    let eps_drop = stepsize(schedule, t, StepKind::GammaDrop)?;
    let eps_power = if schedule.relative_power_step { eps / (power_budget * power_budget) } else { eps };
    let drop = if sample.at_capacity { 1.0 } else { 0.0 };
    Ok(LagrangePair {
        gamma_bar: (gamma.gamma_bar + eps_power * (sample.total_power - power_budget)).clamp(0.0, bound),
        gamma_under: (gamma.gamma_under + eps_drop * (drop - drop_budget)).clamp(0.0, bound),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(c: f64) -> StepSizeSchedule {
        StepSizeSchedule {
            c_gamma: c,
            ..StepSizeSchedule::default()
        }
    }

    #[test]
    fn on_budget_power_leaves_gamma_bar() {
        let g = LagrangePair::new(0.7, 0.01);
        let s = ConstraintSample {
            total_power: 2.0,
            at_capacity: false,
        };
        let out = update_multipliers(g, s, 2.0, 0.05, &sched(1.0), 1, 50.0).unwrap();
        assert_eq!(out.gamma_bar, 0.7);
        assert_eq!(out.gamma_under, 0.0);
    }

    #[test]
    fn projection_holds_the_bound() {
        let g = LagrangePair::new(50.0, 50.0);
        let s = ConstraintSample {
            total_power: 10.0,
            at_capacity: true,
        };
        let out = update_multipliers(g, s, 1.0, 0.05, &sched(1.0), 1, 50.0).unwrap();
        assert_eq!(out, LagrangePair::new(50.0, 50.0));
    }

    #[test]
    fn step_times_excess() {
        let g = LagrangePair::new(1.0, 0.0);
        let s = ConstraintSample {
            total_power: 3.0,
            at_capacity: false,
        };
        let out = update_multipliers(g, s, 1.0, 0.05, &sched(0.1), 1, 50.0).unwrap();
        assert!((out.gamma_bar - 1.2).abs() < 1e-15);
    }
}
