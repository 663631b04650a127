use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomially decaying step sizes for the two timescales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSizeSchedule {
    pub c_q: f64,
    pub alpha_q: f64,
    pub c_gamma: f64,
    pub alpha_gamma: f64,
    /// Constant for the drop multiplier; `c_gamma` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_gamma_drop: Option<f64>,
    /// Shift m0 in c / (m + m0)^α for both multiplier steps.
    #[serde(default)]
    pub gamma_offset: f64,
    /// Divide the power-multiplier step by P_k², so that γ̄·P_k moves by
    /// c_gamma times the relative power error and the dynamics do not
    /// depend on the SNR scaling.
    #[serde(default)]
    pub relative_power_step: bool,
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        Self {
            c_q: 1.0,
            alpha_q: 0.6,
            c_gamma: 0.2,
            alpha_gamma: 0.9,
            c_gamma_drop: None,
            gamma_offset: 0.0,
            relative_power_step: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Q-factor step, indexed by the pair's visit count.
    Q,
    /// Multiplier step, indexed by the slot count.
    Gamma,
    /// Drop multiplier step, indexed by the slot count.
    GammaDrop,
}

impl StepSizeSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_q > 0.0 && self.c_q.is_finite() && self.c_gamma > 0.0 && self.c_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "schedule: c_q and c_gamma must be positive, got {} and {}",
                self.c_q, self.c_gamma
            )));
        }
        if let Some(c) = self.c_gamma_drop {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("schedule: c_gamma_drop must be positive, got {c}")));
            }
        }
        if !(self.gamma_offset >= 0.0 && self.gamma_offset.is_finite()) {
            return Err(Error::Config(format!(
                "schedule: gamma_offset must be nonnegative, got {}",
                self.gamma_offset
            )));
        }
        if !(0.5 < self.alpha_q && self.alpha_q < self.alpha_gamma && self.alpha_gamma <= 1.0) {
            return Err(Error::Config(format!(
                "schedule: need 0.5 < alpha_q < alpha_gamma <= 1, got alpha_q = {}, alpha_gamma = {}",
                self.alpha_q, self.alpha_gamma
            )));
        }
        Ok(())
    }

    pub fn step(&self, m: u64, kind: StepKind) -> Result<f64> {
        stepsize(self, m, kind)
    }
}

/// ε_m = c / (m + m0)^α for the selected timescale.
pub fn stepsize(schedule: &StepSizeSchedule, m: u64, kind: StepKind) -> Result<f64> {
    if m == 0 {
        return Err(Error::OutOfRange {
            what: "step index",
            value: "0".into(),
            allowed: ">= 1".into(),
        });
    }
    let (c, a, m0) = match kind {
        StepKind::Q => (schedule.c_q, schedule.alpha_q, 0.0),
        StepKind::Gamma => (schedule.c_gamma, schedule.alpha_gamma, schedule.gamma_offset),
        StepKind::GammaDrop => (
            schedule.c_gamma_drop.unwrap_or(schedule.c_gamma),
            schedule.alpha_gamma,
            schedule.gamma_offset,
        ),
    };
    Ok(c / (m as f64 + m0).powf(a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_the_constant() {
        let s = StepSizeSchedule::default();
        assert_eq!(stepsize(&s, 1, StepKind::Q).unwrap(), 1.0);
        assert_eq!(stepsize(&s, 1, StepKind::Gamma).unwrap(), 0.2);
        assert!(stepsize(&s, 0, StepKind::Q).is_err());
    }

    #[test]
    fn ratio_decays_like_m_to_minus_point_three() {
        let s = StepSizeSchedule::default();
        for m in [10u64, 1000, 100_000] {
            let r = stepsize(&s, m, StepKind::Gamma).unwrap() / stepsize(&s, m, StepKind::Q).unwrap();
            let expect = 0.2 * (m as f64).powf(-0.3);
            assert!((r - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn exponent_conditions() {
        let mut s = StepSizeSchedule::default();
        s.alpha_q = 0.4;
        assert!(s.validate().is_err());
        s.alpha_q = 0.95;
        assert!(s.validate().is_err());
        s.alpha_q = 0.6;
        s.alpha_gamma = 1.2;
        assert!(s.validate().is_err());
        s.alpha_gamma = 1.0;
        assert!(s.validate().is_ok());
    }
}
