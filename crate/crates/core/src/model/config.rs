use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::stepsize::StepSizeSchedule;
use crate::model::channel::ChannelModel;

/// Per-user traffic and constraint parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserParams {
    /// Mean packet arrival rate in packets per second.
    pub arrival_rate: f64,
    /// Mean packet size in bits.
    pub packet_bits: f64,
    /// Average transmit power budget in watts before SNR scaling.
    pub power_budget: f64,
    /// Target bound on Pr[Q = NQ].
    pub drop_budget: f64,
    /// Delay weight.
    pub delay_weight: f64,
}

/// Queue utility f(Q).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Utility {
    /// f(Q) = Q / (λτ): average delay in slots by Little's law.
    AverageDelay,
    /// f(Q) = 1[Q ≥ threshold].
    Outage { threshold: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueueMode {
    /// Queue counted in packets, at most one departure per slot.
    Packet,
    /// Queue counted in bits, drained by R·τ per slot.
    Bit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepartureModel {
    /// 1 − exp(−μτ).
    Exact,
    /// μτ clipped to [0, 1].
    Linear,
}

/// Continuation term of the reference offset in the Q-factor update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorMode {
    /// w̃ at the queue observed after the last reference visit.
    Sampled,
    /// E[w̃(min(A, NQ))], the exact conditional mean after the empty-queue
    /// reference state, with the stage cost at the current multipliers.
    #[default]
    Expected,
}

/// How exact bid ties are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    LowestIndex,
    Random,
}

/// Channel gain distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ChannelSpec {
    /// Equiprobable bins of a unit-power Rayleigh amplitude.
    Rayleigh { levels: usize },
    /// Explicit magnitudes |H| and their probabilities.
    Explicit { levels: Vec<f64>, pmf: Vec<f64> },
}

/// Initial Lagrange multipliers, shared by all users.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMultipliers {
    pub gamma_bar: f64,
    pub gamma_under: f64,
}

impl Default for InitialMultipliers {
    fn default() -> Self {
        Self {
            gamma_bar: 1.0,
            gamma_under: 0.0,
        }
    }
}

/// Full description of one simulated system. Fields missing from a
/// serialized config take their values from [`SimConfig::reference`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub users: Vec<UserParams>,
    /// NF.
    pub subbands: usize,
    /// NQ, in packets.
    pub buffer: usize,
    pub channel: ChannelSpec,
    /// τ in seconds.
    pub slot_duration: f64,
    /// Bandwidth of one independent subband in Hz.
    pub bandwidth_hz: f64,
    /// ξ.
    pub rate_constant: f64,
    pub snr_db: f64,
    pub utility: Utility,
    pub queue_mode: QueueMode,
    pub departure: DepartureModel,
    pub tie_break: TieBreak,
    /// B, the multiplier projection bound.
    pub multiplier_bound: f64,
    pub schedule: StepSizeSchedule,
    pub initial_multipliers: InitialMultipliers,
    /// Slots excluded from metrics at the start of an episode.
    pub warmup: u64,
    /// Initial per-subband Q-factors slope·Q on every non-reference pair.
    /// Zero gives the all-zero table.
    pub prior_slope: f64,
    pub exploration: Exploration,
    pub anchor: AnchorMode,
}

/// Probability ε_t = rate·(t+1)^(−decay) that a learning scheduler plays a
/// uniformly random assignment at power P_k/NF instead of the auction.
/// A zero rate disables exploration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exploration {
    pub rate: f64,
    pub decay: f64,
}

impl Exploration {
    pub fn probability(&self, slot: u64) -> f64 {
        if self.rate <= 0.0 {
            return 0.0;
        }
        (self.rate * ((slot + 1) as f64).powf(-self.decay)).min(1.0)
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl SimConfig {
    /// The two-user, four-subband reference system at 10 dB.
    pub fn reference() -> Self {
        let user = UserParams {
            arrival_rate: 20.0,
            packet_bits: 305.2 * 8.0 * 1000.0,
            power_budget: 1.0,
            drop_budget: 0.05,
            delay_weight: 1.0,
        };
        Self {
            users: vec![user.clone(), user],
            subbands: 4,
            buffer: 10,
            channel: ChannelSpec::Rayleigh { levels: 4 },
            slot_duration: 0.005,
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
            rate_constant: 1.0,
            snr_db: 10.0,
            utility: Utility::AverageDelay,
            queue_mode: QueueMode::Packet,
            departure: DepartureModel::Exact,
            tie_break: TieBreak::LowestIndex,
            multiplier_bound: 50.0,
            schedule: StepSizeSchedule {
                c_q: 1.0,
                alpha_q: 0.6,
                c_gamma: 30.0,
                alpha_gamma: 0.7,
                c_gamma_drop: Some(1.0),
                gamma_offset: 50_000.0,
                relative_power_step: true,
            },
            initial_multipliers: InitialMultipliers::default(),
            warmup: 10_000,
            prior_slope: 0.0,
            exploration: Exploration { rate: 0.02, decay: 0.0 },
            anchor: AnchorMode::default(),
        }
    }

    /// The reference system with `users` identical users carrying
    /// 78.125 Kbyte packets, the setting of the many-user experiments.
    pub fn reference_users(users: usize) -> Self {
        let mut c = Self::reference();
        let mut user = c.users[0].clone();
        user.packet_bits = 78.125 * 8.0 * 1000.0;
        c.users = vec![user; users];
        c
    }

    /// A small instance suitable for exhaustive solution: λτ = 0.3,
    /// linearized departures, Rayleigh levels, 10 dB. The drop budget is loose
    /// enough that only the power constraint binds.
    pub fn tiny(users: usize, subbands: usize, channel_levels: usize, buffer: usize) -> Self {
        let user = UserParams {
            arrival_rate: 60.0,
            packet_bits: 1.0e5,
            power_budget: 1.0,
            drop_budget: 0.3,
            delay_weight: 1.0,
        };
        Self {
            users: vec![user; users],
            subbands,
            buffer,
            channel: ChannelSpec::Rayleigh { levels: channel_levels },
            slot_duration: 0.005,
            bandwidth_hz: 4.0e6,
            rate_constant: 1.0,
            snr_db: 10.0,
            utility: Utility::AverageDelay,
            queue_mode: QueueMode::Packet,
            departure: DepartureModel::Linear,
            tie_break: TieBreak::LowestIndex,
            multiplier_bound: 50.0,
            schedule: StepSizeSchedule::default(),
            initial_multipliers: InitialMultipliers {
                gamma_bar: 0.1,
                gamma_under: 0.0,
            },
            warmup: 1_000,
            prior_slope: 0.0,
            exploration: Exploration { rate: 0.02, decay: 0.0 },
            anchor: AnchorMode::default(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        match &self.channel {
            ChannelSpec::Rayleigh { levels } => ChannelModel::rayleigh(*levels),
            ChannelSpec::Explicit { levels, pmf } => ChannelModel::new(levels.clone(), pmf.clone()),
        }
    }

    /// Average power budget after SNR scaling (unit noise variance).
    pub fn power_budget(&self, k: usize) -> f64 {
        self.users[k].power_budget * self.snr_linear()
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Mean arrivals per slot, λτ.
    pub fn arrival_mean(&self, k: usize) -> f64 {
        self.users[k].arrival_rate * self.slot_duration
    }

    /// κ = Wτ/N̄: expected departures per slot per nat of spectral efficiency.
    pub fn service_scale(&self, k: usize) -> f64 {
        self.bandwidth_hz * self.slot_duration / self.users[k].packet_bits
    }

    /// f(Q) for user k.
    pub fn utility_cost(&self, k: usize, q: usize) -> f64 {
        match self.utility {
            Utility::AverageDelay => {
                let rate = self.arrival_mean(k);
                if rate > 0.0 {
                    q as f64 / rate
                } else {
                    q as f64
                }
            }
            Utility::Outage { threshold } => {
                if q >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Buffer capacity in queue units: packets, or NQ·N̄ bits in bit mode.
    pub fn capacity_units(&self, k: usize) -> u64 {
        match self.queue_mode {
            QueueMode::Packet => self.buffer as u64,
            QueueMode::Bit => (self.buffer as f64 * self.users[k].packet_bits).round() as u64,
        }
    }

    /// Maps a queue held in configured units to the control level in [0, NQ].
    pub fn queue_level(&self, k: usize, units: u64) -> usize {
        match self.queue_mode {
            QueueMode::Packet => (units as usize).min(self.buffer),
            QueueMode::Bit => {
                let level = (units as f64 / self.users[k].packet_bits).ceil() as usize;
                level.min(self.buffer)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.users.is_empty() {
            return bad("users: at least one user is required".into());
        }
        if self.subbands == 0 {
            return bad("subbands: must be at least 1".into());
        }
        for (name, v) in [
            ("slot_duration", self.slot_duration),
            ("bandwidth_hz", self.bandwidth_hz),
            ("rate_constant", self.rate_constant),
            ("multiplier_bound", self.multiplier_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name}: must be positive and finite, got {v}"));
            }
        }
        if !(self.prior_slope.is_finite() && self.prior_slope >= 0.0) {
            return bad(format!("prior_slope: must be nonnegative, got {}", self.prior_slope));
        }
        let e = self.exploration;
        if !(e.rate.is_finite() && e.rate >= 0.0 && e.decay.is_finite() && e.decay >= 0.0) {
            return bad(format!("exploration: rate and decay must be nonnegative, got {} and {}", e.rate, e.decay));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db: must be finite".into());
        }
        for (k, u) in self.users.iter().enumerate() {
            if !(u.arrival_rate.is_finite() && u.arrival_rate >= 0.0) {
                return bad(format!("users[{k}].arrival_rate: must be nonnegative, got {}", u.arrival_rate));
            }
            if !(u.packet_bits.is_finite() && u.packet_bits > 0.0) {
                return bad(format!("users[{k}].packet_bits: must be positive, got {}", u.packet_bits));
            }
            if !(u.power_budget.is_finite() && u.power_budget > 0.0) {
                return bad(format!("users[{k}].power_budget: must be positive, got {}", u.power_budget));
            }
            if !(u.drop_budget > 0.0 && u.drop_budget <= 1.0) {
                return bad(format!("users[{k}].drop_budget: must lie in (0, 1], got {}", u.drop_budget));
            }
            if !(u.delay_weight.is_finite() && u.delay_weight > 0.0) {
                return bad(format!("users[{k}].delay_weight: must be positive, got {}", u.delay_weight));
            }
        }
        if let Utility::Outage { threshold } = self.utility {
            if threshold > self.buffer {
                return bad(format!("utility.threshold: {threshold} exceeds buffer {}", self.buffer));
            }
        }
        let g = self.initial_multipliers;
        for (name, v) in [("gamma_bar", g.gamma_bar), ("gamma_under", g.gamma_under)] {
            if !(v >= 0.0 && v <= self.multiplier_bound) {
                return bad(format!(
                    "initial_multipliers.{name}: must lie in [0, {}], got {v}",
                    self.multiplier_bound
                ));
            }
        }
        self.schedule.validate()?;
        self.channel_model().map_err(|e| Error::Config(format!("channel: {e}")))?;
        Ok(())
    }
}

/// Per-subband bandwidth at which the reference system is loaded enough
/// at 10 dB for the 5% drop budget to bind.
pub const DEFAULT_BANDWIDTH_HZ: f64 = 14.5e6;
