use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::channel::{ChannelMatrix, ChannelModel, UserBand};
use crate::model::config::{DepartureModel, QueueMode, SimConfig};

/// Joint channel and queue state for one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub channel: ChannelMatrix,
    /// Queue occupancy in configured units (packets or bits).
    pub queues: Vec<u64>,
}

/// Subband assignment and power for one slot.
///
/// The assignment is stored per subband, so at most one user holds each
/// column by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub winners: Vec<Option<usize>>,
    pub power: UserBand<f64>,
}

impl AllocationDecision {
    pub fn idle(users: usize, subbands: usize) -> Self {
        Self {
            winners: vec![None; subbands],
            power: UserBand::filled(users, subbands, 0.0),
        }
    }

    pub fn users(&self) -> usize {
        self.power.users()
    }

    pub fn subbands(&self) -> usize {
        self.winners.len()
    }

    /// s_{k,n}.
    pub fn assigned(&self, k: usize, n: usize) -> bool {
        self.winners[n] == Some(k)
    }

    pub fn total_power(&self, k: usize) -> f64 {
        self.power.row(k).iter().sum()
    }

    pub fn idle_subbands(&self) -> usize {
        self.winners.iter().filter(|w| w.is_none()).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.power.subbands() != self.winners.len() {
            return Err(Error::Observation("assignment and power shapes differ".into()));
        }
        for k in 0..self.users() {
            for n in 0..self.subbands() {
                let p = self.power[(k, n)];
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::Observation(format!("power[{k}][{n}] = {p}")));
                }
                if p > 0.0 && !self.assigned(k, n) {
                    return Err(Error::Observation(format!(
                        "user {k} transmits on subband {n} without holding it"
                    )));
                }
            }
        }
        if let Some(k) = self.winners.iter().flatten().find(|&&k| k >= self.users()) {
            return Err(Error::Observation(format!("winner {k} is not a user")));
        }
        Ok(())
    }
}

/// The stream used for slot `slot` of a run seeded with `seed`.
pub fn slot_rng(seed: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot);
    rng
}

/// Per-user spectral efficiency Σ_n s·log(1 + ξ p |H|²) in nats.
pub fn spectral_efficiency(
    decision: &AllocationDecision,
    channel: &ChannelMatrix,
    model: &ChannelModel,
    xi: f64,
) -> Vec<f64> {
    (0..decision.users())
        .map(|k| {
            (0..decision.subbands())
                .filter(|&n| decision.assigned(k, n))
                .map(|n| (xi * decision.power[(k, n)] * model.gain(channel[(k, n)])).ln_1p())
                .sum()
        })
        .collect()
}

/// Per-user rate in bits per second with `bandwidth_hz` per subband.
pub fn compute_rates(
    decision: &AllocationDecision,
    channel: &ChannelMatrix,
    model: &ChannelModel,
    xi: f64,
    bandwidth_hz: f64,
) -> Vec<f64> {
    spectral_efficiency(decision, channel, model, xi)
        .into_iter()
        .map(|e| bandwidth_hz * e)
        .collect()
}

/// Probability that the head-of-line packet finishes within the slot.
pub fn departure_probability(rate: f64, packet_bits: f64, tau: f64, mode: DepartureModel) -> f64 {
    let mu_tau = rate / packet_bits * tau;
    match mode {
        DepartureModel::Exact => -(-mu_tau).exp_m1(),
        DepartureModel::Linear => mu_tau.clamp(0.0, 1.0),
    }
}

/// Poisson(λτ) arrivals for every user.
pub fn sample_arrivals<R: Rng + ?Sized>(means: &[f64], rng: &mut R) -> Vec<u64> {
    means.iter().map(|&m| sample_poisson(m, rng)).collect()
}

pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Total size in bits of `packets` exponentially distributed packets.
pub fn sample_packet_bits<R: Rng + ?Sized>(packets: u64, mean_bits: f64, rng: &mut R) -> u64 {
    if packets == 0 {
        return 0;
    }
    let g = Gamma::new(packets as f64, mean_bits).expect("positive shape and scale");
    g.sample(rng).round() as u64
}

/// Result of advancing every queue by one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueStep {
    pub next: Vec<u64>,
    /// Units discarded because the buffer was full.
    pub dropped: Vec<u64>,
    /// Units removed by transmission.
    pub departed: Vec<u64>,
}

/// Advances all queues by one slot.
///
/// `arrivals` are in queue units. In packet mode one Bernoulli departure
/// is drawn per nonempty queue, in user order.
pub fn step_queues<R: Rng + ?Sized>(
    config: &SimConfig,
    queues: &[u64],
    spectral: &[f64],
    arrivals: &[u64],
    rng: &mut R,
) -> QueueStep {
    let k_users = queues.len();
    let mut next = Vec::with_capacity(k_users);
    let mut dropped = Vec::with_capacity(k_users);
    let mut departed = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let cap = config.capacity_units(k);
        let q = queues[k].min(cap);
        let out = match config.queue_mode {
            QueueMode::Packet => {
                if q == 0 {
                    0
                } else {
                    let rate = config.bandwidth_hz * spectral[k];
                    let pd = departure_probability(
                        rate,
                        config.users[k].packet_bits,
                        config.slot_duration,
                        config.departure,
                    );
                    u64::from(rng.random::<f64>() < pd)
                }
            }
            QueueMode::Bit => {
                let bits = config.bandwidth_hz * spectral[k] * config.slot_duration;
                (bits.floor() as u64).min(q)
            }
        };
        let total = q - out + arrivals[k];
        next.push(total.min(cap));
        dropped.push(total.saturating_sub(cap));
        departed.push(out);
    }
    QueueStep { next, dropped, departed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet_config(buffer: usize) -> SimConfig {
        let mut c = SimConfig::reference();
        c.users.truncate(1);
        c.buffer = buffer;
        c
    }

    #[test]
    fn departure_forms() {
        assert_eq!(departure_probability(0.0, 1.0, 1.0, DepartureModel::Exact), 0.0);
        let p = departure_probability(0.1, 1.0, 1.0, DepartureModel::Exact);
        assert!((p - 0.095_162_581_964_040_43).abs() < 1e-15);
        assert_eq!(departure_probability(0.1, 1.0, 1.0, DepartureModel::Linear), 0.1);
        assert_eq!(departure_probability(5.0, 1.0, 1.0, DepartureModel::Linear), 1.0);
    }

    #[test]
    fn queue_recursion_with_certain_departure() {
        let mut c = packet_config(10);
        c.departure = DepartureModel::Linear;
        // spectral efficiency large enough that μτ ≥ 1
        let spectral = [1e9];
        let mut rng = slot_rng(0, 0);
        let s = step_queues(&c, &[5], &spectral, &[2], &mut rng);
        assert_eq!(s.next, vec![6]);
        assert_eq!(s.departed, vec![1]);
    }

    #[test]
    fn empty_queue_never_departs() {
        let mut c = packet_config(10);
        c.departure = DepartureModel::Linear;
        let mut rng = slot_rng(0, 0);
        let s = step_queues(&c, &[0], &[1e9], &[12], &mut rng);
        assert_eq!(s.next, vec![10]);
        assert_eq!(s.departed, vec![0]);
        assert_eq!(s.dropped, vec![2]);
    }

    #[test]
    fn full_buffer_drops_all_arrivals_without_departure() {
        let c = packet_config(10);
        let mut rng = slot_rng(0, 0);
        let s = step_queues(&c, &[10], &[0.0], &[3], &mut rng);
        assert_eq!(s.next, vec![10]);
        assert_eq!(s.dropped, vec![3]);
    }

    #[test]
    fn bit_mode_drains_rate_times_tau() {
        let mut c = packet_config(10);
        c.queue_mode = QueueMode::Bit;
        c.bandwidth_hz = 1000.0;
        c.slot_duration = 1.0;
        let mut rng = slot_rng(0, 0);
        let s = step_queues(&c, &[5000], &[2.0], &[100], &mut rng);
        assert_eq!(s.departed, vec![2000]);
        assert_eq!(s.next, vec![3100]);
    }

    #[test]
    fn rates_scale_with_bandwidth() {
        let model = ChannelModel::new(vec![(std::f64::consts::E - 1.0).sqrt()], vec![1.0]).unwrap();
        let h = UserBand::filled(1, 2, 0usize);
        let mut d = AllocationDecision::idle(1, 2);
        d.winners[0] = Some(0);
        d.power[(0, 0)] = 1.0;
        let r = compute_rates(&d, &h, &model, 1.0, 1.0);
        assert!((r[0] - 1.0).abs() < 1e-12);
        let r = compute_rates(&d, &h, &model, 1.0, 3.0);
        assert!((r[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn validate_catches_power_on_foreign_subband() {
        let mut d = AllocationDecision::idle(2, 1);
        d.winners[0] = Some(0);
        d.power[(1, 0)] = 0.5;
        assert!(d.validate().is_err());
        d.power[(1, 0)] = 0.0;
        d.power[(0, 0)] = 0.5;
        assert!(d.validate().is_ok());
    }
}
