use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete distribution of the channel magnitude |H| on one subband.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    levels: Vec<f64>,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl ChannelModel {
    pub fn new(levels: Vec<f64>, pmf: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.len() != pmf.len() {
            return Err(Error::Config(format!(
                "{} levels but {} probabilities",
                levels.len(),
                pmf.len()
            )));
        }
        if levels.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Config("channel levels must be positive".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("channel levels must be strictly increasing".into()));
        }
        if pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("channel pmf entries must be nonnegative".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("channel pmf sums to {total}, not 1")));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { levels, pmf, cdf })
    }

    /// `n` equiprobable bins of a Rayleigh amplitude with E|H|² = 1, each
    /// represented by its conditional mean amplitude.
    pub fn rayleigh(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("channel levels: need at least one bin".into()));
        }
        // Bin edges r_i satisfy 1 − exp(−r_i²) = i/n.
        let edge = |i: usize| -> f64 {
            if i == n {
                f64::INFINITY
            } else {
                (-(1.0 - i as f64 / n as f64).ln()).sqrt()
            }
        };
        // ∫_0^r 2x² e^{−x²} dx = −r e^{−r²} + (√π/2) erf(r)
        let partial = |r: f64| -> f64 {
            if r.is_infinite() {
                std::f64::consts::PI.sqrt() / 2.0
            } else {
                -r * (-r * r).exp() + std::f64::consts::PI.sqrt() / 2.0 * statrs::function::erf::erf(r)
            }
        };
        let levels = (0..n)
            .map(|i| (partial(edge(i + 1)) - partial(edge(i))) * n as f64)
            .collect();
        Self::new(levels, vec![1.0 / n as f64; n])
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// |H| for level index `h`.
    pub fn magnitude(&self, h: usize) -> f64 {
        self.levels[h]
    }

    /// |H|² for level index `h`.
    pub fn gain(&self, h: usize) -> f64 {
        self.levels[h] * self.levels[h]
    }

    /// Pr[|H| ≤ level h].
    pub fn cdf(&self, h: usize) -> f64 {
        self.cdf[h]
    }

    /// Pr[|H| < level h].
    pub fn cdf_below(&self, h: usize) -> f64 {
        if h == 0 {
            0.0
        } else {
            self.cdf[h - 1]
        }
    }

    /// Probability that level `h` is at least the largest of `others`
    /// independent draws.
    pub fn win_probability(&self, h: usize, others: usize) -> f64 {
        self.cdf(h).powi(others as i32)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.levels.len() - 1)
    }
}

/// Row-major users × subbands matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserBand<T> {
    users: usize,
    subbands: usize,
    data: Vec<T>,
}

impl<T: Clone> UserBand<T> {
    pub fn filled(users: usize, subbands: usize, value: T) -> Self {
        Self {
            users,
            subbands,
            data: vec![value; users * subbands],
        }
    }
}

impl<T> UserBand<T> {
    pub fn from_fn(users: usize, subbands: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(users * subbands);
        for k in 0..users {
            for n in 0..subbands {
                data.push(f(k, n));
            }
        }
        Self { users, subbands, data }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn subbands(&self) -> usize {
        self.subbands
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.subbands..(k + 1) * self.subbands]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.data[k * self.subbands..(k + 1) * self.subbands]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }
}

impl<T> std::ops::Index<(usize, usize)> for UserBand<T> {
    type Output = T;
    fn index(&self, (k, n): (usize, usize)) -> &T {
        &self.data[k * self.subbands + n]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for UserBand<T> {
    fn index_mut(&mut self, (k, n): (usize, usize)) -> &mut T {
        &mut self.data[k * self.subbands + n]
    }
}

/// Channel-level indices for every user and subband.
pub type ChannelMatrix = UserBand<usize>;

/// Draws an i.i.d. K×NF matrix of channel-level indices.
pub fn sample_channel<R: Rng + ?Sized>(
    model: &ChannelModel,
    users: usize,
    subbands: usize,
    rng: &mut R,
) -> ChannelMatrix {
    UserBand::from_fn(users, subbands, |_, _| model.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rayleigh_bins_have_unit_mean_power_in_the_limit() {
        let m = ChannelModel::rayleigh(64).unwrap();
        let mean_sq: f64 = (0..64).map(|h| m.gain(h) * m.pmf()[h]).sum();
        // conditional means lose the within-bin variance, so E|H|² < 1 slightly
        assert!(mean_sq < 1.0 && mean_sq > 0.98, "{mean_sq}");
        let mean: f64 = (0..64).map(|h| m.magnitude(h) * m.pmf()[h]).sum();
        assert!((mean - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_level_is_deterministic() {
        let m = ChannelModel::new(vec![1.0], vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = sample_channel(&m, 3, 4, &mut rng);
        assert!(h.iter().all(|&i| i == 0));
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ChannelModel::new(vec![1.0, 0.5], vec![0.5, 0.5]).is_err());
        assert!(ChannelModel::new(vec![1.0, 2.0], vec![0.5, 0.4]).is_err());
        assert!(ChannelModel::new(vec![0.0, 2.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn win_probability_counts_ties() {
        let m = ChannelModel::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap();
        assert_eq!(m.win_probability(0, 1), 0.5);
        assert_eq!(m.win_probability(1, 1), 1.0);
        assert_eq!(m.win_probability(0, 0), 1.0);
    }
}
