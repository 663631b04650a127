use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::SimConfig;
use crate::sim::episode::{run_episode_with, EpisodeOptions, SchedulerKind};
use crate::sim::metrics::MetricsRecord;

/// Sample mean and standard deviation; `std` is `None` for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.len() > 1).then(|| (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSummary {
    pub scheduler: SchedulerKind,
    pub runs: Vec<MetricsRecord>,
    /// User-averaged E[Q] in packets.
    pub delay: Estimate,
    pub drop_rate: Estimate,
    /// User-averaged power.
    pub power: Estimate,
    pub idle_subband_frac: Estimate,
}

/// 95% t-interval on the seed-paired difference delay(a) − delay(b).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayDifference {
    pub a: SchedulerKind,
    pub b: SchedulerKind,
    pub mean: f64,
    /// `None` with fewer than two seeds.
    pub interval: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub slots: u64,
    pub rows: Vec<SchedulerSummary>,
    pub differences: Vec<DelayDifference>,
}

impl ComparisonTable {
    pub fn row(&self, kind: SchedulerKind) -> Option<&SchedulerSummary> {
        self.rows.iter().find(|r| r.scheduler == kind)
    }

    pub fn difference(&self, a: SchedulerKind, b: SchedulerKind) -> Option<&DelayDifference> {
        self.differences.iter().find(|d| d.a == a && d.b == b)
    }

    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.rows.iter().flat_map(|r| r.runs.iter())
    }
}

fn mean_over_users(r: &MetricsRecord, f: impl Fn(&crate::sim::metrics::UserMetrics) -> f64) -> f64 {
    r.users.iter().map(f).sum::<f64>() / r.users.len() as f64
}

fn t_interval(diffs: &[f64]) -> Option<(f64, f64)> {
    let e = Estimate::from_samples(diffs);
    let std = e.std?;
    let n = diffs.len() as f64;
    let t = StudentsT::new(0.0, 1.0, n - 1.0).ok()?.inverse_cdf(0.975);
    let half = t * std / n.sqrt();
    Some((e.mean - half, e.mean + half))
}

/// Runs every scheduler on every seed in parallel and summarizes.
pub fn compare_schedulers(
    config: &SimConfig,
    schedulers: &[SchedulerKind],
    seeds: &[u64],
    slots: u64,
) -> Result<ComparisonTable> {
    compare_schedulers_with(config, schedulers, seeds, slots, &EpisodeOptions::with_seed(0))
}

/// As [`compare_schedulers`] with shared episode options; the seed in
/// `base` is replaced by each entry of `seeds`.
pub fn compare_schedulers_with(
    config: &SimConfig,
    schedulers: &[SchedulerKind],
    seeds: &[u64],
    slots: u64,
    base: &EpisodeOptions,
) -> Result<ComparisonTable> {
    if schedulers.is_empty() {
        return Err(Error::Empty("scheduler list"));
    }
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let jobs: Vec<(SchedulerKind, u64)> = schedulers
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(s, seed)| {
            let opts = EpisodeOptions {
                seed,
                ..base.clone()
            };
            run_episode_with(config, s, slots, opts).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SchedulerSummary> = schedulers
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let runs = records[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
            let stat = |f: &dyn Fn(&MetricsRecord) -> f64| Estimate::from_samples(&runs.iter().map(f).collect::<Vec<_>>());
            SchedulerSummary {
                scheduler: s,
                delay: stat(&|r| r.mean_delay_pck()),
                drop_rate: stat(&|r| r.mean_drop_rate()),
                power: stat(&|r| mean_over_users(r, |u| u.avg_power_w)),
                idle_subband_frac: stat(&|r| r.idle_subband_frac),
                runs,
            }
        })
        .collect();
    let mut differences = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in rows.iter().enumerate() {
            if i == j {
                continue;
            }
            let diffs: Vec<f64> = a
                .runs
                .iter()
                .zip(&b.runs)
                .map(|(x, y)| x.mean_delay_pck() - y.mean_delay_pck())
                .collect();
            differences.push(DelayDifference {
                a: a.scheduler,
                b: b.scheduler,
                mean: Estimate::from_samples(&diffs).mean,
                interval: t_interval(&diffs),
            });
        }
    }
    Ok(ComparisonTable {
        seeds: seeds.to_vec(),
        slots,
        rows,
        differences,
    })
}

/// Axis swept by [`sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SweepAxis {
    SnrDb(Vec<f64>),
    /// Number of users; user 0's parameters are replicated.
    Users(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub table: ComparisonTable,
}

pub fn sweep_config(config: &SimConfig, axis: &SweepAxis) -> Vec<(f64, SimConfig)> {
    match axis {
        SweepAxis::SnrDb(v) => v
            .iter()
            .map(|&snr| {
                let mut c = config.clone();
                c.snr_db = snr;
                (snr, c)
            })
            .collect(),
        SweepAxis::Users(v) => v
            .iter()
            .map(|&k| {
                let mut c = config.clone();
                c.users = vec![config.users[0].clone(); k];
                (k as f64, c)
            })
            .collect(),
    }
}

pub fn sweep(
    config: &SimConfig,
    axis: &SweepAxis,
    schedulers: &[SchedulerKind],
    seeds: &[u64],
    slots: u64,
) -> Result<Vec<SweepPoint>> {
    sweep_config(config, axis)
        .into_iter()
        .map(|(value, c)| {
            Ok(SweepPoint {
                value,
                table: compare_schedulers(&c, schedulers, seeds, slots)?,
            })
        })
        .collect()
}

/// Smallest SNR at which `curve` (delay versus SNR, SNR increasing) falls
/// to `target`, by linear interpolation.
pub fn snr_for_delay(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    if let Some(&(s, d)) = curve.first() {
        if d <= target {
            return Some(s);
        }
    }
    curve.windows(2).find_map(|w| {
        let ((s0, d0), (s1, d1)) = (w[0], w[1]);
        (d0 > target && d1 <= target).then(|| s0 + (d0 - target) / (d0 - d1) * (s1 - s0))
    })
}
