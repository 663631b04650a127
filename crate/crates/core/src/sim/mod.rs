//! Slot-loop simulation, metrics, traces and multi-seed comparisons.

pub mod compare;
pub mod episode;
pub mod metrics;
pub mod trace;
pub mod visiting;

pub use compare::{
    compare_schedulers, compare_schedulers_with, snr_for_delay, sweep, sweep_config, ComparisonTable, DelayDifference,
    Estimate, SchedulerSummary, SweepAxis, SweepPoint,
};
pub use episode::{
    run_episode, run_episode_with, Episode, EpisodeOptions, EpisodeSnapshot, SchedulerKind, SchedulerState,
};
pub use metrics::{MetricsAccumulator, MetricsRecord, UserMetrics};
pub use trace::TraceRecord;
pub use visiting::{measure_visiting_speed, VisitingSpeed};
