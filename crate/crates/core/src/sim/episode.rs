use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{scalarized_auction, solve_generic_auction, water_levels};
use crate::baselines::{
    calibrate_csit, csit_only_schedule, mlwdf_schedule, round_robin_schedule, CsitLevels, PowerBudgetTracker,
};
use crate::error::{Error, Result};
use crate::learner::{
    bellman_residual, update_multipliers, update_qtable, update_qtable_vector, vector_bellman_residual, wtilde_all,
    ConstraintSample, LagrangePair, LocalModel, SlotObservation, UserLearner, VectorQTable,
};
use crate::model::{
    sample_arrivals, sample_channel, sample_packet_bits, slot_rng, spectral_efficiency, step_queues,
    AllocationDecision, ChannelMatrix, ChannelModel, QueueMode, SimConfig,
};
use crate::oracle::{build_cmdp, dual_ascent, relative_value_iteration, DualOptions, EnumeratedCmdp, Policy, PowerGrid, Restriction};
use crate::sim::metrics::{MetricsAccumulator, MetricsRecord};
use crate::sim::trace::TraceRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    /// Per-subband Q-learning with the scalarized auction.
    Proposed,
    /// Vector Q-factors with the exhaustive auction; tiny instances only.
    ProposedVector,
    /// Optimal stationary policy of the enumerated CMDP at γ*.
    OraclePolicy,
    Mlwdf,
    CsitOnly,
    RoundRobin,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::Proposed,
        SchedulerKind::ProposedVector,
        SchedulerKind::OraclePolicy,
        SchedulerKind::Mlwdf,
        SchedulerKind::CsitOnly,
        SchedulerKind::RoundRobin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Proposed => "proposed",
            SchedulerKind::ProposedVector => "proposed-vector",
            SchedulerKind::OraclePolicy => "oracle",
            SchedulerKind::Mlwdf => "mlwdf",
            SchedulerKind::CsitOnly => "csit",
            SchedulerKind::RoundRobin => "rr",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, SchedulerKind::Proposed | SchedulerKind::ProposedVector)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "proposed" => SchedulerKind::Proposed,
            "proposed-vector" | "vector" => SchedulerKind::ProposedVector,
            "oracle" | "oracle-policy" => SchedulerKind::OraclePolicy,
            "mlwdf" | "m-lwdf" => SchedulerKind::Mlwdf,
            "csit" | "csit-only" => SchedulerKind::CsitOnly,
            "rr" | "round-robin" => SchedulerKind::RoundRobin,
            _ => return Err(Error::Config(format!("unknown scheduler `{s}`"))),
        })
    }
}

/// Per-episode knobs that are not part of the system model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub seed: u64,
    /// Trace sampling stride in slots; 0 disables tracing.
    pub trace_stride: u64,
    /// Also trace the Bellman residual (costs one sweep per sample).
    pub trace_residual: bool,
    /// Keep the multipliers fixed at their initial values.
    pub freeze_multipliers: bool,
    /// Overrides the configured initial multipliers.
    pub initial_gamma: Option<Vec<LagrangePair>>,
    /// Users whose Q-tables are not updated.
    pub frozen_users: Vec<usize>,
    /// Multipliers for the oracle policy; solved by dual ascent when absent.
    pub oracle_gamma: Option<Vec<LagrangePair>>,
    /// Power levels available to the oracle.
    pub oracle_grid: Option<PowerGrid>,
}

impl EpisodeOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            trace_stride: 0,
            trace_residual: false,
            freeze_multipliers: false,
            initial_gamma: None,
            frozen_users: Vec::new(),
            oracle_gamma: None,
            oracle_grid: None,
        }
    }

    pub fn trace_every(mut self, stride: u64) -> Self {
        self.trace_stride = stride;
        self
    }
}

/// Serializable mutable state of every scheduler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SchedulerState {
    Proposed { learners: Vec<UserLearner> },
    ProposedVector { tables: Vec<VectorQTable>, gammas: Vec<LagrangePair> },
    OraclePolicy,
    Mlwdf { tracker: PowerBudgetTracker },
    CsitOnly,
    RoundRobin { tracker: PowerBudgetTracker },
}

/// Everything needed to resume an episode bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSnapshot {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub slot: u64,
    pub queues: Vec<u64>,
    pub state: SchedulerState,
    pub metrics: MetricsAccumulator,
    pub trace: TraceRecord,
}

struct OraclePlan {
    cmdp: EnumeratedCmdp,
    policy: Policy,
}

/// One sequential run of the slot loop.
pub struct Episode {
    config: SimConfig,
    kind: SchedulerKind,
    opts: EpisodeOptions,
    channel: ChannelModel,
    models: Vec<LocalModel>,
    arrival_means: Vec<f64>,
    state: SchedulerState,
    oracle: Option<OraclePlan>,
    csit: Option<CsitLevels>,
    queues: Vec<u64>,
    slot: u64,
    acc: MetricsAccumulator,
    trace: TraceRecord,
}

impl Episode {
    pub fn new(config: &SimConfig, kind: SchedulerKind, opts: EpisodeOptions) -> Result<Self> {
        config.validate()?;
        let k_users = config.num_users();
        let channel = config.channel_model()?;
        let models = (0..k_users)
            .map(|k| LocalModel::new(config, k))
            .collect::<Result<Vec<_>>>()?;
        if let Some(g) = &opts.initial_gamma {
            if g.len() != k_users {
                return Err(Error::Config(format!("{} initial multipliers for {k_users} users", g.len())));
            }
        }
        let initial = |k: usize, fallback: LagrangePair| opts.initial_gamma.as_ref().map_or(fallback, |g| g[k]);
        let mut oracle = None;
        let mut csit = None;
        let state = match kind {
            SchedulerKind::Proposed => {
                let mut learners = (0..k_users)
                    .map(|k| UserLearner::new(config, k))
                    .collect::<Result<Vec<_>>>()?;
                for (k, l) in learners.iter_mut().enumerate() {
                    l.gamma = initial(k, l.gamma);
                }
                SchedulerState::Proposed { learners }
            }
            SchedulerKind::ProposedVector => {
                let init = config.initial_multipliers;
                let tables = (0..k_users)
                    .map(|k| VectorQTable::zeros(k, config.buffer, channel.num_levels(), config.subbands))
                    .collect::<Result<Vec<_>>>()?;
                let gammas = (0..k_users)
                    .map(|k| initial(k, LagrangePair::new(init.gamma_bar, init.gamma_under)))
                    .collect();
                SchedulerState::ProposedVector { tables, gammas }
            }
            SchedulerKind::OraclePolicy => {
                oracle = Some(plan_oracle(config, &opts)?);
                SchedulerState::OraclePolicy
            }
            SchedulerKind::Mlwdf => SchedulerState::Mlwdf {
                tracker: PowerBudgetTracker::new(config),
            },
            SchedulerKind::CsitOnly => {
                csit = Some(calibrate_csit(config)?);
                SchedulerState::CsitOnly
            }
            SchedulerKind::RoundRobin => SchedulerState::RoundRobin {
                tracker: PowerBudgetTracker::new(config),
            },
        };
        let trace = TraceRecord::new(opts.trace_stride);
        Ok(Self {
            arrival_means: (0..k_users).map(|k| config.arrival_mean(k)).collect(),
            acc: MetricsAccumulator::new(k_users, config.subbands, config.buffer),
            config: config.clone(),
            kind,
            opts,
            channel,
            models,
            state,
            oracle,
            csit,
            queues: vec![0; k_users],
            slot: 0,
            trace,
        })
    }

    /// Rebuilds an episode from a snapshot taken with the same config.
    pub fn restore(config: &SimConfig, opts: EpisodeOptions, snapshot: EpisodeSnapshot) -> Result<Self> {
        let mut ep = Self::new(
            config,
            snapshot.scheduler,
            EpisodeOptions {
                seed: snapshot.seed,
                ..opts
            },
        )?;
        let k_users = config.num_users();
        if snapshot.queues.len() != k_users || snapshot.metrics.queue_sum.len() != k_users {
            return Err(Error::Checkpoint(format!("snapshot does not have {k_users} users")));
        }
        if std::mem::discriminant(&ep.state) != std::mem::discriminant(&snapshot.state) {
            return Err(Error::Checkpoint("scheduler state does not match the scheduler".into()));
        }
        match &snapshot.state {
            SchedulerState::Proposed { learners } => {
                let fresh = match &ep.state {
                    SchedulerState::Proposed { learners } => &learners[0].table,
                    _ => unreachable!(),
                };
                if learners.len() != k_users
                    || learners.iter().any(|l| l.table.num_pairs() != fresh.num_pairs() || l.counters.counts.len() != fresh.num_pairs())
                {
                    return Err(Error::Checkpoint("learner dimensions do not match the config".into()));
                }
            }
            SchedulerState::ProposedVector { tables, gammas } => {
                if tables.len() != k_users || gammas.len() != k_users {
                    return Err(Error::Checkpoint("vector learner dimensions do not match the config".into()));
                }
            }
            _ => {}
        }
        ep.slot = snapshot.slot;
        ep.queues = snapshot.queues;
        ep.state = snapshot.state;
        ep.acc = snapshot.metrics;
        ep.trace = snapshot.trace;
        Ok(ep)
    }

    pub fn snapshot(&self) -> EpisodeSnapshot {
        EpisodeSnapshot {
            scheduler: self.kind,
            seed: self.opts.seed,
            slot: self.slot,
            queues: self.queues.clone(),
            state: self.state.clone(),
            metrics: self.acc.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn queues(&self) -> &[u64] {
        &self.queues
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn models(&self) -> &[LocalModel] {
        &self.models
    }

    pub fn learners(&self) -> Option<&[UserLearner]> {
        match &self.state {
            SchedulerState::Proposed { learners } => Some(learners),
            _ => None,
        }
    }

    pub fn vector_tables(&self) -> Option<&[VectorQTable]> {
        match &self.state {
            SchedulerState::ProposedVector { tables, .. } => Some(tables),
            _ => None,
        }
    }

    pub fn gammas(&self) -> Option<Vec<LagrangePair>> {
        match &self.state {
            SchedulerState::Proposed { learners } => Some(learners.iter().map(|l| l.gamma).collect()),
            SchedulerState::ProposedVector { gammas, .. } => Some(gammas.clone()),
            _ => None,
        }
    }

    /// Oracle policy and CMDP, when the scheduler is the oracle.
    pub fn oracle(&self) -> Option<(&EnumeratedCmdp, &Policy)> {
        self.oracle.as_ref().map(|o| (&o.cmdp, &o.policy))
    }

    /// Runs `slots` more slots.
    pub fn run(&mut self, slots: u64) -> Result<()> {
        for _ in 0..slots {
            self.step()?;
        }
        Ok(())
    }

    /// Simulates one slot: channel, decision, transmission, arrivals,
    /// learning.
    pub fn step(&mut self) -> Result<()> {
        let t = self.slot;
        let k_users = self.config.num_users();
        let mut rng = slot_rng(self.opts.seed, t);
        let h = sample_channel(&self.channel, k_users, self.config.subbands, &mut rng);
        let levels: Vec<usize> = (0..k_users).map(|k| self.config.queue_level(k, self.queues[k])).collect();
        let decision = self.decide(t, &h, &levels, &mut rng)?;
        let spectral = spectral_efficiency(&decision, &h, &self.channel, self.config.rate_constant);
        let packets = sample_arrivals(&self.arrival_means, &mut rng);
        let units: Vec<u64> = match self.config.queue_mode {
            QueueMode::Packet => packets.clone(),
            QueueMode::Bit => (0..k_users)
                .map(|k| sample_packet_bits(packets[k], self.config.users[k].packet_bits, &mut rng))
                .collect(),
        };
        let step = step_queues(&self.config, &self.queues, &spectral, &units, &mut rng);
        if t >= self.config.warmup {
            let in_packets: Vec<f64> = (0..k_users).map(|k| self.packets(k, self.queues[k])).collect();
            self.acc.record(&levels, &in_packets, self.config.buffer, &decision, &units, &step);
        }
        let next: Vec<usize> = (0..k_users).map(|k| self.config.queue_level(k, step.next[k])).collect();
        self.learn(t, &h, &levels, &next, &decision)?;
        self.queues = step.next;
        self.slot += 1;
        if self.opts.trace_stride > 0 && self.slot.is_multiple_of(self.opts.trace_stride) {
            self.sample_trace();
        }
        Ok(())
    }

    fn packets(&self, k: usize, units: u64) -> f64 {
        match self.config.queue_mode {
            QueueMode::Packet => units as f64,
            QueueMode::Bit => units as f64 / self.config.users[k].packet_bits,
        }
    }

    fn decide<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        h: &ChannelMatrix,
        levels: &[usize],
        rng: &mut R,
    ) -> Result<AllocationDecision> {
        let xi = self.config.rate_constant;
        if self.kind.learns() {
            let eps = self.config.exploration.probability(t);
            if eps > 0.0 && rng.random::<f64>() < eps {
                return Ok(self.explore(h, rng));
            }
        }
        Ok(match &mut self.state {
            SchedulerState::Proposed { learners } => {
                let tables: Vec<_> = learners.iter().map(|l| l.table.clone()).collect();
                let gammas: Vec<_> = learners.iter().map(|l| l.gamma).collect();
                let wl = water_levels(&tables, &self.models, &gammas, levels);
                scalarized_auction(wl, &self.models, h, self.config.tie_break, rng).decision
            }
            SchedulerState::ProposedVector { tables, gammas } => {
                solve_generic_auction(tables, &self.models, gammas, h, levels)?
            }
            SchedulerState::OraclePolicy => {
                let plan = self.oracle.as_ref().expect("oracle plan");
                let s = plan.cmdp.state_index(plan.cmdp.channel_index(h), plan.cmdp.queue_index(levels));
                let a = match &plan.policy.alternate {
                    Some(alt) if plan.policy.weight > 0.0 && rng.random::<f64>() < plan.policy.weight => alt[s],
                    _ => plan.policy.primary[s],
                };
                plan.cmdp.decision(a)
            }
            SchedulerState::Mlwdf { tracker } => mlwdf_schedule(&self.config, &self.channel, levels, h, tracker),
            SchedulerState::CsitOnly => {
                csit_only_schedule(h, &self.channel, xi, self.csit.as_ref().expect("csit levels"))
            }
            SchedulerState::RoundRobin { tracker } => round_robin_schedule(t, h, &self.channel, xi, tracker),
        })
    }

    /// Uniform random winner among the nonempty queues on every subband,
    /// with power P_k/NF.
    fn explore<R: Rng + ?Sized>(&self, h: &ChannelMatrix, rng: &mut R) -> AllocationDecision {
        let k_users = h.users();
        let nf = h.subbands();
        let mut d = AllocationDecision::idle(k_users, nf);
        let busy: Vec<usize> = (0..k_users).filter(|&k| self.queues[k] > 0).collect();
        if busy.is_empty() {
            return d;
        }
        for n in 0..nf {
            let k = busy[rng.random_range(0..busy.len())];
            d.winners[n] = Some(k);
            d.power[(k, n)] = self.models[k].power_budget / nf as f64;
        }
        d
    }

    fn learn(
        &mut self,
        t: u64,
        h: &ChannelMatrix,
        levels: &[usize],
        next: &[usize],
        decision: &AllocationDecision,
    ) -> Result<()> {
        let k_users = self.config.num_users();
        let nf = self.config.subbands;
        let sched = &self.config.schedule;
        let bound = self.config.multiplier_bound;
        match &mut self.state {
            SchedulerState::Proposed { learners } => {
                for k in 0..k_users {
                    let assigned: Vec<bool> = (0..nf).map(|n| decision.assigned(k, n)).collect();
                    let obs = SlotObservation {
                        queue: levels[k],
                        channel: h.row(k),
                        assigned: &assigned,
                        power: decision.power.row(k),
                        next_queue: next[k],
                    };
                    let l = &mut learners[k];
                    if !self.opts.frozen_users.contains(&k) {
                        update_qtable(&mut l.table, &mut l.anchor, &mut l.counters, sched, &obs, l.gamma, &self.models[k])?;
                    }
                    if !self.opts.freeze_multipliers {
                        l.gamma = update_multipliers(
                            l.gamma,
                            constraint_sample(decision, k, levels[k], self.config.buffer),
                            self.models[k].power_budget,
                            self.config.users[k].drop_budget,
                            sched,
                            t + 1,
                            bound,
                        )?;
                    }
                }
            }
            SchedulerState::ProposedVector { tables, gammas } => {
                for k in 0..k_users {
                    let assigned: Vec<bool> = (0..nf).map(|n| decision.assigned(k, n)).collect();
                    let obs = SlotObservation {
                        queue: levels[k],
                        channel: h.row(k),
                        assigned: &assigned,
                        power: decision.power.row(k),
                        next_queue: next[k],
                    };
                    if !self.opts.frozen_users.contains(&k) {
                        update_qtable_vector(&mut tables[k], sched, &obs, gammas[k], &self.models[k])?;
                    }
                    if !self.opts.freeze_multipliers {
                        gammas[k] = update_multipliers(
                            gammas[k],
                            constraint_sample(decision, k, levels[k], self.config.buffer),
                            self.models[k].power_budget,
                            self.config.users[k].drop_budget,
                            sched,
                            t + 1,
                            bound,
                        )?;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn sample_trace(&mut self) {
        let residual = self.opts.trace_residual;
        let nf = self.config.subbands as f64;
        let (w, gb, gu, res, mins, visits) = match &self.state {
            SchedulerState::Proposed { learners } => {
                let w: Vec<Vec<f64>> = learners
                    .iter()
                    .zip(&self.models)
                    .map(|(l, m)| wtilde_all(&l.table, m).into_iter().map(|x| nf * x).collect())
                    .collect();
                let res = if residual {
                    learners.iter().zip(&self.models).map(|(l, m)| bellman_residual(&l.table, l.gamma, m)).collect()
                } else {
                    Vec::new()
                };
                (
                    w,
                    learners.iter().map(|l| l.gamma.gamma_bar).collect(),
                    learners.iter().map(|l| l.gamma.gamma_under).collect(),
                    res,
                    learners.iter().map(|l| l.counters.min()).collect(),
                    learners.iter().map(|l| l.counters.counts.clone()).collect(),
                )
            }
            SchedulerState::ProposedVector { tables, gammas } => {
                let w: Vec<Vec<f64>> = tables.iter().zip(&self.models).map(|(t, m)| t.big_w_all(m)).collect();
                let res = if residual {
                    tables
                        .iter()
                        .zip(gammas)
                        .zip(&self.models)
                        .map(|((t, g), m)| vector_bellman_residual(t, *g, m))
                        .collect()
                } else {
                    Vec::new()
                };
                (
                    w,
                    gammas.iter().map(|g| g.gamma_bar).collect(),
                    gammas.iter().map(|g| g.gamma_under).collect(),
                    res,
                    tables.iter().map(|t| t.counts.iter().copied().min().unwrap_or(0)).collect(),
                    tables.iter().map(|t| t.counts.clone()).collect(),
                )
            }
            _ => return,
        };
        self.trace.slots.push(self.slot);
        self.trace.big_w.push(w);
        self.trace.gamma_bar.push(gb);
        self.trace.gamma_under.push(gu);
        if residual {
            self.trace.residual.push(res);
        }
        self.trace.min_visits.push(mins);
        self.trace.visits = visits;
    }

    /// Metrics so far and the trace, with the final visit counts filled in.
    pub fn finish(&self) -> (MetricsRecord, TraceRecord) {
        let metrics = self.acc.finish(self.kind.name(), self.opts.seed, &self.config);
        let mut trace = self.trace.clone();
        trace.total_slots = self.slot;
        match &self.state {
            SchedulerState::Proposed { learners } => {
                trace.visits = learners.iter().map(|l| l.counters.counts.clone()).collect();
            }
            SchedulerState::ProposedVector { tables, .. } => {
                trace.visits = tables.iter().map(|t| t.counts.clone()).collect();
            }
            _ => {}
        }
        (metrics, trace)
    }
}

fn constraint_sample(decision: &AllocationDecision, k: usize, level: usize, buffer: usize) -> ConstraintSample {
    ConstraintSample {
        total_power: decision.total_power(k),
        at_capacity: level == buffer,
    }
}

fn plan_oracle(config: &SimConfig, opts: &EpisodeOptions) -> Result<OraclePlan> {
    let grid = opts.oracle_grid.clone().unwrap_or_else(|| PowerGrid::geometric(config));
    match &opts.oracle_gamma {
        Some(gamma) => {
            let cmdp = build_cmdp(config, &grid, gamma, Restriction::None)?;
            let sol = relative_value_iteration(&cmdp)?;
            Ok(OraclePlan {
                policy: Policy::deterministic(sol.policy),
                cmdp,
            })
        }
        None => {
            let dual = dual_ascent(config, &grid, DualOptions::default())?;
            let cmdp = build_cmdp(config, &grid, &dual.gamma_star, Restriction::None)?;
            let policy = match dual.randomized {
                Some((p, _)) => p,
                None => Policy::deterministic(dual.solution.policy),
            };
            Ok(OraclePlan { cmdp, policy })
        }
    }
}

/// Runs a fresh episode for `slots` slots.
pub fn run_episode(
    config: &SimConfig,
    scheduler: SchedulerKind,
    slots: u64,
    seed: u64,
) -> Result<(MetricsRecord, TraceRecord)> {
    run_episode_with(config, scheduler, slots, EpisodeOptions::with_seed(seed))
}

pub fn run_episode_with(
    config: &SimConfig,
    scheduler: SchedulerKind,
    slots: u64,
    opts: EpisodeOptions,
) -> Result<(MetricsRecord, TraceRecord)> {
    let mut ep = Episode::new(config, scheduler, opts)?;
    ep.run(slots)?;
    Ok(ep.finish())
}
