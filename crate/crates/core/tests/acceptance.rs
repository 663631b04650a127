//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when a
//! criterion fails. Criteria listed in `KNOWN_FAILURES` are expected to fail
//! (see the README); the binary exits non-zero when any criterion fails
//! unexpectedly or a known failure starts passing.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- oracle`.

use std::process::ExitCode;
use std::time::Instant;

use ofdma_sched::auction::{waterfill_power, WaterLevelParams};
use ofdma_sched::io::Checkpoint;
use ofdma_sched::learner::{bellman_residual, LagrangePair, LocalModel, Pair};
use ofdma_sched::model::SimConfig;
use ofdma_sched::oracle::{
    bellman_span_residual, build_cmdp, dual_ascent, relative_value_iteration, DualOptions, PowerGrid, Restriction,
};
use ofdma_sched::sim::{
    compare_schedulers, measure_visiting_speed, run_episode_with, snr_for_delay, Episode, EpisodeOptions,
    MetricsRecord, SchedulerKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Check = fn() -> Outcome;

const KNOWN_FAILURES: &[&str] = &["delay ordering", "queue CDF dominance", "visiting speed"];

const TINY_SPAN_TOL: f64 = 1e-8;

fn oracle_fixed_point() -> Outcome {
    let c = SimConfig::tiny(2, 1, 2, 2);
    let grid = PowerGrid::geometric(&c);
    assert_eq!(grid.size(), 8);
    let t = Instant::now();
    let gamma = vec![LagrangePair::new(c.initial_multipliers.gamma_bar, 0.0); 2];
    let cmdp = build_cmdp(&c, &grid, &gamma, Restriction::None)?;
    let sol = relative_value_iteration(&cmdp)?;
    let r = bellman_span_residual(&cmdp, &sol);
    let secs = t.elapsed().as_secs_f64();
    Ok((
        r <= TINY_SPAN_TOL && secs < 10.0,
        format!("span residual {r:.2e} (tol {TINY_SPAN_TOL:e}) after {} sweeps in {secs:.2} s", sol.sweeps),
    ))
}

fn learner_vs_oracle() -> Outcome {
    let c = SimConfig::tiny(2, 1, 2, 2);
    let grid = PowerGrid::geometric(&c);
    let t = Instant::now();
    let dual = dual_ascent(&c, &grid, DualOptions::default())?;
    let cmdp = build_cmdp(&c, &grid, &dual.gamma_star, Restriction::None)?;
    let sol = &dual.solution;
    let opts = EpisodeOptions {
        freeze_multipliers: true,
        initial_gamma: Some(dual.gamma_star.clone()),
        ..EpisodeOptions::with_seed(1)
    };
    let mut ep = Episode::new(&c, SchedulerKind::Proposed, opts)?;
    ep.run(200_000)?;
    let learners = ep.learners().expect("proposed scheduler learns");

    let range = sol.q_range();
    let residual = learners
        .iter()
        .enumerate()
        .map(|(k, l)| Ok(bellman_residual(&l.table, dual.gamma_star[k], &LocalModel::new(&c, k)?)))
        .collect::<Result<Vec<f64>, ofdma_sched::Error>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let (users, nf) = (cmdp.users, cmdp.subbands);
    let (mut states, mut agree) = (0usize, 0usize);
    for s in (0..cmdp.num_states()).filter(|&s| sol.reachable[s]) {
        let (h, q) = cmdp.split_state(s);
        let levels = cmdp.channel_levels(h);
        let queues = cmdp.queue_levels(q);
        let learned = |code: usize| {
            let mut x = code;
            let winners: Vec<usize> = (0..nf)
                .map(|_| {
                    let w = x % users;
                    x /= users;
                    w
                })
                .collect();
            (0..users)
                .flat_map(|k| (0..nf).map(move |n| (k, n)))
                .map(|(k, n)| learners[k].table.get(Pair::new(queues[k], levels[(k, n)], winners[n] == k)))
                .sum::<f64>()
        };
        let codes = cmdp.num_assignments();
        let choice = (0..codes).min_by(|&a, &b| learned(a).total_cmp(&learned(b))).unwrap();
        let best = (0..codes).map(|a| sol.q(s, a)).fold(f64::INFINITY, f64::min);
        states += 1;
        if sol.q(s, choice) <= best + 1e-9 * range {
            agree += 1;
        }
    }
    let frac = agree as f64 / states as f64;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        residual <= 0.05 * range && frac >= 0.9 && secs < 120.0,
        format!(
            "residual {residual:.3} vs 0.05 x Q range {range:.2} = {:.3}; greedy agreement {agree}/{states} = {:.1}%; {secs:.1} s",
            0.05 * range,
            100.0 * frac
        ),
    ))
}

fn water_filling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_closed, mut worst_grid) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let nf = rng.random_range(1..=8usize);
        let kappa = rng.random_range(0.01..1.0);
        let dw = rng.random_range(0.01..50.0);
        let gb = rng.random_range(0.01..5.0);
        let gain = rng.random_range(0.01..20.0);
        let params = WaterLevelParams::new(dw, gb, nf, kappa)?;
        let p = waterfill_power(true, gain, &params)?;
        let closed = (nf as f64 * dw * kappa / gb - 1.0 / gain).max(0.0);
        worst_closed = worst_closed.max((p - closed).abs() / closed.max(1.0));

        let bracket = |x: f64| gb * x - nf as f64 * dw * kappa * (gain * x).ln_1p();
        let top = 2.0 * closed.max(1.0);
        let spacing = top / 9_999.0;
        let (arg, _) = (0..10_000)
            .map(|i| i as f64 * spacing)
            .map(|x| (x, bracket(x)))
            .fold((0.0, f64::INFINITY), |b, v| if v.1 < b.1 { v } else { b });
        worst_grid = worst_grid.max((arg - p).abs() / spacing);
    }
    Ok((
        worst_closed <= 1e-12 && worst_grid <= 1.0,
        format!("closed form within {worst_closed:.1e} (relative); grid optimum within {worst_grid:.2} spacings"),
    ))
}

fn constraints() -> Outcome {
    let c = SimConfig::reference();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let mut ep = Episode::new(&c, SchedulerKind::Proposed, EpisodeOptions::with_seed(seed))?;
        ep.run(200_000)?;
        let (m, _) = ep.finish();
        let gammas = ep.gammas().expect("proposed scheduler learns");
        for (k, u) in m.users.iter().enumerate() {
            let budget = c.power_budget(k);
            let interior = gammas[k].gamma_bar > 1e-6 && gammas[k].gamma_bar < c.multiplier_bound;
            let dp = (u.avg_power_w - budget).abs() / budget;
            let dd = (u.drop_rate - c.users[k].drop_budget).abs();
            ok &= (!interior || dp <= 0.05) && dd <= 0.02;
            parts.push(format!("s{seed}u{k} power {:+.1}% drop {:.3}", 100.0 * (u.avg_power_w / budget - 1.0), u.drop_rate));
        }
    }
    Ok((ok, parts.join(", ")))
}

fn delay_ordering() -> Outcome {
    use SchedulerKind::*;
    let c = SimConfig::reference();
    let seeds: Vec<u64> = (1..=20).collect();
    let table = compare_schedulers(&c, &[Proposed, Mlwdf, CsitOnly, RoundRobin], &seeds, 200_000)?;
    let mean = |k| table.row(k).unwrap().delay.mean;
    let ordered = mean(Proposed) < mean(Mlwdf) && mean(Mlwdf) < mean(CsitOnly).min(mean(RoundRobin));
    let confident = [Mlwdf, CsitOnly, RoundRobin]
        .iter()
        .all(|&b| table.difference(Proposed, b).and_then(|d| d.interval).is_some_and(|(_, hi)| hi < 0.0));

    let grid: Vec<f64> = (2..=10).map(|i| 2.0 * i as f64).collect();
    let sweep_seeds: Vec<u64> = (1..=5).collect();
    let mut curves = (Vec::new(), Vec::new());
    for &snr in &grid {
        let mut cs = c.clone();
        cs.snr_db = snr;
        let t = compare_schedulers(&cs, &[Proposed, Mlwdf], &sweep_seeds, 200_000)?;
        curves.0.push((snr, t.row(Proposed).unwrap().delay.mean));
        curves.1.push((snr, t.row(Mlwdf).unwrap().delay.mean));
    }
    let gain = curves
        .0
        .iter()
        .filter_map(|&(x, d)| snr_for_delay(&curves.1, d).map(|s| (x, s - x)))
        .fold((f64::NAN, f64::NEG_INFINITY), |b, v| if v.1 > b.1 { v } else { b });

    Ok((
        ordered && confident && gain.1 >= 2.0,
        format!(
            "mean E[Q] proposed {:.3} mlwdf {:.3} csit {:.3} rr {:.3} (ordered {ordered}, proposed-vs-each 95% {confident}); \
             best gain over M-LWDF {:.2} dB at {} dB",
            mean(Proposed),
            mean(Mlwdf),
            mean(CsitOnly),
            mean(RoundRobin),
            gain.1,
            gain.0
        ),
    ))
}

fn pooled_cdf(runs: &[MetricsRecord]) -> Vec<f64> {
    let levels = runs[0].users[0].histogram.len();
    let mut h = vec![0u64; levels];
    for u in runs.iter().flat_map(|r| &r.users) {
        for (acc, x) in h.iter_mut().zip(&u.histogram) {
            *acc += x;
        }
    }
    let total: u64 = h.iter().sum();
    let mut acc = 0;
    h.iter()
        .map(|x| {
            acc += x;
            acc as f64 / total as f64
        })
        .collect()
}

fn queue_cdf() -> Outcome {
    use SchedulerKind::*;
    let c = SimConfig::reference_users(4);
    let seeds: Vec<u64> = (1..=10).collect();
    let table = compare_schedulers(&c, &[Proposed, Mlwdf, CsitOnly, RoundRobin], &seeds, 200_000)?;
    let ours = pooled_cdf(&table.row(Proposed).unwrap().runs);
    let mut ok = true;
    let mut parts = Vec::new();
    for b in [Mlwdf, CsitOnly, RoundRobin] {
        let theirs = pooled_cdf(&table.row(b).unwrap().runs);
        let margin = ours.iter().zip(&theirs).map(|(a, t)| a - t).fold(f64::INFINITY, f64::min);
        ok &= margin >= 0.0;
        parts.push(format!("{b} min margin {margin:+.4}"));
    }
    Ok((ok, parts.join(", ")))
}

fn visiting_speed() -> Outcome {
    let slots = 1_000_000;
    let median_speed = |k: usize, n: usize| -> Result<f64, ofdma_sched::Error> {
        let mut c = SimConfig::reference_users(k);
        c.subbands = n;
        let mut v = Vec::new();
        for seed in 1..=5 {
            let (_, trace) = run_episode_with(&c, SchedulerKind::Proposed, slots, EpisodeOptions::with_seed(seed).trace_every(slots))?;
            v.extend(measure_visiting_speed(&trace, slots).iter().map(|x| x.speed));
        }
        v.sort_by(f64::total_cmp);
        Ok(v[v.len() / 2])
    };
    let (a, b, d) = (median_speed(2, 2)?, median_speed(2, 4)?, median_speed(4, 4)?);
    let (r1, r2) = (b / a, b / d);
    let within = |r: f64| (1.0..=4.0).contains(&r);
    Ok((
        within(r1) && within(r2),
        format!("median V (2,2) {a:.2e} (2,4) {b:.2e} (4,4) {d:.2e}; ratios {r1:.3} and {r2:.3} against [1, 4]"),
    ))
}

fn convergence_trace() -> Outcome {
    let c = SimConfig::reference_users(10);
    let slots = 10_000;
    let (_, trace) = run_episode_with(&c, SchedulerKind::Proposed, slots, EpisodeOptions::with_seed(1).trace_every(1))?;
    let traces: Vec<Vec<f64>> = (0..=c.buffer).map(|q| trace.average_w(q)).collect();
    let all = traces.iter().flatten();
    let range = all.clone().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) - all.fold(f64::INFINITY, |m, &x| m.min(x));
    let n = trace.slots.len();
    let tail = n - n / 10;
    let change = traces
        .iter()
        .flat_map(|w| (tail..n).map(move |i| (w[i] - w[i - 1]).abs()))
        .fold(0.0, f64::max);
    Ok((
        change <= 0.01 * range,
        format!("max change {change:.4} over the last {} samples vs 1% of range {range:.2}", n - tail),
    ))
}

fn determinism() -> Outcome {
    let tiny = SimConfig::tiny(2, 1, 2, 2);
    let reference = SimConfig::reference();
    let mut cases: Vec<(&SimConfig, SchedulerKind)> = [SchedulerKind::Proposed, SchedulerKind::Mlwdf, SchedulerKind::CsitOnly, SchedulerKind::RoundRobin]
        .into_iter()
        .map(|k| (&reference, k))
        .collect();
    cases.push((&tiny, SchedulerKind::ProposedVector));
    cases.push((&tiny, SchedulerKind::OraclePolicy));
    let slots = 20_000;
    for (c, kind) in cases {
        let opts = EpisodeOptions::with_seed(9).trace_every(1_000);
        let first = run_episode_with(c, kind, slots, opts.clone())?;
        let second = run_episode_with(c, kind, slots, opts.clone())?;
        let mut part = Episode::new(c, kind, opts.clone())?;
        part.run(slots / 3)?;
        let text = serde_json::to_string(&Checkpoint::new(c, opts, part.snapshot()))?;
        let cp: Checkpoint = serde_json::from_str(&text)?;
        cp.verify(Some(c))?;
        let mut resumed = Episode::restore(c, cp.options, cp.snapshot)?;
        resumed.run(slots - slots / 3)?;
        let bytes = |r: &(MetricsRecord, _)| serde_json::to_string(r);
        let resumed = resumed.finish();
        if bytes(&first)? != bytes(&second)? || bytes(&first)? != bytes(&resumed)? {
            return Ok((false, format!("{kind} differs between runs")));
        }
    }
    Ok((true, format!("six scheduler/config cases bit-identical over {slots} slots, with and without a JSON checkpoint")))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("oracle fixed point", oracle_fixed_point),
        ("learner vs oracle", learner_vs_oracle),
        ("water-filling", water_filling),
        ("constraint satisfaction", constraints),
        ("delay ordering", delay_ordering),
        ("queue CDF dominance", queue_cdf),
        ("visiting speed", visiting_speed),
        ("convergence trace", convergence_trace),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let known = KNOWN_FAILURES.contains(name);
        let tag = match (pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        if pass == known {
            unexpected += 1;
        }
        println!("{tag} {}. {name}: {detail} [{:.1} s]", i + 1, t.elapsed().as_secs_f64());
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected outcome(s)");
        ExitCode::FAILURE
    }
}
