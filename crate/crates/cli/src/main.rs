use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ofdma_sched::auction::{waterfill_power, WaterLevelParams};
use ofdma_sched::io::{self, Checkpoint, Format};
use ofdma_sched::model::SimConfig;
use ofdma_sched::oracle::{bellman_span_residual, dual_ascent, DualOptions, PowerGrid};
use ofdma_sched::sim::{
    compare_schedulers, sweep, ComparisonTable, Episode, EpisodeOptions, MetricsRecord, SchedulerKind, SweepAxis,
};

#[derive(Parser)]
#[command(name = "ofdma-sched", version, about = "Delay-aware OFDMA uplink scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheduler on one config.
    Run(RunArgs),
    /// Run several schedulers over a list of seeds.
    Compare(CompareArgs),
    /// Repeat a comparison over SNR values or user counts, writing one --out file per value.
    Sweep(SweepArgs),
    /// Solve a tiny instance exactly and report the fixed point.
    Oracle(OracleArgs),
    /// Check a config and run the quick invariant suite.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config; the built-in reference system when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Slots to simulate, warmup included.
    #[arg(long, value_name = "T", default_value_t = 200_000)]
    slots: u64,
    /// Metrics output file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format; guessed from the --out extension when omitted.
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    /// Append to --out instead of replacing it.
    #[arg(long)]
    append: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Scheduler name; proposed when omitted.
    #[arg(long, value_parser = parse_scheduler)]
    scheduler: Option<SchedulerKind>,
    /// Ignored with --resume, which keeps the stored seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Save the episode state here when the run ends.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Continue the episode stored in this checkpoint for --slots more slots.
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
    /// Sample learning traces every N slots and write them next to --out.
    #[arg(long, value_name = "N", default_value_t = 0)]
    trace_every: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated scheduler names.
    #[arg(long, default_value = "proposed,mlwdf,csit,rr", value_delimiter = ',', value_parser = parse_scheduler)]
    schedulers: Vec<SchedulerKind>,
    /// Seeds as a list (1,2,5) or an inclusive range (1..20).
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    seeds: Seeds,
    /// Single seed, overriding --seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    compare: CompareArgs,
    /// SNR values in dB.
    #[arg(long, value_delimiter = ',', conflicts_with = "users")]
    snr: Vec<f64>,
    /// User counts.
    #[arg(long, value_delimiter = ',')]
    users: Vec<usize>,
}

#[derive(Args)]
struct OracleArgs {
    /// TOML config of a tiny instance; K=2, NF=1, NH=2, NQ=2 when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Also simulate the oracle policy for this many slots.
    #[arg(long, value_name = "T", default_value_t = 0)]
    slots: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dual ascent iteration cap.
    #[arg(long, default_value_t = DualOptions::default().max_iters)]
    iters: usize,
    /// Dual ascent step constant.
    #[arg(long, default_value_t = DualOptions::default().step)]
    step: f64,
    /// Save the fixed point as JSON.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: ofdma_sched::Error| e.to_string())
}

fn parse_scheduler(s: &str) -> std::result::Result<SchedulerKind, String> {
    s.parse().map_err(|e: ofdma_sched::Error| e.to_string())
}

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let bad = |_| format!("bad seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(bad)?;
        let b: u64 = b.trim_start_matches('=').trim().parse().map_err(bad)?;
        if b < a {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<u64>().map_err(bad))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Seeds(v))
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => Ok(io::parse_config(p)?),
        None => Ok(SimConfig::reference()),
    }
}

fn output_format(common: &Common, out: &Path) -> Format {
    common.format.unwrap_or_else(|| Format::from_path(out))
}

fn write_records(common: &Common, records: &[MetricsRecord]) -> Result<()> {
    if let Some(out) = &common.out {
        io::write_metrics(records, out, output_format(common, out), common.append)?;
        eprintln!("wrote {} record(s) to {}", records.len(), out.display());
    }
    Ok(())
}

fn print_record(m: &MetricsRecord) {
    println!("{} seed {} over {} measured slots, idle subbands {:.3}", m.scheduler, m.seed, m.slots, m.idle_subband_frac);
    println!("  user  delay_pck  delay_s    drop     overflow  power_w   wasted_w");
    for u in &m.users {
        println!(
            "  {:>4}  {:>9.4}  {:>7.4}  {:>7.4}  {:>8.4}  {:>8.3}  {:>8.3}",
            u.user, u.avg_delay_pck, u.avg_delay_s, u.drop_rate, u.overflow_frac, u.avg_power_w, u.wasted_power_w
        );
    }
}

fn print_table(t: &ComparisonTable) {
    println!("{} seed(s), {} slots", t.seeds.len(), t.slots);
    println!("  {:<16} {:>10} {:>8} {:>8} {:>8} {:>8}", "scheduler", "delay_pck", "±std", "drop", "power_w", "idle");
    for r in &t.rows {
        println!(
            "  {:<16} {:>10.4} {:>8} {:>8.4} {:>8.3} {:>8.3}",
            r.scheduler.name(),
            r.delay.mean,
            r.delay.std.map_or("-".to_string(), |s| format!("{s:.4}")),
            r.drop_rate.mean,
            r.power.mean,
            r.idle_subband_frac.mean
        );
    }
    for d in t.differences.iter().filter(|d| (d.a as u8) < (d.b as u8)) {
        match d.interval {
            Some((lo, hi)) => println!("  {} - {}: {:+.4} [{:+.4}, {:+.4}]", d.a.name(), d.b.name(), d.mean, lo, hi),
            None => println!("  {} - {}: {:+.4}", d.a.name(), d.b.name(), d.mean),
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let started = Instant::now();
    let (config, opts, mut episode) = match &args.resume {
        Some(path) => {
            let expected = args.common.config.as_deref().map(io::parse_config).transpose()?;
            let cp = io::load_checkpoint(path, expected.as_ref())?;
            if let Some(kind) = args.scheduler.filter(|&k| k != cp.snapshot.scheduler) {
                bail!("checkpoint holds a {} episode, not {kind}", cp.snapshot.scheduler);
            }
            eprintln!("resuming {} at slot {}", cp.snapshot.scheduler, cp.snapshot.slot);
            let ep = Episode::restore(&cp.config, cp.options.clone(), cp.snapshot)?;
            (cp.config, cp.options, ep)
        }
        None => {
            let config = load_config(args.common.config.as_deref())?;
            let opts = EpisodeOptions::with_seed(args.seed).trace_every(args.trace_every);
            let kind = args.scheduler.unwrap_or(SchedulerKind::Proposed);
            let ep = Episode::new(&config, kind, opts.clone())?;
            (config, opts, ep)
        }
    };
    episode.run(args.common.slots)?;
    let (metrics, trace) = episode.finish();
    print_record(&metrics);
    if let Some(g) = episode.gammas() {
        let s: Vec<String> = g.iter().map(|x| format!("({:.4}, {:.4})", x.gamma_bar, x.gamma_under)).collect();
        println!("  multipliers (gamma_bar, gamma_under): {}", s.join(" "));
    }
    write_records(&args.common, std::slice::from_ref(&metrics))?;
    if let (Some(out), false) = (&args.common.out, trace.is_empty()) {
        let path = out.with_extension("trace.json");
        std::fs::write(&path, serde_json::to_string(&trace)?).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote trace to {}", path.display());
    }
    if let Some(path) = &args.checkpoint {
        io::save_checkpoint(path, &Checkpoint::new(&config, opts, episode.snapshot()))?;
        eprintln!("checkpoint at slot {} saved to {}", episode.slot(), path.display());
    }
    eprintln!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn seeds_of(args: &CompareArgs) -> Vec<u64> {
    args.seed.map_or_else(|| args.seeds.0.clone(), |s| vec![s])
}

fn compare(args: CompareArgs) -> Result<()> {
    let config = load_config(args.common.config.as_deref())?;
    let table = compare_schedulers(&config, &args.schedulers, &seeds_of(&args), args.common.slots)?;
    print_table(&table);
    let records: Vec<MetricsRecord> = table.records().cloned().collect();
    write_records(&args.common, &records)
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let c = &args.compare;
    let config = load_config(c.common.config.as_deref())?;
    let axis = match (args.snr.is_empty(), args.users.is_empty()) {
        (false, true) => SweepAxis::SnrDb(args.snr.clone()),
        (true, false) => SweepAxis::Users(args.users.clone()),
        _ => bail!("give exactly one of --snr or --users"),
    };
    let points = sweep(&config, &axis, &c.schedulers, &seeds_of(c), c.common.slots)?;
    for p in &points {
        match axis {
            SweepAxis::SnrDb(_) => println!("snr {} dB", p.value),
            SweepAxis::Users(_) => println!("{} users", p.value),
        }
        print_table(&p.table);
    }
    if let Some(out) = &c.common.out {
        let format = output_format(&c.common, out);
        for p in &points {
            let path = point_path(out, &axis, p.value);
            let records: Vec<MetricsRecord> = p.table.records().cloned().collect();
            io::write_metrics(&records, &path, format, c.common.append)?;
            eprintln!("wrote {} record(s) to {}", records.len(), path.display());
        }
    }
    Ok(())
}

/// `runs.csv` at 12 dB → `runs-snr12.csv`; at 4 users → `runs-k4.csv`.
fn point_path(out: &Path, axis: &SweepAxis, value: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tag = match axis {
        SweepAxis::SnrDb(_) => format!("snr{value}"),
        SweepAxis::Users(_) => format!("k{value}"),
    };
    let name = match out.extension() {
        Some(e) => format!("{stem}-{tag}.{}", e.to_string_lossy()),
        None => format!("{stem}-{tag}"),
    };
    out.with_file_name(name)
}

fn oracle(args: OracleArgs) -> Result<()> {
    let config = match &args.config {
        Some(p) => io::parse_config(p)?,
        None => SimConfig::tiny(2, 1, 2, 2),
    };
    let started = Instant::now();
    let grid = PowerGrid::geometric(&config);
    let opts = DualOptions {
        max_iters: args.iters,
        step: args.step,
        ..DualOptions::default()
    };
    let dual = dual_ascent(&config, &grid, opts)?;
    let cmdp = ofdma_sched::oracle::build_cmdp(&config, &grid, &dual.gamma_star, ofdma_sched::oracle::Restriction::None)?;
    let residual = bellman_span_residual(&cmdp, &dual.solution);
    println!(
        "{} states, {} actions; dual ascent {} after {} iterations ({:.2} s)",
        cmdp.num_states(),
        cmdp.actions().len(),
        if dual.converged { "converged" } else { "stopped" },
        dual.iterations,
        started.elapsed().as_secs_f64()
    );
    println!("  average cost theta {:.6}, span residual {:.3e}, Q range {:.4}", dual.solution.theta, residual, dual.solution.q_range());
    let metrics = dual.randomized.as_ref().map_or(&dual.metrics, |(_, m)| m);
    println!("  user  gamma_bar  gamma_under  E[Q]     power    budget   drop     budget");
    for (k, g) in dual.gamma_star.iter().enumerate() {
        println!(
            "  {:>4}  {:>9.4}  {:>11.4}  {:>7.4}  {:>7.3}  {:>7.3}  {:>7.4}  {:>7.4}",
            k,
            g.gamma_bar,
            g.gamma_under,
            metrics.avg_queue[k],
            metrics.avg_power[k],
            config.power_budget(k),
            metrics.drop_rate[k],
            config.users[k].drop_budget
        );
    }
    if dual.randomized.is_some() {
        println!("  (a state-wise mixture of two deterministic policies meets the binding constraint)");
    }
    if args.slots > 0 {
        let mut ep = Episode::new(&config, SchedulerKind::OraclePolicy, EpisodeOptions::with_seed(args.seed))?;
        ep.run(args.slots)?;
        print_record(&ep.finish().0);
    }
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&dual)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, outcome: Result<String>) {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                self.failures += 1;
                println!("FAIL  {name}: {e:#}");
            }
        }
    }
}

fn validate(args: ValidateArgs) -> Result<bool> {
    let mut suite = Suite { failures: 0 };
    let config = match &args.config {
        Some(p) => {
            let c = io::parse_config(p);
            suite.check("config", c.as_ref().map(|_| format!("{} parses and validates", p.display())).map_err(|e| anyhow::anyhow!("{e}")));
            match c {
                Ok(c) => c,
                Err(_) => return Ok(false),
            }
        }
        None => SimConfig::reference(),
    };

    suite.check("config round trip", (|| {
        let text = io::config_to_toml(&config)?;
        let back = io::parse_config_str(&text, Path::new("<round trip>"))?;
        if back != config {
            bail!("re-parsed config differs");
        }
        Ok(format!("{} bytes of TOML", text.len()))
    })());

    suite.check("water-filling", (|| {
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                for l in 0..10 {
                    let w = WaterLevelParams::new(0.1 + 5.0 * i as f64, 0.05 + 0.3 * j as f64, config.subbands, 0.3)?;
                    let g = 0.01 + 0.8 * l as f64;
                    let p = waterfill_power(true, g, &w)?;
                    let value = |p: f64| w.marginal_value() * (g * p).ln_1p() - w.gamma_bar * p;
                    let top = 2.0 * w.level.max(1e-9);
                    let best = (0..=10_000)
                        .map(|t| value(top * t as f64 / 10_000.0))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let gap = (best - value(p)) / best.abs().max(1.0);
                    worst = worst.max(gap);
                }
            }
        }
        if worst > 1e-6 {
            bail!("grid beats the closed form by {worst:e}");
        }
        Ok(format!("1000 tuples against a 10001-point grid, worst gap {worst:.1e}"))
    })());

    suite.check("tiny oracle", (|| {
        let tiny = SimConfig::tiny(2, 1, 2, 2);
        let grid = PowerGrid::geometric(&tiny);
        let t = Instant::now();
        let dual = dual_ascent(&tiny, &grid, DualOptions::default())?;
        let cmdp = ofdma_sched::oracle::build_cmdp(&tiny, &grid, &dual.gamma_star, ofdma_sched::oracle::Restriction::None)?;
        let r = bellman_span_residual(&cmdp, &dual.solution);
        if r > 1e-8 {
            bail!("span residual {r:e}");
        }
        Ok(format!("span residual {r:.2e} in {:.2} s", t.elapsed().as_secs_f64()))
    })());

    let short = 3_000u64.max(config.warmup + 1_000);
    suite.check("determinism and resume", (|| {
        for kind in [SchedulerKind::Proposed, SchedulerKind::Mlwdf, SchedulerKind::CsitOnly, SchedulerKind::RoundRobin] {
            let opts = EpisodeOptions::with_seed(args.seed);
            let mut a = Episode::new(&config, kind, opts.clone())?;
            a.run(short)?;
            let mut b = Episode::new(&config, kind, opts.clone())?;
            b.run(short / 2)?;
            let cp = Checkpoint::new(&config, opts, b.snapshot());
            let text = serde_json::to_string(&cp)?;
            let cp: Checkpoint = serde_json::from_str(&text)?;
            cp.verify(Some(&config))?;
            let mut c = Episode::restore(&config, cp.options, cp.snapshot)?;
            c.run(short - short / 2)?;
            if a.finish() != c.finish() {
                bail!("{kind}: resumed run differs");
            }
        }
        Ok(format!("{short}-slot runs bit-identical after resume"))
    })());

    suite.check("metrics invariants", (|| {
        let mut ep = Episode::new(&config, SchedulerKind::Proposed, EpisodeOptions::with_seed(args.seed))?;
        ep.run(short)?;
        let (m, _) = ep.finish();
        for u in &m.users {
            if u.histogram.iter().sum::<u64>() != m.slots {
                bail!("user {} histogram does not sum to {}", u.user, m.slots);
            }
            for (name, v) in [("drop", u.drop_rate), ("overflow", u.overflow_frac), ("idle", m.idle_subband_frac)] {
                if !(0.0..=1.0).contains(&v) {
                    bail!("user {} {name} {v} outside [0, 1]", u.user);
                }
            }
            if u.avg_power_w < 0.0 {
                bail!("negative power");
            }
        }
        Ok(format!("{} measured slots", m.slots))
    })());

    println!("{} failure(s)", suite.failures);
    Ok(suite.failures == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Sweep(a) => run_sweep(a).map(|_| true),
        Command::Oracle(a) => oracle(a).map(|_| true),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
