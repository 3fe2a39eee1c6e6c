use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use arw_core::blocks::{bernoulli_configuration, colored_stabilize, compare_s_star, BlockLayout, Schedule};
use arw_core::bounds::{estimate_zeta_lower, max_growth_table};
use arw_core::engine::{stabilize, TopplingPolicy, DEFAULT_BUDGET};
use arw_core::error::{ArwError, Result};
use arw_core::harness::{nested_bernoulli, run_experiment, Engine, ExperimentConfig, ExperimentKind};
use arw_core::model::{Configuration, SiteState, Volume};
use arw_core::sampling::{derive_seed, Purpose, SiteStacks, SleepRate};
use arw_core::singleblock::{estimate_single_block_m, mark_statistics, BlockGeometry, XiMode};
use arw_core::verify;

/// Activated random walk simulations on the line and the ring.
#[derive(Debug, Parser)]
#[command(name = "arw", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// Sleep rate; experiments accept a comma-separated grid.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Initial density; a comma-separated list for `ring`.
    #[arg(long, global = true, value_delimiter = ',')]
    zeta: Vec<f64>,
    /// Radius of V_r = {-r..r}; a comma-separated list for experiments.
    #[arg(long, global = true, value_delimiter = ',')]
    r: Vec<u64>,
    /// Block half-width (even).
    #[arg(long = "K", global = true)]
    k: Option<u32>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    samples: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Toppling cap per stabilization.
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    Fifo,
    Leftmost,
    WalkChase,
    Random,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Stabilize one configuration of V_r and print the result.
    Stabilize {
        /// Initial walks as `site:count` pairs; Bernoulli(zeta) if absent.
        #[arg(long, value_delimiter = ',')]
        walks: Vec<String>,
        #[arg(long, value_enum, default_value = "walk-chase")]
        policy: Policy,
    },
    /// Single-block statistics: the M estimate, or mark and drift statistics.
    SingleBlock {
        /// Used to pick K = 2 ceil(delta / sqrt(lambda)) when --K is absent.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 20)]
        ell_max: u64,
        /// Random initial configurations for the worst-case estimate (0 = empty block only).
        #[arg(long, default_value_t = 0)]
        xi_draws: u32,
        /// Report mark statistics and the drift of F instead of M.
        #[arg(long)]
        marks: bool,
    },
    /// Colored block procedure: mass balance and comparison with plain stabilization.
    Blocks,
    /// Bisection for the critical density.
    ZetaC,
    /// Exponential moment of the sleeper count from all-ones starts.
    ExpMoment,
    /// Total activity on the ring.
    Ring {
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<u32>,
        #[arg(long)]
        activity_cutoff: Option<f64>,
    },
    /// Lower bound 1/E Z_N and the exact growth of E Z_n.
    LowerBound {
        /// Largest n for the exact table of E Z_n / sqrt(n).
        #[arg(long, default_value_t = 64)]
        exact_n: u32,
    },
    /// Run the invariant suites.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("arw: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("arw: {e}");
            ExitCode::from(2)
        }
    }
}

fn one<T: Copy>(v: &[T], name: &str, default: Option<T>) -> Result<T> {
    match (v, default) {
        ([x], _) => Ok(*x),
        ([], Some(d)) => Ok(d),
        ([], None) => Err(ArwError::config(name, "required")),
        _ => Err(ArwError::config(name, "expects a single value here")),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{name}.json")), format!("{text}\n"))?;
    }
    print_json(&text)
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_json(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let c = &cli.common;
    let seed = c.seed.unwrap_or(0);
    let budget = c.budget.unwrap_or(DEFAULT_BUDGET);
    let out = c.out.as_deref();
    match &cli.cmd {
        Cmd::Stabilize { walks, policy } => {
            let rate = SleepRate::new(one(&c.lambda, "lambda", None)?)?;
            let r = one(&c.r, "r", None)?;
            let vol = Volume::centered(r);
            let cfg = if walks.is_empty() {
                nested_bernoulli(vol, one(&c.zeta, "zeta", None)?, derive_seed(seed, &[r, 0]))
            } else {
                parse_walks(vol, walks)?
            };
            let policy = match policy {
                Policy::Fifo => TopplingPolicy::Fifo,
                Policy::Leftmost => TopplingPolicy::LeftmostFirst,
                Policy::WalkChase => TopplingPolicy::WalkChase,
                Policy::Random => TopplingPolicy::RandomOrder { seed },
            };
            let stacks = SiteStacks::new(rate, seed, vol, Purpose::Stacks);
            let initial = render(&cfg);
            let res = stabilize(cfg, &stacks, policy, budget)?;
            let report = serde_json::json!({
                "lambda": rate.lambda(),
                "r": r,
                "seed": seed,
                "initial": initial,
                "final": render(&res.final_config),
                "sleeping": res.sleeping,
                "left_exits": res.left_exits,
                "right_exits": res.right_exits,
                "topplings": res.odometer.total(),
                "odometer": res.odometer.counts(),
            });
            emit(&report, out, "stabilize")?;
        }
        Cmd::SingleBlock {
            delta,
            ell_max,
            xi_draws,
            marks,
        } => {
            let rate = SleepRate::new(one(&c.lambda, "lambda", None)?)?;
            let geom = match c.k {
                Some(k) => BlockGeometry::new(k)?,
                None => BlockGeometry::from_rate(rate, *delta)?,
            };
            let samples = c.samples.unwrap_or(10_000);
            if *marks {
                let stats = mark_statistics(rate, geom, samples, *ell_max, samples, seed)?;
                emit(&stats, out, "single_block_marks")?;
            } else {
                let mode = match xi_draws {
                    0 => XiMode::Empty,
                    &draws => XiMode::WorstCaseRandom { draws },
                };
                let alpha = c.alpha.unwrap_or(0.05);
                let est = estimate_single_block_m(rate, geom, alpha, mode, *ell_max, samples, seed)?;
                emit(&est, out, "single_block_m")?;
            }
        }
        Cmd::Blocks => {
            let rate = SleepRate::new(one(&c.lambda, "lambda", None)?)?;
            let k = c.k.ok_or_else(|| ArwError::config("K", "required"))?;
            let r = BlockLayout::admissible_r(one(&c.r, "r", None)?, k)?;
            let zeta = one(&c.zeta, "zeta", Some(0.5))?;
            let samples = c.samples.unwrap_or(1000);
            let layout = BlockLayout::new(r, k)?;
            let unbalanced = (0..samples)
                .into_par_iter()
                .map(|i| {
                    let s = derive_seed(seed, &[i]);
                    let eta0 = bernoulli_configuration(layout.volume(), zeta, s);
                    let o = colored_stabilize(&eta0, &layout, rate, s, Schedule::RoundRobin, budget)?;
                    Ok(u64::from(!o.record.is_balanced()))
                })
                .collect::<Result<Vec<u64>>>()?
                .into_iter()
                .sum::<u64>();
            let dominance = compare_s_star(rate, r, k, zeta, samples, derive_seed(seed, &[u64::MAX]))?;
            let report = serde_json::json!({
                "lambda": rate.lambda(),
                "r": r,
                "K": k,
                "n_blocks": layout.n(),
                "sources": layout.sources(),
                "zeta": zeta,
                "samples": samples,
                "unbalanced_samples": unbalanced,
                "dominance": dominance,
            });
            emit(&report, out, "blocks")?;
            return Ok(unbalanced == 0);
        }
        Cmd::ZetaC => run_kind(cli, ExperimentKind::ZetaC, None)?,
        Cmd::ExpMoment => run_kind(cli, ExperimentKind::ExpMoment, None)?,
        Cmd::Ring {
            sizes,
            activity_cutoff,
        } => run_kind(cli, ExperimentKind::Ring, Some((sizes, *activity_cutoff)))?,
        Cmd::LowerBound { exact_n } => {
            let lambdas = if c.lambda.is_empty() {
                vec![0.01, 0.04, 0.16, 0.64]
            } else {
                c.lambda.clone()
            };
            let samples = c.samples.unwrap_or(100_000);
            let bounds = lambdas
                .iter()
                .map(|&l| estimate_zeta_lower(SleepRate::new(l)?, samples, seed))
                .collect::<Result<Vec<_>>>()?;
            let growth = max_growth_table(*exact_n)?;
            let report = serde_json::json!({
                "seed": seed,
                "bounds": bounds,
                "mean_max_over_sqrt_n": growth,
            });
            emit(&report, out, "lower_bound")?;
        }
        Cmd::Verify => {
            let checks = verify::run_all(seed)?;
            emit(&checks, out, "verify")?;
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn run_kind(cli: &Cli, kind: ExperimentKind, ring: Option<(&Vec<u32>, Option<f64>)>) -> Result<()> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_file(path)?;
            if cfg.kind != kind {
                return Err(ArwError::config("kind", format!("config is for {:?}", cfg.kind)));
            }
            cfg
        }
        None => ExperimentConfig::new(kind, Vec::new()),
    };
    if !c.lambda.is_empty() {
        cfg.lambdas = c.lambda.clone();
    }
    if !c.zeta.is_empty() {
        cfg.zetas = Some(c.zeta.clone());
    }
    if !c.r.is_empty() {
        cfg.r_list = Some(c.r.clone());
    }
    if let Some(a) = c.alpha {
        cfg.alpha = Some(a);
    }
    if let Some(s) = c.samples {
        cfg.samples = Some(s);
    }
    if let Some(s) = c.seed {
        cfg.seed = Some(s);
    }
    if let Some(b) = c.budget {
        cfg.budget = Some(b);
    }
    if let Some(o) = &c.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Some((sizes, cutoff)) = ring {
        if !sizes.is_empty() {
            cfg.ring_sizes = Some(sizes.clone());
        }
        if cutoff.is_some() {
            cfg.activity_cutoff = cutoff;
        }
    }
    if cfg.engine.is_none() {
        cfg.engine = Some(Engine::default());
    }
    let resolved = cfg.resolve()?;
    let summary = run_experiment(&resolved)?;
    let report = serde_json::json!({
        "out_dir": resolved.out_dir,
        "csv": summary.csv_path,
        "executed_tasks": summary.executed,
        "summary": summary.summary,
    });
    print_json(&serde_json::to_string_pretty(&report)?)
}

fn parse_walks(vol: Volume, walks: &[String]) -> Result<Configuration> {
    let mut cfg = Configuration::empty(vol);
    for w in walks {
        let bad = || ArwError::config("walks", format!("`{w}` is not site:count"));
        let (site, count) = w.split_once(':').ok_or_else(bad)?;
        let site: i64 = site.trim().parse().map_err(|_| bad())?;
        let count: u32 = count.trim().parse().map_err(|_| bad())?;
        if !vol.contains(site) {
            return Err(ArwError::config("walks", format!("site {site} is outside V_r")));
        }
        for _ in 0..count {
            cfg.add_walk(site);
        }
    }
    Ok(cfg)
}

/// One character per site: `.` empty, `s` sleeping, digit (or `+`) active.
fn render(cfg: &Configuration) -> String {
    cfg.states()
        .iter()
        .map(|s| match *s {
            SiteState::Empty => '.',
            SiteState::Sleeping => 's',
            SiteState::Active(n) if n.get() < 10 => char::from_digit(n.get(), 10).unwrap_or('+'),
            SiteState::Active(_) => '+',
        })
        .collect()
}
