use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use doubleq::bounds::{evaluate_bounds, BoundsRequest};
use doubleq::harness::{
    covering_experiment, overestimation_probe, run_ensemble, Experiment, ExperimentConfig, RunOptions,
};
use doubleq::harness::trace::run_trial;

#[derive(Parser)]
#[command(name = "doubleq", version, about = "Double Q-learning experiments and finite-time bound evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute Q* for the config's MDP.
    Oracle(Common),
    /// Evaluate every bound quantity for a parameter file.
    Bounds(Common),
    /// One seeded trial; writes its report and trace CSV.
    Run(RunArgs),
    /// A seed ensemble with per-block envelope checks.
    Ensemble(RunArgs),
    /// Measure the covering number of asynchronous runs.
    Covering(RunArgs),
    /// Compare greedy-value bias of vanilla and double Q-learning.
    Overestimate(RunArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; reports go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Half-open `N..M`, or inclusive `N..=M`.
    #[arg(long, value_parser = parse_seed_range)]
    seeds: Option<SeedRange>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long, value_enum)]
    trackers: Option<Toggle>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Clone)]
struct SeedRange(Vec<u64>);

fn parse_seed_range(s: &str) -> std::result::Result<SeedRange, String> {
    let (lo, hi, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected N..M or N..=M, got {s:?}"));
    };
    let lo: u64 = lo.trim().parse().map_err(|e| format!("bad range start {lo:?}: {e}"))?;
    let hi: u64 = hi.trim().parse().map_err(|e| format!("bad range end {hi:?}: {e}"))?;
    let seeds: Vec<u64> = if inclusive { (lo..=hi).collect() } else { (lo..hi).collect() };
    if seeds.is_empty() {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(SeedRange(seeds))
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn base_dir(path: &Path) -> Option<&Path> {
    path.parent().filter(|p| !p.as_os_str().is_empty())
}

fn emit(out: Option<&Path>, name: &str, json: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{json}").context("writing to stdout")?;
        }
    }
    Ok(())
}

/// Applies command-line overrides and resolves the experiment.
fn prepare(args: &RunArgs) -> Result<(Experiment, Vec<u64>)> {
    let path = &args.common.config;
    let mut cfg = read_config(path)?;
    if let Some(k) = args.stride {
        cfg.stride = Some(k);
    }
    if let Some(t) = args.trackers {
        cfg.trackers = matches!(t, Toggle::On);
    }
    let seeds = match (&args.seeds, args.seed) {
        (Some(s), _) => s.0.clone(),
        (None, Some(s)) => vec![s],
        (None, None) => cfg.seeds.seeds(),
    };
    let exp = Experiment::new(&cfg, base_dir(path))?;
    Ok((exp, seeds))
}

fn cmd_oracle(c: &Common) -> Result<bool> {
    let cfg = read_config(&c.config)?;
    let mdp = cfg.mdp.build(base_dir(&c.config))?;
    let q = mdp.optimal_q(cfg.oracle_tol)?;
    let rows: Vec<&[f64]> = (0..q.n_states()).map(|s| q.row(s)).collect();
    let doc = serde_json::json!({
        "schema_version": 1,
        "tol": cfg.oracle_tol,
        "gamma": mdp.gamma(),
        "n_states": mdp.n_states(),
        "n_actions": mdp.n_actions(),
        "q_star": rows,
    });
    emit(c.out.as_deref(), "oracle.json", &serde_json::to_string_pretty(&doc)?)?;
    Ok(true)
}

fn cmd_bounds(c: &Common) -> Result<bool> {
    let text = fs::read_to_string(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    let req: BoundsRequest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", c.config.display()))?;
    let report = evaluate_bounds(&req)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit(c.out.as_deref(), "bounds.json", &report.to_json())?;
    Ok(true)
}

fn cmd_ensemble(args: &RunArgs, single: bool) -> Result<bool> {
    let (exp, mut seeds) = prepare(args)?;
    if single {
        seeds.truncate(1);
    }
    let out = args.common.out.as_deref();
    let report = run_ensemble(&exp, &seeds, &RunOptions { parallel: args.parallel, trace_dir: None })?;
    if single {
        if let Some(dir) = out {
            let seed = seeds[0];
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("trace_{seed}.csv"));
            run_trial(&exp, seed)?.write_csv_file(&path)?;
            eprintln!("wrote {}", path.display());
        }
    }
    for c in &report.checks {
        eprintln!("{} {:?}: {}", if c.passed { "PASS" } else { "FAIL" }, c.kind, c.detail);
    }
    emit(out, "report.json", &report.to_json())?;
    Ok(report.passed)
}

fn cmd_covering(args: &RunArgs) -> Result<bool> {
    let (exp, seeds) = prepare(args)?;
    let report = covering_experiment(&exp, &seeds, args.parallel)?;
    eprintln!("measured covering number: {:?}", report.covering_l);
    emit(args.common.out.as_deref(), "covering.json", &report.to_json())?;
    Ok(report.passed)
}

fn cmd_overestimate(args: &RunArgs) -> Result<bool> {
    let (exp, seeds) = prepare(args)?;
    if seeds.len() < 2 {
        bail!("the overestimation probe needs at least two seeds");
    }
    let report = overestimation_probe(&exp, &seeds, args.parallel)?;
    eprintln!(
        "vanilla bias {:.4} ± {:.4}, double bias {:.4} ± {:.4}",
        report.vanilla.mean, report.vanilla.std_err, report.double.mean, report.double.std_err
    );
    emit(args.common.out.as_deref(), "overestimate.json", &report.to_json())?;
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Oracle(c) => cmd_oracle(c),
        Cmd::Bounds(c) => cmd_bounds(c),
        Cmd::Run(a) => cmd_ensemble(a, true),
        Cmd::Ensemble(a) => cmd_ensemble(a, false),
        Cmd::Covering(a) => cmd_covering(a),
        Cmd::Overestimate(a) => cmd_overestimate(a),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
