//! Seed ensembles: per-trial summaries, aggregate rates and gating checks.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CheckKind, Experiment, ExperimentConfig, SeedSpec};
use super::counts::{split_within_three_sd, update_counts, BlockCount};
use super::covering::{measure_covering, visit_stream, Covering, CoveringNumber};
use super::envelopes::{check_envelopes, EnvelopeMode};
use super::trace::{run_trial, TrialTrace};
use super::trackers::{SandwichSummary, CHECK_TOL, IDENTITY_TOL};
use crate::error::{Error, Result};
use crate::learners::Algorithm;
use crate::theory::DerivedConstants;

pub const SCHEMA_VERSION: u32 = 1;

/// Required rate of seeds inside the `3 sqrt(T/4)` band around `T/2`.
pub const SPLIT_RATE: f64 = 0.99;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses rayon's default.
    pub parallel: usize,
    /// Directory for one `trace_<seed>.csv` per trial.
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub final_err_a: f64,
    pub final_ok: bool,
    pub max_table_norm: f64,
    pub max_err: f64,
    pub bounded: bool,
    pub envelope_g: Option<Vec<bool>>,
    pub envelope_sigma_d: Option<Vec<bool>>,
    pub envelope_r_d: Option<Vec<bool>>,
    pub a_updates: u64,
    pub split_ok: Option<bool>,
    pub blocks: Option<Vec<BlockCount>>,
    pub sandwich: Option<SandwichSummary>,
    pub covering: Option<Covering>,
}

impl TrialSummary {
    pub fn g_pass(&self) -> Option<bool> {
        self.envelope_g.as_ref().map(|v| v.iter().all(|&x| x))
    }
    pub fn sigma_d_pass(&self) -> Option<bool> {
        self.envelope_sigma_d.as_ref().map(|v| v.iter().all(|&x| x))
    }
    pub fn r_d_pass(&self) -> Option<bool> {
        self.envelope_r_d.as_ref().map(|v| v.iter().all(|&x| x))
    }
}

/// Summarises a trace against the experiment's schedule and targets.
pub fn summarize_trial(exp: &Experiment, trace: &TrialTrace) -> Result<TrialSummary> {
    let consts = &exp.consts;
    let double = exp.config.algorithm.is_double();
    let bounded = trace.max_table_norm <= consts.v_max / 2.0 + IDENTITY_TOL && trace.max_err <= consts.v_max + IDENTITY_TOL;
    let (mut env_g, mut env_sd, mut env_rd, mut blocks) = (None, None, None, None);
    // an auto-fitted schedule may not fit a single block into a short horizon
    let fitted_short = exp.config.schedule.n_blocks.is_none()
        && exp.schedule.as_ref().is_some_and(|s| s.end() > trace.last_t() + 1);
    if let Some(sched) = exp.schedule.as_ref().filter(|_| !fitted_short) {
        if double {
            env_g = Some(check_envelopes(trace, sched, consts, EnvelopeMode::UbaVsG)?);
            env_sd = Some(check_envelopes(trace, sched, consts, EnvelopeMode::UbaVsSigmaD)?);
            blocks = Some(update_counts(trace, sched, exp.config.schedule.kappa).blocks);
        }
        env_rd = Some(check_envelopes(trace, sched, consts, EnvelopeMode::RVsD)?);
    }
    let a_updates = trace.total_a_updates();
    let covering = if exp.config.algorithm == Algorithm::AsyncDouble && trace.stride == 1 && trace.iterations > 0 {
        Some(measure_covering(&visit_stream(trace, exp.mdp.n_actions())?, exp.mdp.n_pairs())?)
    } else {
        None
    };
    Ok(TrialSummary {
        seed: trace.seed,
        final_err_a: trace.final_err_a,
        final_ok: trace.final_err_a <= exp.config.epsilon,
        max_table_norm: trace.max_table_norm,
        max_err: trace.max_err,
        bounded,
        envelope_g: env_g,
        envelope_sigma_d: env_sd,
        envelope_r_d: env_rd,
        a_updates,
        split_ok: double.then(|| split_within_three_sd(a_updates, trace.iterations)),
        blocks,
        sandwich: trace.sandwich.clone(),
        covering,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub constants: DerivedConstants,
    pub c: Option<f64>,
    pub covering_l: Option<u64>,
    pub iterations: u64,
    pub stride: u64,
    pub boundaries: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_seeds: usize,
    pub final_success_rate: f64,
    pub mean_final_err: f64,
    pub max_final_err: f64,
    pub unbounded_seeds: usize,
    pub g_violation_rate: Option<f64>,
    pub sigma_d_violation_rate: Option<f64>,
    pub r_d_violation_rate: Option<f64>,
    /// Every seed passing all G-envelopes also passes all sigma-D envelopes.
    pub containment: Option<bool>,
    pub split_rate: Option<f64>,
    pub block_pairs: usize,
    pub block_pass_rate: Option<f64>,
    pub sandwich_checked: u64,
    pub sandwich_violations: u64,
    pub sandwich_max_excess: Option<f64>,
    pub drift_excess: Option<f64>,
    pub recursion_residual: Option<f64>,
    pub covering_l: Option<CoveringNumber>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub kind: CheckKind,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub derived: Derived,
    pub trials: Vec<TrialSummary>,
    pub summary: EnsembleSummary,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl EnsembleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation cannot fail")
    }
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

fn fraction<F: Fn(&TrialSummary) -> Option<bool>>(trials: &[&TrialSummary], f: F) -> Option<f64> {
    let vals: Vec<bool> = trials.iter().filter_map(|t| f(t)).collect();
    (!vals.is_empty()).then(|| rate(vals.iter().filter(|&&x| x).count(), vals.len()))
}

/// Order-independent aggregates; trials are sorted by seed before summing.
pub fn aggregate(trials: &[TrialSummary]) -> EnsembleSummary {
    let mut sorted: Vec<&TrialSummary> = trials.iter().collect();
    sorted.sort_by_key(|t| t.seed);
    let n = sorted.len();
    let mut mean = 0.0;
    for t in &sorted {
        mean += t.final_err_a;
    }
    mean /= n.max(1) as f64;
    let block_flags: Vec<bool> =
        sorted.iter().flat_map(|t| t.blocks.iter().flatten().map(|b| b.pass)).collect();
    let sandwiches: Vec<&SandwichSummary> = sorted.iter().filter_map(|t| t.sandwich.as_ref()).collect();
    let fold = |f: fn(&SandwichSummary) -> f64| {
        sandwiches.iter().map(|s| f(s)).fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    };
    let containment = sorted
        .iter()
        .map(|t| t.g_pass().zip(t.sigma_d_pass()))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().all(|&(g, sd)| !g || sd));
    let coverings: Vec<CoveringNumber> = sorted.iter().filter_map(|t| t.covering.map(|c| c.l)).collect();
    let covering_l = (!coverings.is_empty()).then(|| {
        coverings.iter().try_fold(0u64, |m, c| c.finite().map(|l| m.max(l))).map_or(CoveringNumber::Infinite, CoveringNumber::Finite)
    });
    EnsembleSummary {
        n_seeds: n,
        final_success_rate: rate(sorted.iter().filter(|t| t.final_ok).count(), n),
        mean_final_err: mean,
        max_final_err: sorted.iter().map(|t| t.final_err_a).fold(0.0, f64::max),
        unbounded_seeds: sorted.iter().filter(|t| !t.bounded).count(),
        g_violation_rate: fraction(&sorted, |t| t.g_pass().map(|p| !p)),
        sigma_d_violation_rate: fraction(&sorted, |t| t.sigma_d_pass().map(|p| !p)),
        r_d_violation_rate: fraction(&sorted, |t| t.r_d_pass().map(|p| !p)),
        containment,
        split_rate: fraction(&sorted, |t| t.split_ok),
        block_pairs: block_flags.len(),
        block_pass_rate: (!block_flags.is_empty())
            .then(|| rate(block_flags.iter().filter(|&&x| x).count(), block_flags.len())),
        sandwich_checked: sandwiches.iter().map(|s| s.u_checked + s.r_checked).sum(),
        sandwich_violations: sandwiches.iter().map(|s| s.violations()).sum(),
        sandwich_max_excess: fold(|s| s.max_excess),
        drift_excess: fold(|s| s.drift_excess),
        recursion_residual: fold(|s| s.u_recursion_residual.max(s.r_recursion_residual)),
        covering_l,
    }
}

/// Gating checks derived from the summary; a check is only listed when the
/// run produced the data it needs.
pub fn evaluate_checks(config: &ExperimentConfig, s: &EnsembleSummary) -> Vec<Check> {
    let delta = config.delta;
    let mut out = Vec::new();
    let mut push = |kind, passed, detail: String| out.push(Check { kind, passed, detail });
    push(
        CheckKind::Boundedness,
        s.unbounded_seeds == 0,
        format!("{} of {} seeds left the V_max bounds", s.unbounded_seeds, s.n_seeds),
    );
    push(
        CheckKind::FinalError,
        s.final_success_rate >= 1.0 - delta,
        format!("success rate {:.4} vs required {:.4} (epsilon {})", s.final_success_rate, 1.0 - delta, config.epsilon),
    );
    if let Some(r) = s.g_violation_rate {
        push(CheckKind::EnvelopeG, r <= delta, format!("G-envelope violation rate {r:.4} vs delta {delta}"));
    }
    if let Some(c) = s.containment {
        push(CheckKind::Containment, c, "G-passing seeds within sigma-D-passing seeds".into());
    }
    if let Some(r) = s.block_pass_rate {
        push(
            CheckKind::UpdateBlocks,
            r >= 1.0 - delta,
            format!("{} (seed, block) pairs, pass rate {r:.4} vs {:.4}", s.block_pairs, 1.0 - delta),
        );
    }
    if let Some(r) = s.split_rate {
        push(CheckKind::UpdateSplit, r >= SPLIT_RATE, format!("split rate {r:.4} vs {SPLIT_RATE}"));
    }
    if s.sandwich_checked > 0 || s.drift_excess.is_some() {
        let drift = s.drift_excess.unwrap_or(f64::NEG_INFINITY);
        let resid = s.recursion_residual.unwrap_or(0.0);
        push(
            CheckKind::Sandwich,
            s.sandwich_violations == 0 && drift <= IDENTITY_TOL && resid <= CHECK_TOL,
            format!(
                "{} violations over {} checked steps, drift excess {drift:.3e}, recursion residual {resid:.3e}",
                s.sandwich_violations, s.sandwich_checked
            ),
        );
    }
    if let Some(l) = s.covering_l {
        push(CheckKind::Covering, l.finite().is_some(), format!("measured covering number {l:?}"));
    }
    if let Some(kinds) = &config.checks {
        out.retain(|c| kinds.contains(&c.kind));
    }
    out
}

/// Runs every seed, in parallel when asked, and aggregates the results.
pub fn run_ensemble(exp: &Experiment, seeds: &[u64], opts: &RunOptions) -> Result<EnsembleReport> {
    if seeds.is_empty() {
        return Err(Error::Config("seeds: at least one seed is required".into()));
    }
    if let Some(dir) = &opts.trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let one = |seed: u64| -> Result<TrialSummary> {
        let wrap = |e: Error| Error::Trial { seed, cause: Box::new(e) };
        let trace = run_trial(exp, seed).map_err(wrap)?;
        if let Some(dir) = &opts.trace_dir {
            trace.write_csv_file(&dir.join(format!("trace_{seed}.csv"))).map_err(wrap)?;
        }
        summarize_trial(exp, &trace).map_err(wrap)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel)
        .build()
        .map_err(|e| Error::Config(format!("parallel: {e}")))?;
    let trials: Vec<TrialSummary> = pool.install(|| seeds.par_iter().map(|&s| one(s)).collect::<Result<_>>())?;
    Ok(report_from_trials(exp, seeds, trials))
}

pub fn report_from_trials(exp: &Experiment, seeds: &[u64], trials: Vec<TrialSummary>) -> EnsembleReport {
    let mut config = exp.config.clone();
    config.seeds = SeedSpec::List(seeds.to_vec());
    let summary = aggregate(&trials);
    let checks = evaluate_checks(&config, &summary);
    let passed = checks.iter().all(|c| c.passed);
    EnsembleReport {
        schema_version: SCHEMA_VERSION,
        config,
        derived: Derived {
            constants: exp.consts,
            c: exp.c.is_finite().then_some(exp.c),
            covering_l: exp.covering_l,
            iterations: exp.iterations,
            stride: exp.stride,
            boundaries: exp.schedule.as_ref().map(|s| s.boundaries.clone()),
        },
        trials,
        summary,
        checks,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Horizon, MdpSource, RandomMdpSpec};

    fn exp() -> Experiment {
        let mut cfg = ExperimentConfig::new(MdpSource::Random(RandomMdpSpec {
            n_states: 3,
            n_actions: 2,
            gamma: 0.5,
            r_max: 1.0,
            noise_halfwidth: 0.5,
            seed: 2,
        }));
        cfg.horizon = Horizon::Iterations(4000);
        cfg.schedule.tau_1 = 20;
        cfg.schedule.c_conditions = Some(vec![crate::theory::CCondition::SyncG]);
        Experiment::new(&cfg, None).unwrap()
    }

    #[test]
    fn single_seed_matches_trial() {
        let e = exp();
        let rep = run_ensemble(&e, &[7], &RunOptions::default()).unwrap();
        let direct = summarize_trial(&e, &run_trial(&e, 7).unwrap()).unwrap();
        assert_eq!(rep.trials, vec![direct]);
        assert_eq!(rep.summary.n_seeds, 1);
    }

    #[test]
    fn permutation_and_parallelism_invariant() {
        let e = exp();
        let a = run_ensemble(&e, &[1, 2, 3, 4, 5], &RunOptions { parallel: 1, trace_dir: None }).unwrap();
        let b = run_ensemble(&e, &[5, 3, 1, 4, 2], &RunOptions { parallel: 3, trace_dir: None }).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.checks, b.checks);
        let c = run_ensemble(&e, &[1, 2, 3, 4, 5], &RunOptions { parallel: 4, trace_dir: None }).unwrap();
        assert_eq!(a.to_json(), c.to_json());
    }

    #[test]
    fn rates_are_probabilities() {
        let rep = run_ensemble(&exp(), &[1, 2, 3], &RunOptions::default()).unwrap();
        let s = &rep.summary;
        for r in [Some(s.final_success_rate), s.g_violation_rate, s.sigma_d_violation_rate, s.split_rate, s.block_pass_rate]
            .into_iter()
            .flatten()
        {
            assert!((0.0..=1.0).contains(&r));
        }
        assert_eq!(rep.trials.len(), 3);
    }

    #[test]
    fn echoed_config_parses_back() {
        let rep = run_ensemble(&exp(), &[1, 2], &RunOptions::default()).unwrap();
        let text = rep.to_json();
        let back: EnsembleReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config, rep.config);
        let again = ExperimentConfig::from_json(&serde_json::to_string(&back.config).unwrap()).unwrap();
        assert_eq!(again, rep.config);
    }

    #[test]
    fn check_selection_filters() {
        let mut e = exp();
        e.config.checks = Some(vec![CheckKind::Boundedness]);
        let rep = run_ensemble(&e, &[1], &RunOptions::default()).unwrap();
        assert_eq!(rep.checks.len(), 1);
        assert_eq!(rep.checks[0].kind, CheckKind::Boundedness);
    }

    #[test]
    fn trace_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { parallel: 2, trace_dir: Some(dir.path().to_path_buf()) };
        run_ensemble(&exp(), &[3, 4], &opts).unwrap();
        assert!(dir.path().join("trace_3.csv").exists());
        assert!(dir.path().join("trace_4.csv").exists());
    }
}
