//! Bias of the greedy value at a probe state: vanilla against double Q-learning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, ExperimentConfig, SeedSpec};
use super::trace::run_trial_with_stride;
use crate::error::{Error, Result};
use crate::learners::Algorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    pub algorithm: Algorithm,
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverestimateReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub iterations: u64,
    pub probe_state: usize,
    pub true_value: f64,
    pub noisy: bool,
    pub vanilla: BiasStats,
    pub double: BiasStats,
    /// Vanilla minus double, paired by seed.
    pub difference: BiasStats,
    /// Noisy rewards: vanilla bias above zero and above the double bias, both
    /// by more than three standard errors. Noise-free: both biases within
    /// three standard errors of zero.
    pub passed: bool,
    pub per_seed: Vec<(u64, f64, f64)>,
}

impl OverestimateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation cannot fail")
    }
}

fn stats(algorithm: Algorithm, xs: &[f64]) -> BiasStats {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let std_dev = var.sqrt();
    BiasStats { algorithm, mean, std_dev, std_err: std_dev / n.sqrt() }
}

fn greedy_bias(exp: &Experiment, alg: Algorithm, seed: u64) -> Result<f64> {
    let mut e = exp.clone();
    e.config.algorithm = alg;
    e.config.trackers = false;
    let tr = run_trial_with_stride(&e, seed, e.iterations.max(1))?;
    let s0 = exp.config.probe_state;
    Ok(tr.final_q_a.max(s0) - exp.q_star.max(s0))
}

/// Runs vanilla and synchronous double Q-learning for `exp.iterations` steps on
/// each seed and compares their greedy-value bias at `probe_state`.
pub fn overestimation_probe(exp: &Experiment, seeds: &[u64], parallel: usize) -> Result<OverestimateReport> {
    if seeds.len() < 2 {
        return Err(Error::Config("seeds: the probe needs at least two seeds".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::Config(format!("parallel: {e}")))?;
    let per_seed: Vec<(u64, f64, f64)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let wrap = |e: Error| Error::Trial { seed, cause: Box::new(e) };
                let v = greedy_bias(exp, Algorithm::Vanilla, seed).map_err(wrap)?;
                let d = greedy_bias(exp, Algorithm::SyncDouble, seed).map_err(wrap)?;
                Ok((seed, v, d))
            })
            .collect::<Result<_>>()
    })?;
    let mut sorted = per_seed.clone();
    sorted.sort_by_key(|x| x.0);
    let v: Vec<f64> = sorted.iter().map(|x| x.1).collect();
    let d: Vec<f64> = sorted.iter().map(|x| x.2).collect();
    let diff: Vec<f64> = sorted.iter().map(|x| x.1 - x.2).collect();
    let vanilla = stats(Algorithm::Vanilla, &v);
    let double = stats(Algorithm::SyncDouble, &d);
    let difference = stats(Algorithm::Vanilla, &diff);
    let noisy = exp.mdp.noise_halfwidth() > 0.0;
    let passed = if noisy {
        vanilla.mean > 3.0 * vanilla.std_err && difference.mean > 3.0 * difference.std_err
    } else {
        vanilla.mean.abs() <= 3.0 * vanilla.std_err + 1e-12 && double.mean.abs() <= 3.0 * double.std_err + 1e-12
    };
    let mut config = exp.config.clone();
    config.seeds = SeedSpec::List(seeds.to_vec());
    Ok(OverestimateReport {
        schema_version: super::ensemble::SCHEMA_VERSION,
        config,
        iterations: exp.iterations,
        probe_state: exp.config.probe_state,
        true_value: exp.q_star.max(exp.config.probe_state),
        noisy,
        vanilla,
        double,
        difference,
        passed,
        per_seed,
    })
}
