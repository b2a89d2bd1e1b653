//! Experiment configuration and its validated, resolved form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{Algorithm, Exploration, LearningRate};
use crate::mdp::{Mdp, QTable};
use crate::theory::{
    c_min_compose, derive_constants, epoch_schedule, m_star, step_coeff, validate_kappa_slack, BlockSchedule,
    CCondition, DerivedConstants, TheoryParams, DEFAULT_DELTA_SLACK, DEFAULT_KAPPA, DEFAULT_OMEGA,
};

/// Traces longer than this many iterations are thinned by default.
pub const FULL_TRACE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    /// JSON MDP file, relative to the config file's directory.
    Path(PathBuf),
    Inline(Mdp),
    Random(RandomMdpSpec),
    Chain { gamma: f64 },
    FanOut { arms: usize, gamma: f64, noise_halfwidth: f64 },
    SingleState { reward: f64, gamma: f64, #[serde(default)] noise_halfwidth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    #[serde(default = "one")]
    pub r_max: f64,
    #[serde(default)]
    pub noise_halfwidth: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MdpSource {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Mdp> {
        match self {
            MdpSource::Path(p) => {
                let path = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("mdp.path {}: {e}", path.display())))?;
                Mdp::from_json(&text)
            }
            MdpSource::Inline(m) => Ok(m.clone()),
            MdpSource::Random(r) => Mdp::random(r.n_states, r.n_actions, r.gamma, r.r_max, r.noise_halfwidth, r.seed),
            MdpSource::Chain { gamma } => Mdp::two_state_chain(*gamma),
            MdpSource::FanOut { arms, gamma, noise_halfwidth } => Mdp::fan_out(*arms, *gamma, *noise_halfwidth),
            MdpSource::SingleState { reward, gamma, noise_halfwidth } => {
                Mdp::single_state(*reward, *gamma, *noise_halfwidth)
            }
        }
    }
}

/// Run length: a fixed iteration count, or the end of the epoch schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    Iterations(u64),
    #[default]
    ScheduleEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_tau_1")]
    pub tau_1: u64,
    /// Explicit `c`; when absent, `c_factor` times the largest `c_min` among `c_conditions`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "default_c_factor")]
    pub c_factor: f64,
    /// Defaults to both conditions of the run's setting (sync or async).
    #[serde(default)]
    pub c_conditions: Option<Vec<CCondition>>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_delta_slack")]
    pub delta_slack: f64,
    /// Defaults to `m*` for the configured epsilon when the horizon is the schedule end.
    #[serde(default)]
    pub n_blocks: Option<usize>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            tau_1: default_tau_1(),
            c: None,
            c_factor: default_c_factor(),
            c_conditions: None,
            kappa: DEFAULT_KAPPA,
            delta_slack: DEFAULT_DELTA_SLACK,
            n_blocks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { base: u64, count: u64 },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Range { base: 0, count: 1 }
    }
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { base, count } => (*base..base + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default)]
    pub horizon: Horizon,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub exploration: Exploration,
    /// Covering number for asynchronous schedules; round-robin defaults to `|S||A|`.
    #[serde(default)]
    pub covering_l: Option<u64>,
    #[serde(default)]
    pub trackers: bool,
    /// Trace thinning; defaults to 1 up to a million iterations, `T / 10^6` beyond.
    #[serde(default)]
    pub stride: Option<u64>,
    #[serde(default = "default_oracle_tol")]
    pub oracle_tol: f64,
    /// State whose greedy value the overestimation probe reports.
    #[serde(default)]
    pub probe_state: usize,
    /// Checks that decide the exit status; all applicable ones when absent.
    #[serde(default)]
    pub checks: Option<Vec<CheckKind>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    Boundedness,
    FinalError,
    EnvelopeG,
    Containment,
    UpdateBlocks,
    UpdateSplit,
    Sandwich,
    Covering,
}

fn one() -> f64 {
    1.0
}
fn default_tau_1() -> u64 {
    200
}
fn default_c_factor() -> f64 {
    1.05
}
fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_delta_slack() -> f64 {
    DEFAULT_DELTA_SLACK
}
fn default_algorithm() -> Algorithm {
    Algorithm::SyncDouble
}
fn default_omega() -> f64 {
    DEFAULT_OMEGA
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.05
}
fn default_oracle_tol() -> f64 {
    1e-10
}

impl ExperimentConfig {
    /// Minimal config around an MDP source; everything else at defaults.
    pub fn new(mdp: MdpSource) -> Self {
        ExperimentConfig {
            mdp,
            algorithm: default_algorithm(),
            omega: default_omega(),
            horizon: Horizon::default(),
            schedule: ScheduleSpec::default(),
            epsilon: default_epsilon(),
            delta: default_delta(),
            seeds: SeedSpec::default(),
            exploration: Exploration::default(),
            covering_l: None,
            trackers: false,
            stride: None,
            oracle_tol: default_oracle_tol(),
            probe_state: 0,
            checks: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialisation cannot fail")
    }
}

/// A validated config with its MDP, oracle and schedule materialised.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub mdp: Mdp,
    pub q_star: QTable,
    pub lr: LearningRate,
    pub consts: DerivedConstants,
    /// `c` actually used by the schedule.
    pub c: f64,
    pub covering_l: Option<u64>,
    /// Epoch schedule; absent for asynchronous runs without a covering number.
    pub schedule: Option<BlockSchedule>,
    pub iterations: u64,
    pub stride: u64,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<Self> {
        let cfg = config.clone();
        let mdp = cfg.mdp.build(base_dir)?;
        let lr = LearningRate::new(cfg.omega).map_err(|e| Error::Config(format!("omega: {e}")))?;
        if !(cfg.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon: must be positive, got {}", cfg.epsilon)));
        }
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(Error::Config(format!("delta: must lie in (0, 1), got {}", cfg.delta)));
        }
        cfg.exploration.validate().map_err(|e| Error::Config(format!("exploration: {e}")))?;
        if cfg.seeds.seeds().is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if cfg.stride == Some(0) {
            return Err(Error::Config("stride: must be at least 1".into()));
        }
        if cfg.probe_state >= mdp.n_states() {
            return Err(Error::Config(format!("probe_state: {} is not a state", cfg.probe_state)));
        }
        let q_star = mdp.optimal_q(cfg.oracle_tol).map_err(|e| Error::Config(format!("oracle_tol: {e}")))?;
        let consts = derive_constants(mdp.gamma(), mdp.r_max())?;

        let asynchronous = cfg.algorithm == Algorithm::AsyncDouble;
        let covering_l = if asynchronous {
            match (cfg.covering_l, cfg.exploration) {
                (Some(0), _) => return Err(Error::Config("covering_l: must be at least 1".into())),
                (Some(l), _) => Some(l),
                (None, Exploration::RoundRobin) => Some(mdp.n_pairs() as u64),
                (None, _) => None,
            }
        } else {
            Some(1)
        };

        let spec = &cfg.schedule;
        let conditions = spec.c_conditions.clone().unwrap_or_else(|| {
            if asynchronous {
                vec![CCondition::AsyncG, CCondition::AsyncD]
            } else {
                vec![CCondition::SyncG, CCondition::SyncD]
            }
        });
        let strict = asynchronous || conditions.iter().any(|c| *c != CCondition::SyncG);
        validate_kappa_slack(spec.kappa, spec.delta_slack, strict).map_err(|e| Error::Config(format!("schedule.{e}")))?;
        if spec.tau_1 == 0 {
            return Err(Error::Config("schedule.tau_1: must be at least 1".into()));
        }

        let (c, schedule) = match covering_l {
            Some(l) => {
                let c = match spec.c {
                    Some(c) if c > 0.0 => c,
                    Some(c) => return Err(Error::Config(format!("schedule.c: must be positive, got {c}"))),
                    None => {
                        spec.c_factor
                            * c_min_compose(&conditions, spec.kappa, spec.delta_slack, spec.tau_1 as f64, cfg.omega, l)
                                .map_err(|e| Error::Config(format!("schedule: {e}")))?
                    }
                };
                let step = step_coeff(c, spec.kappa, l);
                let schedule = match cfg.horizon {
                    Horizon::ScheduleEnd => {
                        let n = spec
                            .n_blocks
                            .unwrap_or_else(|| m_star(mdp.gamma(), cfg.epsilon, consts.v_max).max(1) as usize);
                        epoch_schedule(spec.tau_1, step, cfg.omega, n)?
                    }
                    Horizon::Iterations(t) => match spec.n_blocks {
                        Some(n) => epoch_schedule(spec.tau_1, step, cfg.omega, n)?,
                        None => schedule_within(spec.tau_1, step, cfg.omega, t + 1)?,
                    },
                };
                (c, Some(schedule))
            }
            None => (spec.c.unwrap_or(f64::NAN), None),
        };

        let iterations = match (cfg.horizon, &schedule) {
            (Horizon::Iterations(t), _) => t,
            (Horizon::ScheduleEnd, Some(s)) => s.end(),
            (Horizon::ScheduleEnd, None) => {
                return Err(Error::Config(
                    "horizon: the schedule end needs covering_l for asynchronous runs without round-robin".into(),
                ))
            }
        };
        let stride = cfg.stride.unwrap_or(if iterations <= FULL_TRACE_LIMIT {
            1
        } else {
            (iterations / FULL_TRACE_LIMIT).max(1)
        });
        Ok(Experiment { config: cfg, mdp, q_star, lr, consts, c, covering_l, schedule, iterations, stride })
    }

    /// Parameters for the bound evaluations matching this run.
    pub fn theory_params(&self) -> TheoryParams {
        TheoryParams {
            gamma: self.mdp.gamma(),
            epsilon: self.config.epsilon,
            delta: self.config.delta,
            omega: self.config.omega,
            kappa: self.config.schedule.kappa,
            delta_slack: self.config.schedule.delta_slack,
            c: self.c,
            covering_l: self.covering_l.unwrap_or(1),
            r_max: self.mdp.r_max(),
        }
    }
}

/// Longest schedule whose last boundary does not exceed `limit`; a single
/// block if even the second boundary is past it.
fn schedule_within(tau_1: u64, step: f64, omega: f64, limit: u64) -> Result<BlockSchedule> {
    let mut s = epoch_schedule(tau_1, step, omega, 1)?;
    loop {
        let tau = s.end();
        let next = tau + (step * (tau as f64).powf(omega)).ceil() as u64;
        if next > limit {
            return Ok(s);
        }
        s.boundaries.push(next);
    }
}
