//! Seeded Monte-Carlo experiments and their empirical checks.

pub mod config;
pub mod counts;
pub mod covering;
pub mod ensemble;
pub mod envelopes;
pub mod overestimate;
pub mod trace;
pub mod trackers;

pub use config::{CheckKind, Experiment, ExperimentConfig, Horizon, MdpSource, RandomMdpSpec, ScheduleSpec, SeedSpec};
pub use covering::{covering_experiment, CoveringReport};
pub use ensemble::{run_ensemble, EnsembleReport, RunOptions};
pub use overestimate::{overestimation_probe, OverestimateReport};
pub use trace::{run_trial, TraceRecord, TrialTrace};
