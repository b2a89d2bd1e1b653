//! Per-block counts of `Q^A` updates.

use serde::{Deserialize, Serialize};

use super::trace::TrialTrace;
use crate::theory::BlockSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCount {
    /// Block `k` covers iterations `[tau_k, tau_{k+1})`.
    pub k: usize,
    pub start: u64,
    pub len: u64,
    pub a_updates: u64,
    /// `(kappa / 2) * len`.
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateCounts {
    /// Complete blocks `k >= 1` inside the run.
    pub blocks: Vec<BlockCount>,
    /// A-updates in `[1, tau_1)`.
    pub before_schedule: u64,
    /// A-updates after the last complete block.
    pub after_schedule: u64,
    pub total: u64,
}

impl UpdateCounts {
    pub fn conserved(&self) -> bool {
        self.blocks.iter().map(|b| b.a_updates).sum::<u64>() + self.before_schedule + self.after_schedule == self.total
    }
}

fn a_updates_in(trace: &TrialTrace, lo: u64, hi: u64) -> u64 {
    let start = trace.record_index(lo);
    trace.records[start..].iter().take_while(|r| r.t < hi).map(|r| r.a_updates).sum()
}

pub fn update_counts(trace: &TrialTrace, schedule: &BlockSchedule, kappa: f64) -> UpdateCounts {
    let end_iter = trace.iterations + 1;
    let mut blocks = Vec::new();
    let tau_1 = schedule.boundaries[0].min(end_iter);
    let before_schedule = a_updates_in(trace, 1, tau_1);
    let mut covered_to = tau_1;
    for k in 1..schedule.boundaries.len() {
        let lo = schedule.boundaries[k - 1];
        let hi = schedule.boundaries[k];
        if hi > end_iter {
            break;
        }
        let a = a_updates_in(trace, lo, hi);
        let len = hi - lo;
        let threshold = kappa / 2.0 * len as f64;
        blocks.push(BlockCount { k, start: lo, len, a_updates: a, threshold, pass: a as f64 >= threshold });
        covered_to = hi;
    }
    let after_schedule = a_updates_in(trace, covered_to, u64::MAX);
    UpdateCounts { blocks, before_schedule, after_schedule, total: trace.total_a_updates() }
}

/// `|I^A - T/2| <= 3 sqrt(T/4)`.
pub fn split_within_three_sd(a_updates: u64, iterations: u64) -> bool {
    let t = iterations as f64;
    (a_updates as f64 - t / 2.0).abs() <= 3.0 * (t / 4.0).sqrt()
}
