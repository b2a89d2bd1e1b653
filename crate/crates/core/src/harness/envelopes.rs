//! Block-wise envelope checks on recorded traces.

use serde::{Deserialize, Serialize};

use super::trace::TrialTrace;
use super::trackers::CHECK_TOL;
use crate::error::{Error, Result};
use crate::theory::{d_seq, g_seq, BlockSchedule, DerivedConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeMode {
    /// `||Q^B - Q^A|| <= G_{q+1}`.
    UbaVsG,
    /// `||Q^B - Q^A|| <= sigma D_{q+1}`.
    UbaVsSigmaD,
    /// `||Q^A - Q*|| <= D_{q+1}`.
    RVsD,
}

impl EnvelopeMode {
    pub fn level(self, q: usize, consts: &DerivedConstants) -> f64 {
        let k = (q + 1) as u32;
        match self {
            EnvelopeMode::UbaVsG => g_seq(k, consts),
            EnvelopeMode::UbaVsSigmaD => consts.sigma * d_seq(k, consts),
            EnvelopeMode::RVsD => d_seq(k, consts),
        }
    }
}

/// For each block `q`, whether every recorded state in `[tau_{q+1}, tau_{q+2})`
/// stays within the envelope (plus `CHECK_TOL`).
pub fn check_envelopes(
    trace: &TrialTrace,
    schedule: &BlockSchedule,
    consts: &DerivedConstants,
    mode: EnvelopeMode,
) -> Result<Vec<bool>> {
    let last = trace.last_t();
    let needed = schedule.end() - 1;
    if needed > last {
        return Err(Error::ScheduleBeyondTrace { needed, last });
    }
    let mut out = Vec::with_capacity(schedule.n_blocks());
    for q in 0..schedule.n_blocks() {
        let lo = schedule.boundaries[q];
        let hi = schedule.boundaries[q + 1];
        let level = mode.level(q, consts) + CHECK_TOL;
        let start = trace.record_index(lo);
        let mut ok = true;
        for r in trace.records[start..].iter().take_while(|r| r.t < hi) {
            let v = match mode {
                EnvelopeMode::UbaVsG | EnvelopeMode::UbaVsSigmaD => r
                    .u_ba
                    .ok_or_else(|| Error::Config("u^BA envelopes need a double Q-learning trace".into()))?,
                EnvelopeMode::RVsD => r.err_a,
            };
            if v > level {
                ok = false;
                break;
            }
        }
        out.push(ok);
    }
    Ok(out)
}
