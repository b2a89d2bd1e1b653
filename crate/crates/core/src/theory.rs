//! Constants, block schedules and finite-time bounds for double Q-learning.
//!
//! Every function here is a pure evaluation of a closed-form expression.
//! Rounded-up integer epoch boundaries are used wherever a boundary is compared.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KAPPA: f64 = 0.8;
pub const DEFAULT_DELTA_SLACK: f64 = 0.1;
pub const DEFAULT_OMEGA: f64 = 0.8;

/// Which block-wise envelope a condition or bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sequence {
    /// `G_q`, the envelope on `||Q^B - Q^A||`.
    G,
    /// `D_k`, the envelope on `||Q^A - Q*||`.
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub omega: f64,
    pub kappa: f64,
    pub delta_slack: f64,
    pub c: f64,
    /// Covering number `L`; 1 for synchronous runs.
    pub covering_l: u64,
    pub r_max: f64,
}

impl TheoryParams {
    /// Checks field ranges. `strict` selects the range needed by the `D`
    /// sequence and the asynchronous results: `kappa` in `(ln 2, 1)` and
    /// `Delta` in `(0, e^kappa - 2)`. Otherwise `kappa` in `(0, 1)` and
    /// `Delta` in `(0, e - 2)`.
    pub fn validate(&self, strict: bool) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidParam(format!("{field}: {msg}")));
        if !(self.gamma > 1.0 / 3.0 && self.gamma < 1.0) {
            return bad("gamma", format!("must lie in (1/3, 1), got {}", self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", format!("must lie in (0, 1), got {}", self.delta));
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return bad("omega", format!("must lie in (0, 1), got {}", self.omega));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c", format!("must be positive, got {}", self.c));
        }
        if self.covering_l == 0 {
            return bad("covering_l", "must be at least 1".into());
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return bad("r_max", format!("must be positive, got {}", self.r_max));
        }
        validate_kappa_slack(self.kappa, self.delta_slack, strict)
    }
}

/// Range check for `(kappa, Delta)`; see [`TheoryParams::validate`].
pub fn validate_kappa_slack(kappa: f64, delta_slack: f64, strict: bool) -> Result<()> {
    let ln2 = std::f64::consts::LN_2;
    if !(kappa < 1.0) || !(kappa > 0.0) {
        return Err(Error::InvalidParam(format!("kappa: must lie in (0, 1), got {kappa}")));
    }
    if strict && kappa <= ln2 {
        return Err(Error::InvalidParam(format!("kappa: κ must exceed ln 2 ≈ 0.6931, got {kappa}")));
    }
    let upper = if strict { kappa.exp() - 2.0 } else { std::f64::consts::E - 2.0 };
    if !(delta_slack > 0.0 && delta_slack < upper) {
        let bound = if strict { "e^κ - 2" } else { "e - 2" };
        return Err(Error::InvalidParam(format!(
            "delta_slack: Δ must lie in (0, {bound} ≈ {upper:.4}), got {delta_slack}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub v_max: f64,
    pub xi: f64,
    pub sigma: f64,
    pub beta: f64,
    pub gamma_prime: f64,
    pub gamma_dprime: f64,
}

pub fn derive_constants(gamma: f64, r_max: f64) -> Result<DerivedConstants> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParam(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::InvalidParam(format!("r_max must be positive, got {r_max}")));
    }
    let sigma = (1.0 - gamma) / (2.0 * gamma);
    Ok(DerivedConstants {
        v_max: 2.0 * r_max / (1.0 - gamma),
        xi: (1.0 - gamma) / 4.0,
        sigma,
        beta: (1.0 - gamma * (1.0 + sigma)) / 2.0,
        gamma_prime: (1.0 + gamma) / 2.0,
        gamma_dprime: gamma * (1.0 + sigma),
    })
}

/// `G_q = (1 - xi)^q V_max`.
pub fn g_seq(q: u32, consts: &DerivedConstants) -> f64 {
    (1.0 - consts.xi).powi(q as i32) * consts.v_max
}

/// `D_k = (1 - beta)^k V_max / sigma`.
pub fn d_seq(k: u32, consts: &DerivedConstants) -> f64 {
    (1.0 - consts.beta).powi(k as i32) * consts.v_max / consts.sigma
}

/// Epoch boundaries `tau_1 < tau_2 < ...`; block `q` is `[tau_q, tau_{q+1})`
/// and block 0 is `[1, tau_1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub tau_1: u64,
    pub step_coeff: f64,
    pub omega: f64,
    /// `[tau_1, ..., tau_{n_blocks + 1}]`.
    pub boundaries: Vec<u64>,
}

impl BlockSchedule {
    /// `tau_q` for `q >= 1`; `tau_0 = 0` by convention.
    pub fn tau(&self, q: usize) -> u64 {
        if q == 0 {
            0
        } else {
            self.boundaries[q - 1]
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Last boundary.
    pub fn end(&self) -> u64 {
        *self.boundaries.last().expect("schedule has boundaries")
    }

    pub fn is_boundary(&self, t: u64) -> bool {
        self.boundaries.binary_search(&t).is_ok()
    }

    /// Block index containing `t >= 1`; block 0 is `[1, tau_1)`.
    pub fn block_of(&self, t: u64) -> usize {
        self.boundaries.partition_point(|&b| b <= t)
    }
}

/// `2c/kappa`, or `2cL/kappa` for the asynchronous schedule.
pub fn step_coeff(c: f64, kappa: f64, covering_l: u64) -> f64 {
    2.0 * c * covering_l as f64 / kappa
}

/// `tau_{q+1} = tau_q + ceil(step_coeff * tau_q^omega)` starting from `tau_1`.
pub fn epoch_schedule(tau_1: u64, step_coeff: f64, omega: f64, n_blocks: usize) -> Result<BlockSchedule> {
    if tau_1 == 0 {
        return Err(Error::InvalidParam("tau_1 must be at least 1".into()));
    }
    if !(step_coeff > 0.0 && step_coeff.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "schedule step coefficient must be positive so boundaries increase, got {step_coeff}"
        )));
    }
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::InvalidParam(format!("omega must lie in (0, 1), got {omega}")));
    }
    if n_blocks == 0 {
        return Err(Error::InvalidParam("n_blocks must be at least 1".into()));
    }
    let mut boundaries = Vec::with_capacity(n_blocks + 1);
    let mut tau = tau_1;
    boundaries.push(tau);
    for _ in 0..n_blocks {
        let inc = (step_coeff * (tau as f64).powf(omega)).ceil();
        if !(inc < (u64::MAX - tau) as f64) {
            return Err(Error::InvalidParam("schedule overflows u64".into()));
        }
        tau += inc as u64;
        boundaries.push(tau);
    }
    Ok(BlockSchedule { tau_1, step_coeff, omega, boundaries })
}

/// The four printed lower bounds on `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CCondition {
    SyncG,
    SyncD,
    AsyncG,
    AsyncD,
}

impl CCondition {
    pub const ALL: [CCondition; 4] = [CCondition::SyncG, CCondition::SyncD, CCondition::AsyncG, CCondition::AsyncD];

    pub fn name(self) -> &'static str {
        match self {
            CCondition::SyncG => "sync-g",
            CCondition::SyncD => "sync-d",
            CCondition::AsyncG => "async-g",
            CCondition::AsyncD => "async-d",
        }
    }
}

/// Smallest admissible `c` for one condition.
///
/// The asynchronous `D` bound has no `kappa` in its numerator, exactly as stated
/// for that result.
pub fn c_min(kind: CCondition, kappa: f64, delta_slack: f64, tau_1: f64, omega: f64, covering_l: u64) -> Result<f64> {
    if !(tau_1 >= 1.0) {
        return Err(Error::InvalidParam(format!("tau_1 must be at least 1, got {tau_1}")));
    }
    let l = covering_l as f64;
    let num = (2.0 + delta_slack).ln() + tau_1.powf(-omega);
    let (lead, den, cond) = match kind {
        CCondition::SyncG => (1.0, 1.0 - num, "1 - ln(2+Δ) - 1/τ_1^ω > 0"),
        CCondition::SyncD => (kappa / 2.0, kappa - num, "κ - ln(2+Δ) - 1/τ_1^ω > 0"),
        CCondition::AsyncG => (l * kappa / 2.0, kappa - num, "κ - ln(2+Δ) - 1/τ_1^ω > 0"),
        CCondition::AsyncD => (l / 2.0, kappa - num, "κ - ln(2+Δ) - 1/τ_1^ω > 0"),
    };
    // a denominator that is zero up to rounding is treated as zero
    if den <= 1e-12 {
        return Err(Error::Domain(format!(
            "c_min({}) needs {cond}; got {den:.3e} at τ_1 = {tau_1}",
            kind.name()
        )));
    }
    Ok(lead * num / den)
}

/// Admissible `c`: the largest lower bound among the conditions in force.
pub fn c_min_compose(
    kinds: &[CCondition],
    kappa: f64,
    delta_slack: f64,
    tau_1: f64,
    omega: f64,
    covering_l: u64,
) -> Result<f64> {
    kinds.iter().try_fold(0.0f64, |acc, &k| Ok(acc.max(c_min(k, kappa, delta_slack, tau_1, omega, covering_l)?)))
}

/// Blocks needed for `D_m <= epsilon`; 0 when `epsilon >= D_0`.
pub fn m_star(gamma: f64, epsilon: f64, v_max: f64) -> u64 {
    let d0 = 2.0 * gamma * v_max / (1.0 - gamma);
    if epsilon >= d0 {
        return 0;
    }
    ((4.0 / (1.0 - gamma)) * (d0 / epsilon).ln()).ceil() as u64
}

fn slack_ratio(delta_slack: f64) -> f64 {
    delta_slack / (2.0 + delta_slack)
}

/// `max{ first^(1/w), (2K ln K)^(1/w) }` where the second argument is `2K ln K`
/// with `K` the shared ratio inside the logarithm.
fn tau1_max(first_den: f64, first_cond: &str, k: f64, omega: f64, label: &str) -> Result<f64> {
    if first_den <= 0.0 {
        return Err(Error::Domain(format!("{label}: {first_cond} must be positive, got {first_den:.4}")));
    }
    if !(k > 1.0) {
        return Err(Error::Domain(format!(
            "{label}: logarithm argument {k:.4e} must exceed 1 for the bound to apply"
        )));
    }
    let first = (1.0 / first_den).powf(1.0 / omega);
    let second = (2.0 * k * k.ln()).powf(1.0 / omega);
    Ok(first.max(second))
}

/// Minimum `tau_1` for the synchronous `G` envelope.
pub fn tau1_min_sync_g(params: &TheoryParams, consts: &DerivedConstants) -> Result<f64> {
    params.validate(false)?;
    let p = params;
    let ln = (2.0 + p.delta_slack).ln();
    let k = 64.0 * p.c * (p.c + p.kappa) * consts.v_max.powi(2)
        / (p.kappa.powi(2) * slack_ratio(p.delta_slack).powi(2) * consts.sigma.powi(2) * consts.xi.powi(2) * p.epsilon.powi(2));
    tau1_max(1.0 - ln, "1 - ln(2+Δ)", k, p.omega, "tau1_min_sync_g")
}

/// Minimum `tau_1` for the synchronous `D` envelope.
pub fn tau1_min_sync_d(params: &TheoryParams, consts: &DerivedConstants) -> Result<f64> {
    params.validate(true)?;
    let p = params;
    let ln = (2.0 + p.delta_slack).ln();
    let k = 16.0 * p.c * (p.c + p.kappa) * consts.v_max.powi(2)
        / (p.kappa.powi(2) * slack_ratio(p.delta_slack).powi(2) * consts.beta.powi(2) * p.epsilon.powi(2));
    tau1_max(p.kappa - ln, "κ - ln(2+Δ)", k, p.omega, "tau1_min_sync_d")
}

/// Minimum `tau_1` for one of the asynchronous envelopes.
pub fn tau1_min_async_seq(params: &TheoryParams, consts: &DerivedConstants, which: Sequence) -> Result<f64> {
    params.validate(true)?;
    let p = params;
    let cl = p.c * p.covering_l as f64;
    let ln = (2.0 + p.delta_slack).ln();
    let common = p.kappa.powi(2) * slack_ratio(p.delta_slack).powi(2) * p.epsilon.powi(2);
    let k = match which {
        Sequence::G => 64.0 * cl * (cl + p.kappa) * consts.v_max.powi(2) / (common * consts.xi.powi(2) * consts.sigma.powi(2)),
        Sequence::D => 16.0 * cl * (cl + p.kappa) * consts.v_max.powi(2) / (common * consts.beta.powi(2)),
    };
    tau1_max(p.kappa - ln, "κ - ln(2+Δ)", k, p.omega, "tau1_min_async")
}

/// Minimum `tau_1` for the asynchronous analysis: both envelopes together.
pub fn tau1_min_async(params: &TheoryParams, consts: &DerivedConstants) -> Result<f64> {
    Ok(tau1_min_async_seq(params, consts, Sequence::G)?.max(tau1_min_async_seq(params, consts, Sequence::D)?))
}

fn failure_prob(n: u64, params: &TheoryParams, consts: &DerivedConstants, tau_1: f64, which: Sequence, n_pairs: usize, l: f64) -> f64 {
    let p = params;
    let cl = p.c * l;
    let pre = 4.0 * cl * (n as f64 + 1.0) / p.kappa * (1.0 + 2.0 * cl / p.kappa) * n_pairs as f64;
    let common = p.kappa.powi(2) * slack_ratio(p.delta_slack).powi(2) * p.epsilon.powi(2) * tau_1.powf(p.omega);
    let expo = match which {
        Sequence::G => common * consts.xi.powi(2) * consts.sigma.powi(2) / (64.0 * cl * (cl + p.kappa) * consts.v_max.powi(2)),
        Sequence::D => common * consts.beta.powi(2) / (16.0 * cl * (cl + p.kappa) * consts.v_max.powi(2)),
    };
    (pre * (-expo).exp()).clamp(0.0, 1.0)
}

/// Subtracted failure term of the synchronous envelope bound with `n + 1` blocks.
pub fn failure_prob_sync(n: u64, params: &TheoryParams, consts: &DerivedConstants, tau_1: f64, which: Sequence, n_pairs: usize) -> f64 {
    failure_prob(n, params, consts, tau_1, which, n_pairs, 1.0)
}

/// Asynchronous analogue of [`failure_prob_sync`] with `cL` in place of `c`.
///
/// The `D` variant uses the `Delta/(2+Delta)` factor in the exponent.
pub fn failure_prob_async(n: u64, params: &TheoryParams, consts: &DerivedConstants, tau_1: f64, which: Sequence, n_pairs: usize) -> f64 {
    failure_prob(n, params, consts, tau_1, which, n_pairs, params.covering_l as f64)
}

/// `m exp(-(1-kappa)^2 c L tau_1^omega / kappa)`, clamped to `[0, 1]`.
pub fn update_deficit_prob(m: u64, tau_1: f64, c: f64, kappa: f64, omega: f64, covering_l: u64) -> f64 {
    let e = (1.0 - kappa).powi(2) * c * covering_l as f64 * tau_1.powf(omega) / kappa;
    (m as f64 * (-e).exp()).clamp(0.0, 1.0)
}

/// The two summands of the iteration-complexity expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationScale {
    pub noise_term: f64,
    pub bias_term: f64,
    /// Sum of both terms. An order of magnitude only: hidden constants are dropped.
    pub scale_indicator: f64,
}

/// Evaluates the iteration-complexity expression without hidden constants.
///
/// The asynchronous form carries `L^4`, `L^2` and a factor `gamma` inside the
/// second logarithm, as stated for that result.
pub fn theorem_terms(params: &TheoryParams, consts: &DerivedConstants, s_count: usize, a_count: usize, sync: bool) -> IterationScale {
    let p = params;
    let g1 = 1.0 - p.gamma;
    let l = if sync { 1.0 } else { p.covering_l as f64 };
    let v2 = l.powi(4) * consts.v_max.powi(2);
    let pairs = (s_count * a_count) as f64;
    let noise_term = (v2 / (g1.powi(4) * p.epsilon.powi(2)) * (pairs * v2 / (g1.powi(5) * p.epsilon.powi(2) * p.delta)).ln())
        .powf(1.0 / p.omega);
    let ln_arg = if sync { consts.v_max } else { p.gamma * consts.v_max } / (g1 * p.epsilon);
    let bias_term = (l * l / g1 * ln_arg.ln()).powf(1.0 / (1.0 - p.omega));
    IterationScale { noise_term, bias_term, scale_indicator: noise_term + bias_term }
}

pub fn theorem_iterations(params: &TheoryParams, consts: &DerivedConstants, s_count: usize, a_count: usize, sync: bool) -> f64 {
    theorem_terms(params, consts, s_count, a_count, sync).scale_indicator
}

/// `(prod_{i=t1}^{t2} (1 - i^-omega), exp(-(t2 - t1) / t2^omega))`.
pub fn prod_help_check(t1: u64, t2: u64, omega: f64) -> Result<(f64, f64)> {
    if t1 <= 1 || t2 <= t1 {
        return Err(Error::InvalidParam(format!("need 1 < t1 < t2, got t1 = {t1}, t2 = {t2}")));
    }
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::InvalidParam(format!("omega must lie in (0, 1), got {omega}")));
    }
    let product = (t1..=t2).map(|i| 1.0 - (i as f64).powf(-omega)).product();
    let bound = (-((t2 - t1) as f64) / (t2 as f64).powf(omega)).exp();
    Ok((product, bound))
}

/// `(tau^b e^(-2 tau / a), e^(-tau / a))`, valid for `tau >= 2ab ln(ab) > 1`.
pub fn tau_help_check(a: f64, b: f64, tau: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidParam(format!("a and b must be positive, got a = {a}, b = {b}")));
    }
    let threshold = tau_help_threshold(a, b);
    if !(threshold > 1.0) {
        return Err(Error::InvalidParam(format!("2ab ln(ab) = {threshold:.4} must exceed 1")));
    }
    if !(tau >= threshold) {
        return Err(Error::InvalidParam(format!("tau = {tau} is below 2ab ln(ab) = {threshold}")));
    }
    Ok((tau.powf(b) * (-2.0 * tau / a).exp(), (-tau / a).exp()))
}

pub fn tau_help_threshold(a: f64, b: f64) -> f64 {
    2.0 * a * b * (a * b).ln()
}
