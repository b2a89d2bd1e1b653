//! One-shot evaluation of every bound quantity for a parameter set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::{
    c_min, derive_constants, epoch_schedule, failure_prob_async, failure_prob_sync, m_star, step_coeff, theorem_terms,
    tau1_min_async_seq, tau1_min_sync_d, tau1_min_sync_g, update_deficit_prob, CCondition, DerivedConstants,
    IterationScale, Sequence, TheoryParams, DEFAULT_DELTA_SLACK, DEFAULT_KAPPA, DEFAULT_OMEGA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsRequest {
    pub gamma: f64,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_delta_slack")]
    pub delta_slack: f64,
    pub c: f64,
    #[serde(default = "one_u64")]
    pub covering_l: u64,
    #[serde(default = "one_f64")]
    pub r_max: f64,
    pub tau_1: u64,
    pub n_states: usize,
    pub n_actions: usize,
    /// Envelopes the caller cares about; asking for `d` enforces `kappa > ln 2`.
    #[serde(default = "both_sequences")]
    pub sequences: Vec<Sequence>,
}

fn default_delta() -> f64 {
    0.05
}
fn default_omega() -> f64 {
    DEFAULT_OMEGA
}
fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_delta_slack() -> f64 {
    DEFAULT_DELTA_SLACK
}
fn one_u64() -> u64 {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn both_sequences() -> Vec<Sequence> {
    vec![Sequence::G, Sequence::D]
}

impl BoundsRequest {
    pub fn params(&self) -> TheoryParams {
        TheoryParams {
            gamma: self.gamma,
            epsilon: self.epsilon,
            delta: self.delta,
            omega: self.omega,
            kappa: self.kappa,
            delta_slack: self.delta_slack,
            c: self.c,
            covering_l: self.covering_l,
            r_max: self.r_max,
        }
    }
}

/// A value, or the reason it is undefined at these parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl From<Result<f64>> for Evaluated {
    fn from(r: Result<f64>) -> Self {
        match r {
            Ok(v) => Evaluated { value: Some(v), error: None },
            Err(e) => Evaluated { value: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerCondition {
    pub sync_g: Evaluated,
    pub sync_d: Evaluated,
    pub async_g: Evaluated,
    pub async_d: Evaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub schema_version: u32,
    pub request: BoundsRequest,
    pub constants: DerivedConstants,
    pub c_min: PerCondition,
    pub tau_1_min: PerCondition,
    pub m_star: u64,
    /// Last boundary of the `m_star`-block schedules at the requested `c`.
    pub schedule_end_sync: Evaluated,
    pub schedule_end_async: Evaluated,
    /// Probability bounds evaluated at the requested `tau_1` with `n = m_star`.
    pub failure_prob: PerCondition,
    pub update_deficit_sync: f64,
    pub update_deficit_async: f64,
    /// Order-of-magnitude iteration counts; hidden constants are dropped.
    pub theorem_sync: IterationScale,
    pub theorem_async: IterationScale,
    pub warnings: Vec<String>,
}

impl BoundsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation cannot fail")
    }
}

pub fn evaluate_bounds(req: &BoundsRequest) -> Result<BoundsReport> {
    let params = req.params();
    let strict = req.sequences.contains(&Sequence::D) || req.covering_l > 1;
    params.validate(strict)?;
    if req.tau_1 == 0 {
        return Err(Error::InvalidParam("tau_1: must be at least 1".into()));
    }
    if req.n_states == 0 || req.n_actions == 0 {
        return Err(Error::InvalidParam("n_states, n_actions: must be at least 1".into()));
    }
    let consts = derive_constants(req.gamma, req.r_max)?;
    let tau_1 = req.tau_1 as f64;
    let cm = |k: CCondition| Evaluated::from(c_min(k, req.kappa, req.delta_slack, tau_1, req.omega, req.covering_l));
    let c_min_all = PerCondition {
        sync_g: cm(CCondition::SyncG),
        sync_d: cm(CCondition::SyncD),
        async_g: cm(CCondition::AsyncG),
        async_d: cm(CCondition::AsyncD),
    };
    let tau_1_min = PerCondition {
        sync_g: tau1_min_sync_g(&params, &consts).into(),
        sync_d: tau1_min_sync_d(&params, &consts).into(),
        async_g: tau1_min_async_seq(&params, &consts, Sequence::G).into(),
        async_d: tau1_min_async_seq(&params, &consts, Sequence::D).into(),
    };
    let m = m_star(req.gamma, req.epsilon, consts.v_max);
    let end = |l: u64| -> Evaluated {
        epoch_schedule(req.tau_1, step_coeff(req.c, req.kappa, l), req.omega, m.max(1) as usize)
            .map(|s| s.end() as f64)
            .into()
    };
    let n_pairs = req.n_states * req.n_actions;
    let fp = |p: f64| Evaluated { value: Some(p), error: None };
    let failure_prob = PerCondition {
        sync_g: fp(failure_prob_sync(m, &params, &consts, tau_1, Sequence::G, n_pairs)),
        sync_d: fp(failure_prob_sync(m, &params, &consts, tau_1, Sequence::D, n_pairs)),
        async_g: fp(failure_prob_async(m, &params, &consts, tau_1, Sequence::G, n_pairs)),
        async_d: fp(failure_prob_async(m, &params, &consts, tau_1, Sequence::D, n_pairs)),
    };

    let mut warnings = Vec::new();
    let conds = [
        ("sync-g", &c_min_all.sync_g, &tau_1_min.sync_g),
        ("sync-d", &c_min_all.sync_d, &tau_1_min.sync_d),
        ("async-g", &c_min_all.async_g, &tau_1_min.async_g),
        ("async-d", &c_min_all.async_d, &tau_1_min.async_d),
    ];
    for (name, cmin, tmin) in conds {
        if let Some(v) = cmin.value {
            if req.c < v {
                warnings.push(format!("c = {} is below c_min({name}) = {v:.6}", req.c));
            }
        }
        if let Some(v) = tmin.value {
            if tau_1 < v {
                warnings.push(format!("tau_1 = {} is below the {name} minimum {v:.6e}", req.tau_1));
            }
        }
    }

    Ok(BoundsReport {
        schema_version: 1,
        request: req.clone(),
        constants: consts,
        c_min: c_min_all,
        tau_1_min,
        m_star: m,
        schedule_end_sync: end(1),
        schedule_end_async: end(req.covering_l),
        failure_prob,
        update_deficit_sync: update_deficit_prob(m, tau_1, req.c, req.kappa, req.omega, 1),
        update_deficit_async: update_deficit_prob(m, tau_1, req.c, req.kappa, req.omega, req.covering_l),
        theorem_sync: theorem_terms(&params, &consts, req.n_states, req.n_actions, true),
        theorem_async: theorem_terms(&params, &consts, req.n_states, req.n_actions, false),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> BoundsRequest {
        serde_json::from_str(r#"{"gamma": 0.5, "epsilon": 0.5, "c": 4.0, "tau_1": 200, "n_states": 4, "n_actions": 2}"#)
            .unwrap()
    }

    #[test]
    fn half_gamma_constants() {
        let r = evaluate_bounds(&req()).unwrap();
        assert_eq!(r.constants.v_max, 4.0);
        assert_eq!(r.constants.xi, 0.125);
        assert_eq!(r.constants.beta, 0.125);
        assert_eq!(r.constants.sigma, 0.5);
    }

    #[test]
    fn unit_covering_async_matches_sync() {
        let r = evaluate_bounds(&req()).unwrap();
        assert_eq!(r.c_min.async_g.value, r.c_min.sync_d.value);
        assert_eq!(r.tau_1_min.async_g.value, r.tau_1_min.sync_g.value);
        assert_eq!(r.schedule_end_async, r.schedule_end_sync);
        assert_eq!(r.update_deficit_async, r.update_deficit_sync);
    }

    #[test]
    fn small_kappa_with_d_is_named() {
        let mut q = req();
        q.kappa = 0.5;
        let msg = evaluate_bounds(&q).unwrap_err().to_string();
        assert!(msg.contains("κ must exceed ln 2 ≈ 0.6931"), "{msg}");
        q.sequences = vec![Sequence::G];
        assert!(evaluate_bounds(&q).is_ok());
    }

    #[test]
    fn field_named_in_errors() {
        let mut q = req();
        q.gamma = 0.2;
        assert!(evaluate_bounds(&q).unwrap_err().to_string().contains("gamma"));
    }

    #[test]
    fn small_c_warns() {
        let mut q = req();
        q.c = 1.0;
        let r = evaluate_bounds(&q).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("c_min(sync-g)")));
    }
}
