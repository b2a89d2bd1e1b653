//! Single seeded trials and their thinned traces.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::config::Experiment;
use super::trackers::{SandwichSummary, SandwichTracker};
use crate::error::{Error, Result};
use crate::learners::{Algorithm, LearnerState, StepInfo};
use crate::mdp::{sup_norm_diff, QTable};

/// One trace row.
///
/// A record at `t` summarises the states `t .. t'` and the iterations `t .. t'`
/// up to the next record `t'`. Norm fields are maxima over those states, so a
/// thinned trace never hides an envelope violation. Records always start at
/// every epoch boundary, which keeps windows inside blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    /// `max ||Q^B - Q^A||`; absent for vanilla.
    pub u_ba: Option<f64>,
    /// `max ||Q^A - Q*||`.
    pub err_a: f64,
    /// `max ||Q^B - Q*||`; absent for vanilla.
    pub err_b: Option<f64>,
    /// Iterations summarised by this record.
    pub steps: u64,
    /// Iterations among them that updated `Q^A`.
    pub a_updates: u64,
    /// Updated pair when the record covers a single asynchronous iteration.
    pub visited: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub iterations: u64,
    pub stride: u64,
    pub records: Vec<TraceRecord>,
    pub final_q_a: QTable,
    pub final_q_b: Option<QTable>,
    /// `||Q^A_{T+1} - Q*||` after all iterations.
    pub final_err_a: f64,
    /// Largest `||Q^i_t||` over the run and both tables.
    pub max_table_norm: f64,
    /// Largest `||Q^i_t - Q*||` over the run and both tables.
    pub max_err: f64,
    pub sandwich: Option<SandwichSummary>,
}

impl TrialTrace {
    pub fn last_t(&self) -> u64 {
        self.records.last().map_or(0, |r| r.t)
    }

    pub fn total_a_updates(&self) -> u64 {
        self.records.iter().map(|r| r.a_updates).sum()
    }

    /// Index of the first record with `t >= t0`.
    pub fn record_index(&self, t0: u64) -> usize {
        self.records.partition_point(|r| r.t < t0)
    }

    /// Writes `t, u_ba, err_a, err_b, chose_a, s, a`. With stride 1 `chose_a`
    /// is the 0/1 update indicator of iteration `t`; otherwise it counts the
    /// A-updates the row summarises.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "u_ba", "err_a", "err_b", "chose_a", "s", "a"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let (s, a) = r.visited.map_or((String::new(), String::new()), |(s, a)| (s.to_string(), a.to_string()));
            w.write_record([
                r.t.to_string(),
                opt(r.u_ba),
                r.err_a.to_string(),
                opt(r.err_b),
                r.a_updates.to_string(),
                s,
                a,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

struct Recorder<'a> {
    stride: u64,
    last_t: u64,
    boundaries: &'a [u64],
    next_boundary: usize,
    next_stride_t: u64,
    records: Vec<TraceRecord>,
    open: Option<TraceRecord>,
    max_table_norm: f64,
    max_err: f64,
}

impl<'a> Recorder<'a> {
    fn new(stride: u64, iterations: u64, boundaries: &'a [u64]) -> Self {
        let cap = (iterations / stride + boundaries.len() as u64 + 2).min(4_000_000) as usize;
        Recorder {
            stride,
            last_t: iterations + 1,
            boundaries,
            next_boundary: 0,
            next_stride_t: 1,
            records: Vec::with_capacity(cap),
            open: None,
            max_table_norm: 0.0,
            max_err: 0.0,
        }
    }

    fn starts_record(&mut self, t: u64) -> bool {
        let mut start = t == 1 || t == self.last_t;
        if t >= self.next_stride_t {
            self.next_stride_t = t + self.stride;
            start = true;
        }
        if self.next_boundary < self.boundaries.len() && self.boundaries[self.next_boundary] <= t {
            while self.next_boundary < self.boundaries.len() && self.boundaries[self.next_boundary] <= t {
                self.next_boundary += 1;
            }
            start = true;
        }
        start
    }

    #[inline]
    fn state(&mut self, t: u64, st: &LearnerState, q_star: &QTable) {
        let qa = st.q_a().values();
        let qs = q_star.values();
        let (u, err_a, err_b) = match st.q_b() {
            Some(qb) => {
                let qb = qb.values();
                let (mut u, mut ea, mut eb, mut n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
                for i in 0..qa.len() {
                    let (a, b, x) = (qa[i], qb[i], qs[i]);
                    u = u.max((b - a).abs());
                    ea = ea.max((a - x).abs());
                    eb = eb.max((b - x).abs());
                    n = n.max(a.abs()).max(b.abs());
                }
                self.max_table_norm = self.max_table_norm.max(n);
                self.max_err = self.max_err.max(ea).max(eb);
                (Some(u), ea, Some(eb))
            }
            None => {
                let ea = sup_norm_diff(qa, qs);
                self.max_table_norm = self.max_table_norm.max(st.q_a().sup_norm());
                self.max_err = self.max_err.max(ea);
                (None, ea, None)
            }
        };
        let start = self.starts_record(t);
        if start || self.open.is_none() {
            if let Some(done) = self.open.take() {
                self.records.push(done);
            }
            self.open = Some(TraceRecord {
                t,
                u_ba: u,
                err_a,
                err_b,
                steps: 0,
                a_updates: 0,
                visited: None,
            });
            return;
        }
        let r = self.open.as_mut().expect("open record");
        r.err_a = r.err_a.max(err_a);
        if let (Some(ru), Some(u), Some(rb), Some(eb)) = (r.u_ba.as_mut(), u, r.err_b.as_mut(), err_b) {
            *ru = ru.max(u);
            *rb = rb.max(eb);
        }
    }

    #[inline]
    fn step(&mut self, info: &StepInfo) {
        let r = self.open.as_mut().expect("open record");
        r.steps += 1;
        r.a_updates += u64::from(info.chose_a);
        r.visited = if r.steps == 1 { info.visited } else { None };
    }

    fn finish(mut self) -> (Vec<TraceRecord>, f64, f64) {
        if let Some(done) = self.open.take() {
            self.records.push(done);
        }
        (self.records, self.max_table_norm, self.max_err)
    }
}

/// Random stream of a trial, seeded from the trial's seed.
pub type TrialRng = Xoshiro256PlusPlus;

/// Runs one seeded trial of the configured learner for `exp.iterations` steps.
pub fn run_trial(exp: &Experiment, seed: u64) -> Result<TrialTrace> {
    run_trial_with_stride(exp, seed, exp.stride)
}

pub fn run_trial_with_stride(exp: &Experiment, seed: u64, stride: u64) -> Result<TrialTrace> {
    if stride == 0 {
        return Err(Error::Config("stride: must be at least 1".into()));
    }
    let mdp = &exp.mdp;
    let alg = exp.config.algorithm;
    let lr = exp.lr;
    let policy = exp.config.exploration;
    let mut rng = TrialRng::seed_from_u64(seed);
    let mut st = LearnerState::new(alg, mdp);
    let mut tracker = match (exp.config.trackers, &exp.schedule) {
        (false, _) => None,
        (true, _) if !alg.is_double() => {
            return Err(Error::Config("trackers: only double Q-learning has sandwich trackers".into()))
        }
        (true, None) => return Err(Error::Config("trackers: need an epoch schedule for restarts".into())),
        (true, Some(s)) => Some(SandwichTracker::new(alg, mdp, &exp.q_star, exp.consts, s)),
    };
    let boundaries = exp.schedule.as_ref().map_or(&[][..], |s| &s.boundaries[..]);
    let mut rec = Recorder::new(stride, exp.iterations, boundaries);
    rec.state(1, &st, &exp.q_star);
    let mut env = 0usize;
    for _ in 0..exp.iterations {
        if let Some(tr) = tracker.as_mut() {
            tr.before_step(&st);
        }
        let info = match alg {
            Algorithm::Vanilla => st.vanilla_step(mdp, lr, &mut rng),
            Algorithm::SyncDouble => st.sync_double_step(mdp, lr, &mut rng),
            Algorithm::AsyncDouble => {
                let info = st.async_double_step(mdp, lr, policy, env, &mut rng);
                env = info.next_state.expect("async step reports the next state");
                info
            }
        };
        if let Some(tr) = tracker.as_mut() {
            tr.after_step(mdp, &info, &st);
        }
        rec.step(&info);
        rec.state(st.t(), &st, &exp.q_star);
    }
    let (records, max_table_norm, max_err) = rec.finish();
    let final_err_a = sup_norm_diff(st.q_a().values(), exp.q_star.values());
    Ok(TrialTrace {
        seed,
        algorithm: alg,
        iterations: exp.iterations,
        stride,
        records,
        final_q_a: st.q_a().clone(),
        final_q_b: st.q_b().cloned(),
        final_err_a,
        max_table_norm,
        max_err,
        sandwich: tracker.map(|t| t.summary().clone()),
    })
}
