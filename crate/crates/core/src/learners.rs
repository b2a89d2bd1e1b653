//! Vanilla, synchronous double and asynchronous double Q-learning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, QTable, TransitionSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Vanilla,
    SyncDouble,
    AsyncDouble,
}

impl Algorithm {
    pub fn is_double(self) -> bool {
        !matches!(self, Algorithm::Vanilla)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vanilla => "vanilla",
            Algorithm::SyncDouble => "sync-double",
            Algorithm::AsyncDouble => "async-double",
        }
    }
}

/// `alpha_t = t^(-omega)`.
pub fn poly_lr(t: u64, omega: f64) -> Result<f64> {
    let lr = LearningRate::new(omega)?;
    if t == 0 {
        return Err(Error::InvalidParam("learning-rate index t starts at 1".into()));
    }
    Ok(lr.at(t))
}

/// Polynomial step size `1 / t^omega`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    omega: f64,
}

impl LearningRate {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega < 1.0) {
            return Err(Error::InvalidParam(format!("omega must lie in (0, 1), got {omega}")));
        }
        Ok(LearningRate { omega })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    #[inline]
    pub fn at(&self, t: u64) -> f64 {
        (t as f64).powf(-self.omega)
    }
}

/// How the asynchronous learner picks the pair to update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Exploration {
    /// Fresh uniform `(s, a)` every step, independent of the trajectory.
    #[default]
    UniformRandom,
    /// Each table cycles through all pairs in index order on its own updates.
    RoundRobin,
    /// Follows the trajectory, greedy on `Q^A + Q^B` with probability `1 - epsilon`.
    EpsilonGreedy { epsilon: f64 },
}

impl Exploration {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Exploration::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => Err(
                Error::InvalidParam(format!("epsilon-greedy epsilon must lie in [0, 1], got {epsilon}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Table {
    A,
    B,
}

/// What a single iteration did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Iteration index the step used for its learning rate.
    pub t: u64,
    pub alpha: f64,
    /// `J^A_t`; always true for vanilla.
    pub chose_a: bool,
    /// Updated pair for the asynchronous learner.
    pub visited: Option<(usize, usize)>,
    /// Environment state after an asynchronous step.
    pub next_state: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    algorithm: Algorithm,
    q_a: QTable,
    q_b: Option<QTable>,
    t: u64,
    cursor: [usize; 2],
    samples: Vec<TransitionSample>,
    cross: Vec<f64>,
}

/// Fair coin shared by every learner so equal seeds give equal draws.
#[inline]
pub fn fair_coin<R: Rng + ?Sized>(rng: &mut R) -> bool {
    rng.gen()
}

impl LearnerState {
    /// Zero-initialised learner at `t = 1`.
    pub fn new(algorithm: Algorithm, mdp: &Mdp) -> Self {
        let z = QTable::zeros(mdp.n_states(), mdp.n_actions());
        let q_b = algorithm.is_double().then(|| z.clone());
        Self::build(algorithm, z, q_b)
    }

    /// Learner from explicit initial tables; `q_b` must be present exactly for double variants.
    pub fn with_tables(algorithm: Algorithm, q_a: QTable, q_b: Option<QTable>) -> Result<Self> {
        if algorithm.is_double() != q_b.is_some() {
            return Err(Error::InvalidParam(format!(
                "{} needs {} table(s)",
                algorithm.name(),
                if algorithm.is_double() { 2 } else { 1 }
            )));
        }
        if let Some(b) = &q_b {
            if (b.n_states(), b.n_actions()) != (q_a.n_states(), q_a.n_actions()) {
                return Err(Error::InvalidParam("Q^A and Q^B shapes differ".into()));
            }
        }
        if q_a.values().iter().chain(q_b.iter().flat_map(|b| b.values())).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("initial Q values must be finite".into()));
        }
        Ok(Self::build(algorithm, q_a, q_b))
    }

    fn build(algorithm: Algorithm, q_a: QTable, q_b: Option<QTable>) -> Self {
        let n_pairs = q_a.values().len();
        let n_states = q_a.n_states();
        LearnerState {
            algorithm,
            q_a,
            q_b,
            t: 1,
            cursor: [0, 0],
            samples: Vec::with_capacity(n_pairs),
            cross: vec![0.0; n_states],
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn q_a(&self) -> &QTable {
        &self.q_a
    }

    /// `Q^B`; `None` for vanilla.
    pub fn q_b(&self) -> Option<&QTable> {
        self.q_b.as_ref()
    }

    /// Samples drawn by the last step: one per pair in `s * |A| + a` order for
    /// synchronous steps, a single entry for asynchronous steps.
    pub fn last_samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    fn expect(&self, algorithm: Algorithm) {
        assert_eq!(self.algorithm, algorithm, "step does not match the learner's algorithm");
    }

    /// One synchronous vanilla iteration: every pair moves towards its own sampled target.
    pub fn vanilla_step<R: Rng + ?Sized>(&mut self, mdp: &Mdp, lr: LearningRate, rng: &mut R) -> StepInfo {
        let alpha = lr.at(self.t);
        self.vanilla_update(mdp, alpha, rng);
        self.finish(alpha, true, None, None)
    }

    /// Vanilla update with an explicit step size; does not advance `t`.
    pub fn vanilla_update<R: Rng + ?Sized>(&mut self, mdp: &Mdp, alpha: f64, rng: &mut R) {
        self.expect(Algorithm::Vanilla);
        let gamma = mdp.gamma();
        for (s, c) in self.cross.iter_mut().enumerate() {
            *c = self.q_a.max(s);
        }
        self.samples.clear();
        let na = mdp.n_actions();
        for s in 0..mdp.n_states() {
            for a in 0..na {
                let smp = mdp.sample_transition(s, a, rng);
                self.samples.push(smp);
                let q = &mut self.q_a.values_mut()[s * na + a];
                *q += alpha * (smp.reward + gamma * self.cross[smp.next_state] - *q);
            }
        }
    }

    /// One iteration of synchronous double Q-learning.
    pub fn sync_double_step<R: Rng + ?Sized>(&mut self, mdp: &Mdp, lr: LearningRate, rng: &mut R) -> StepInfo {
        let alpha = lr.at(self.t);
        let chose_a = fair_coin(rng);
        self.sync_double_update(mdp, alpha, chose_a, rng);
        self.finish(alpha, chose_a, None, None)
    }

    /// Synchronous double update of the given table with an explicit step size;
    /// does not advance `t`. Fresh samples are drawn for the chosen table only.
    pub fn sync_double_update<R: Rng + ?Sized>(&mut self, mdp: &Mdp, alpha: f64, chose_a: bool, rng: &mut R) {
        self.expect(Algorithm::SyncDouble);
        let gamma = mdp.gamma();
        let na = mdp.n_actions();
        let q_b = self.q_b.as_mut().expect("double learner has Q^B");
        let (upd, other) = if chose_a { (&mut self.q_a, q_b) } else { (q_b, &mut self.q_a) };
        for (s, c) in self.cross.iter_mut().enumerate() {
            *c = other.get(s, upd.argmax(s));
        }
        self.samples.clear();
        for s in 0..mdp.n_states() {
            for a in 0..na {
                let smp = mdp.sample_transition(s, a, rng);
                self.samples.push(smp);
                let q = &mut upd.values_mut()[s * na + a];
                *q += alpha * (smp.reward + gamma * self.cross[smp.next_state] - *q);
            }
        }
    }

    /// One iteration of asynchronous double Q-learning from `current_state`.
    ///
    /// The coin is drawn first so that round-robin exploration can cycle
    /// through pairs separately for each table.
    pub fn async_double_step<R: Rng + ?Sized>(
        &mut self,
        mdp: &Mdp,
        lr: LearningRate,
        policy: Exploration,
        current_state: usize,
        rng: &mut R,
    ) -> StepInfo {
        let alpha = lr.at(self.t);
        let chose_a = fair_coin(rng);
        let (s, a) = self.choose_pair(mdp, policy, if chose_a { Table::A } else { Table::B }, current_state, rng);
        let smp = self.async_double_update(mdp, alpha, chose_a, s, a, rng);
        self.finish(alpha, chose_a, Some((s, a)), Some(smp.next_state))
    }

    /// Updates entry `(s, a)` of the chosen table only; does not advance `t`.
    pub fn async_double_update<R: Rng + ?Sized>(
        &mut self,
        mdp: &Mdp,
        alpha: f64,
        chose_a: bool,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> TransitionSample {
        self.expect(Algorithm::AsyncDouble);
        let q_b = self.q_b.as_mut().expect("double learner has Q^B");
        let (upd, other) = if chose_a { (&mut self.q_a, q_b) } else { (q_b, &mut self.q_a) };
        let smp = mdp.sample_transition(s, a, rng);
        let sp = smp.next_state;
        let target = smp.reward + mdp.gamma() * other.get(sp, upd.argmax(sp));
        let q = upd.get(s, a);
        upd.set(s, a, q + alpha * (target - q));
        self.samples.clear();
        self.samples.push(smp);
        smp
    }

    fn choose_pair<R: Rng + ?Sized>(
        &mut self,
        mdp: &Mdp,
        policy: Exploration,
        table: Table,
        current_state: usize,
        rng: &mut R,
    ) -> (usize, usize) {
        let na = mdp.n_actions();
        match policy {
            Exploration::UniformRandom => {
                let p = rng.gen_range(0..mdp.n_pairs());
                (p / na, p % na)
            }
            Exploration::RoundRobin => {
                let c = &mut self.cursor[table as usize];
                let p = *c;
                *c = (p + 1) % mdp.n_pairs();
                (p / na, p % na)
            }
            Exploration::EpsilonGreedy { epsilon } => {
                let s = current_state;
                if rng.gen::<f64>() < epsilon {
                    return (s, rng.gen_range(0..na));
                }
                let q_b = self.q_b.as_ref().expect("double learner has Q^B");
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for a in 0..na {
                    let v = self.q_a.get(s, a) + q_b.get(s, a);
                    if v > best_v {
                        best = a;
                        best_v = v;
                    }
                }
                (s, best)
            }
        }
    }

    fn finish(&mut self, alpha: f64, chose_a: bool, visited: Option<(usize, usize)>, next_state: Option<usize>) -> StepInfo {
        let info = StepInfo { t: self.t, alpha, chose_a, visited, next_state };
        self.t += 1;
        info
    }

    /// `E[F_t(s,a) | past]` for the `u^BA` recursion, computed from the kernel.
    pub fn exact_drift_mean(&self, mdp: &Mdp, s: usize, a: usize) -> f64 {
        let q_b = self.q_b.as_ref().expect("drift is defined for double learners");
        drift_mean(&self.q_a, q_b, mdp, s, a)
    }

    /// Exact drift means for every pair, in `s * |A| + a` order.
    pub fn drift_means(&self, mdp: &Mdp) -> Vec<f64> {
        let q_b = self.q_b.as_ref().expect("drift is defined for double learners");
        let cross = drift_cross_terms(&self.q_a, q_b);
        let mut out = Vec::with_capacity(mdp.n_pairs());
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                out.push(drift_from_cross(&self.q_a, q_b, mdp, &cross, s, a));
            }
        }
        out
    }
}

/// `Q^A(s', b*) - Q^B(s', a*)` per next state, with `a*`, `b*` the greedy actions of `Q^A`, `Q^B`.
pub(crate) fn drift_cross_terms(q_a: &QTable, q_b: &QTable) -> Vec<f64> {
    (0..q_a.n_states())
        .map(|sp| q_a.get(sp, q_b.argmax(sp)) - q_b.get(sp, q_a.argmax(sp)))
        .collect()
}

pub(crate) fn drift_from_cross(q_a: &QTable, q_b: &QTable, mdp: &Mdp, cross: &[f64], s: usize, a: usize) -> f64 {
    let expect: f64 = mdp.kernel_row(s, a).iter().zip(cross).map(|(p, c)| p * c).sum();
    0.5 * (q_b.get(s, a) - q_a.get(s, a)) + 0.5 * mdp.gamma() * expect
}

/// Exact conditional mean of the `u^BA` noise term at `(s, a)`.
pub fn drift_mean(q_a: &QTable, q_b: &QTable, mdp: &Mdp, s: usize, a: usize) -> f64 {
    drift_from_cross(q_a, q_b, mdp, &drift_cross_terms(q_a, q_b), s, a)
}
