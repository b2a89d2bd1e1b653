//! Finite discounted MDPs, Q-tables and the exact Bellman operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP with bounded rewards `mean + Uniform[-eta, eta]`.
///
/// `kernel` and `reward_mean` are stored flat in `[s][a][s']` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc", into = "MdpDoc")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    noise_halfwidth: f64,
    kernel: Vec<f64>,
    reward_mean: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    pub next_state: usize,
    pub reward: f64,
}

impl Mdp {
    /// Builds and validates an MDP from flat `[s][a][s']` arrays.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        r_max: f64,
        noise_halfwidth: f64,
        kernel: Vec<f64>,
        reward_mean: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("n_states and n_actions must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::InvalidMdp(format!("r_max must be positive, got {r_max}")));
        }
        if !(noise_halfwidth >= 0.0 && noise_halfwidth.is_finite()) {
            return Err(Error::InvalidMdp(format!(
                "noise_halfwidth must be nonnegative, got {noise_halfwidth}"
            )));
        }
        let len = n_states * n_actions * n_states;
        if kernel.len() != len || reward_mean.len() != len {
            return Err(Error::InvalidMdp(format!(
                "kernel and reward_mean need {len} entries ({n_states}x{n_actions}x{n_states})"
            )));
        }
        let mut cumulative = Vec::with_capacity(len);
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                let row = &kernel[base..base + n_states];
                if let Some(p) = row.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
                    return Err(Error::InvalidMdp(format!(
                        "kernel[{s}][{a}] has an invalid probability {p}"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "kernel[{s}][{a}] sums to {sum}, not 1"
                    )));
                }
                let mut acc = 0.0;
                for &p in row {
                    acc += p;
                    cumulative.push(acc);
                }
                for (sp, &m) in reward_mean[base..base + n_states].iter().enumerate() {
                    if !m.is_finite() || m.abs() + noise_halfwidth > r_max * (1.0 + 1e-12) {
                        return Err(Error::InvalidMdp(format!(
                            "reward_mean[{s}][{a}][{sp}] = {m} with noise {noise_halfwidth} exceeds r_max = {r_max}"
                        )));
                    }
                }
            }
        }
        Ok(Mdp {
            n_states,
            n_actions,
            gamma,
            r_max,
            noise_halfwidth,
            kernel,
            reward_mean,
            cumulative,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn noise_halfwidth(&self) -> f64 {
        self.noise_halfwidth
    }

    #[inline]
    fn row_base(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.n_states
    }

    /// Transition probabilities out of `(s, a)`.
    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let b = self.row_base(s, a);
        &self.kernel[b..b + self.n_states]
    }

    /// Mean rewards for `(s, a, s')` over all `s'`.
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let b = self.row_base(s, a);
        &self.reward_mean[b..b + self.n_states]
    }

    /// Draws `s' ~ P(.|s,a)` and a reward with the configured uniform noise.
    #[inline]
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> TransitionSample {
        let base = self.row_base(s, a);
        let cum = &self.cumulative[base..base + self.n_states];
        let u: f64 = rng.gen();
        // cum is nondecreasing, so counting entries <= u finds the first c > u
        // without a data-dependent branch
        let below = cum.iter().map(|&c| usize::from(c <= u)).sum::<usize>();
        let next_state = if below < self.n_states {
            below
        } else {
            // u landed in the rounding gap above the last cumulative value
            self.kernel[base..base + self.n_states]
                .iter()
                .rposition(|&p| p > 0.0)
                .unwrap_or(self.n_states - 1)
        };
        let mut reward = self.reward_mean[base + next_state];
        if self.noise_halfwidth > 0.0 {
            let v: f64 = rng.gen();
            reward += self.noise_halfwidth * (2.0 * v - 1.0);
        }
        TransitionSample { next_state, reward }
    }

    /// [`Mdp::sample_transition`] with index checks.
    pub fn try_sample_transition<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<TransitionSample> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::InvalidParam(format!(
                "pair ({s}, {a}) outside {}x{}",
                self.n_states, self.n_actions
            )));
        }
        Ok(self.sample_transition(s, a, rng))
    }

    /// [`Mdp::bellman_apply`] returning an error on a shape mismatch.
    pub fn try_bellman_apply(&self, q: &QTable) -> Result<QTable> {
        if (q.n_states(), q.n_actions()) != (self.n_states, self.n_actions) {
            return Err(Error::InvalidParam(format!(
                "Q-table is {}x{}, MDP is {}x{}",
                q.n_states(),
                q.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(self.bellman_apply(q))
    }

    /// Exact Bellman optimality operator.
    pub fn bellman_apply(&self, q: &QTable) -> QTable {
        self.check_shape(q);
        let best: Vec<f64> = (0..self.n_states).map(|s| q.max(s)).collect();
        let mut out = QTable::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.set(s, a, self.backup(s, a, &best));
            }
        }
        out
    }

    /// `sum_{s'} P(s'|s,a) (Rbar(s,a,s') + gamma * next_value[s'])`.
    pub fn backup(&self, s: usize, a: usize, next_value: &[f64]) -> f64 {
        self.kernel_row(s, a)
            .iter()
            .zip(self.reward_row(s, a))
            .zip(next_value)
            .map(|((p, r), v)| p * (r + self.gamma * v))
            .sum()
    }

    /// Value iteration from zero. The result is within `tol` of `Q*` in sup-norm.
    pub fn optimal_q(&self, tol: f64) -> Result<QTable> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidParam(format!("oracle tolerance must be positive, got {tol}")));
        }
        let stop = tol * (1.0 - self.gamma) / self.gamma;
        let mut q = QTable::zeros(self.n_states, self.n_actions);
        loop {
            let next = self.bellman_apply(&q);
            let change = next.sup_norm_diff(&q);
            q = next;
            if change <= stop {
                return Ok(q);
            }
        }
    }

    fn check_shape(&self, q: &QTable) {
        assert_eq!(
            (q.n_states(), q.n_actions()),
            (self.n_states, self.n_actions),
            "Q-table shape does not match the MDP"
        );
    }

    /// Random MDP: kernel rows from normalised uniform weights, mean rewards
    /// uniform in `[-(r_max - noise), r_max - noise]`.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        r_max: f64,
        noise_halfwidth: f64,
        seed: u64,
    ) -> Result<Self> {
        if noise_halfwidth > r_max {
            return Err(Error::InvalidMdp("noise_halfwidth cannot exceed r_max".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n_states * n_actions * n_states;
        let mut kernel = Vec::with_capacity(len);
        for _ in 0..n_states * n_actions {
            let w: Vec<f64> = (0..n_states).map(|_| 1.0 - rng.gen::<f64>()).collect();
            let total: f64 = w.iter().sum();
            kernel.extend(w.iter().map(|x| x / total));
        }
        let span = r_max - noise_halfwidth;
        let reward_mean = (0..len).map(|_| span * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        Mdp::new(n_states, n_actions, gamma, r_max, noise_halfwidth, kernel, reward_mean)
    }

    /// Two states, two actions. State 0 pays 0, state 1 pays 1 and absorbs.
    /// Action 1 moves from state 0 to state 1, action 0 stays put.
    pub fn two_state_chain(gamma: f64) -> Result<Self> {
        let kernel = vec![
            1.0, 0.0, // s0, stay
            0.0, 1.0, // s0, move
            0.0, 1.0, // s1
            0.0, 1.0, // s1
        ];
        let reward_mean = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        Mdp::new(2, 2, gamma, 1.0, 0.0, kernel, reward_mean)
    }

    /// Root state 0 leads to the fan-out state 1 under every action; every arm
    /// at state 1 leads to the absorbing state 2. All mean rewards are zero,
    /// so `Q* = 0` and any positive estimate is pure overestimation.
    pub fn fan_out(n_arms: usize, gamma: f64, noise_halfwidth: f64) -> Result<Self> {
        let n = 3;
        let mut kernel = vec![0.0; n * n_arms * n];
        for s in 0..n {
            let target = if s == 0 { 1 } else { 2 };
            for a in 0..n_arms {
                kernel[(s * n_arms + a) * n + target] = 1.0;
            }
        }
        let r_max = if noise_halfwidth > 0.0 { noise_halfwidth } else { 1.0 };
        Mdp::new(n, n_arms, gamma, r_max, noise_halfwidth, kernel, vec![0.0; n * n_arms * n])
    }

    /// One state, one action, constant mean reward.
    pub fn single_state(reward: f64, gamma: f64, noise_halfwidth: f64) -> Result<Self> {
        let r_max = (reward.abs() + noise_halfwidth).max(f64::MIN_POSITIVE);
        Mdp::new(1, 1, gamma, r_max, noise_halfwidth, vec![1.0], vec![reward])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDoc {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    #[serde(default)]
    noise_halfwidth: f64,
    kernel: Vec<Vec<Vec<f64>>>,
    reward_mean: Vec<Vec<Vec<f64>>>,
}

fn flatten(name: &str, nested: Vec<Vec<Vec<f64>>>, ns: usize, na: usize) -> Result<Vec<f64>> {
    if nested.len() != ns || nested.iter().any(|r| r.len() != na || r.iter().any(|c| c.len() != ns)) {
        return Err(Error::InvalidMdp(format!("{name} must have shape {ns}x{na}x{ns}")));
    }
    Ok(nested.into_iter().flatten().flatten().collect())
}

impl TryFrom<MdpDoc> for Mdp {
    type Error = Error;

    fn try_from(doc: MdpDoc) -> Result<Self> {
        let kernel = flatten("kernel", doc.kernel, doc.n_states, doc.n_actions)?;
        let reward_mean = flatten("reward_mean", doc.reward_mean, doc.n_states, doc.n_actions)?;
        Mdp::new(doc.n_states, doc.n_actions, doc.gamma, doc.r_max, doc.noise_halfwidth, kernel, reward_mean)
    }
}

impl From<Mdp> for MdpDoc {
    fn from(m: Mdp) -> Self {
        let nest = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            flat.chunks(m.n_actions * m.n_states)
                .map(|sa| sa.chunks(m.n_states).map(<[f64]>::to_vec).collect())
                .collect()
        };
        MdpDoc {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            r_max: m.r_max,
            noise_halfwidth: m.noise_halfwidth,
            kernel: nest(&m.kernel),
            reward_mean: nest(&m.reward_mean),
        }
    }
}

/// Dense `|S| x |A|` table of action values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        QTable { n_states, n_actions, values: vec![value; n_states * n_actions] }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::InvalidParam(format!(
                "expected {} values, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        Ok(QTable { n_states, n_actions, values })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Greedy action at `s`; ties go to the lowest index.
    #[inline]
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    #[inline]
    pub fn max(&self, s: usize) -> f64 {
        self.row(s)[self.argmax(s)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_norm_diff(&self, other: &QTable) -> f64 {
        assert_eq!((self.n_states, self.n_actions), (other.n_states, other.n_actions), "Q-table shapes differ");
        sup_norm_diff(&self.values, &other.values)
    }

    pub fn try_sup_norm_diff(&self, other: &QTable) -> Result<f64> {
        if (self.n_states, self.n_actions) != (other.n_states, other.n_actions) {
            return Err(Error::InvalidParam("Q-table shapes differ".into()));
        }
        Ok(sup_norm_diff(&self.values, &other.values))
    }
}

/// `max_i |x_i - y_i|` over two equally long slices.
#[inline]
pub fn sup_norm_diff(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_seven_split_frequency() {
        let m = Mdp::new(2, 1, 0.5, 1.0, 0.0, vec![0.3, 0.7, 0.5, 0.5], vec![0.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let ones = (0..n).filter(|_| m.sample_transition(0, 0, &mut rng).next_state == 1).count();
        assert!((ones as f64 / n as f64 - 0.7).abs() <= 0.002);
    }

    #[test]
    fn point_mass_and_single_state_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = Mdp::single_state(1.0, 0.5, 0.0).unwrap();
        let smp = one.sample_transition(0, 0, &mut rng);
        assert_eq!((smp.next_state, smp.reward), (0, 1.0));
        let swap = Mdp::new(2, 1, 0.5, 1.0, 0.0, vec![0.0, 1.0, 1.0, 0.0], vec![0.0; 4]).unwrap();
        assert_eq!(swap.sample_transition(0, 0, &mut rng).next_state, 1);
    }

    #[test]
    fn checked_variants_reject_bad_input() {
        let m = Mdp::random(3, 2, 0.5, 1.0, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.try_sample_transition(3, 0, &mut rng).is_err());
        assert!(m.try_sample_transition(0, 2, &mut rng).is_err());
        assert!(m.try_sample_transition(2, 1, &mut rng).is_ok());
        assert!(m.try_bellman_apply(&QTable::zeros(2, 2)).is_err());
        assert!(QTable::zeros(3, 2).try_sup_norm_diff(&QTable::zeros(2, 3)).is_err());
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(QTable::zeros(2, 2).sup_norm(), 0.0);
        let q = QTable::from_values(1, 3, vec![3.0, -5.0, 1.0]).unwrap();
        assert_eq!(q.sup_norm(), 5.0);
        assert_eq!(q.sup_norm_diff(&q), 0.0);
    }

    #[test]
    fn bellman_single_state_examples() {
        let m = Mdp::single_state(1.0, 0.5, 0.0).unwrap();
        assert_eq!(m.bellman_apply(&QTable::zeros(1, 1)).get(0, 0), 1.0);
        assert_eq!(m.bellman_apply(&QTable::filled(1, 1, 2.0)).get(0, 0), 2.0);
    }

    #[test]
    fn chain_matches_truncated_sum() {
        let m = Mdp::two_state_chain(0.9).unwrap();
        let q = m.optimal_q(1e-10).unwrap();
        // from state 0 the best plan moves at once and collects gamma^k from step 1 on
        let mut tail = 0.0;
        let mut g = 1.0;
        for _ in 0..10_000 {
            tail += g;
            g *= 0.9;
        }
        assert!((q.get(1, 0) - tail).abs() <= 1e-6);
        assert!((q.get(0, 1) - 0.9 * tail).abs() <= 1e-6);
        assert!(m.bellman_apply(&q).sup_norm_diff(&q) <= 1e-10);
    }

    #[test]
    fn sampled_rewards_unbiased() {
        let m = Mdp::new(1, 1, 0.5, 1.0, 0.6, vec![1.0], vec![0.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let rewards: Vec<f64> = (0..n).map(|_| m.sample_transition(0, 0, &mut rng).reward).collect();
        assert!(rewards.iter().all(|r| r.abs() <= 1.0));
        let mean = rewards.iter().sum::<f64>() / n as f64;
        let se = 0.6 / 3f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.25).abs() <= 3.0 * se);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let q = QTable::from_values(1, 3, vec![1.0, 1.0, 0.5]).unwrap();
        assert_eq!(q.argmax(0), 0);
        let q = QTable::from_values(1, 3, vec![0.0, 2.0, 2.0]).unwrap();
        assert_eq!(q.argmax(0), 1);
    }

    #[test]
    fn single_state_fixed_point() {
        let m = Mdp::single_state(1.0, 0.5, 0.0).unwrap();
        let q = m.optimal_q(1e-12).unwrap();
        assert!((q.get(0, 0) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = Mdp::new(1, 1, 0.5, 1.0, 0.0, vec![0.7], vec![0.0]).unwrap_err();
        assert!(err.to_string().contains("sums to 0.7"));
        let err = Mdp::new(2, 1, 0.5, 1.0, 0.0, vec![1.2, -0.2, 0.5, 0.5], vec![0.0; 4]).unwrap_err();
        assert!(err.to_string().contains("invalid probability"));
    }

    #[test]
    fn rejects_reward_overflow() {
        assert!(Mdp::new(1, 1, 0.5, 1.0, 0.3, vec![1.0], vec![0.8]).is_err());
        assert!(Mdp::new(1, 1, 0.5, 1.0, 0.2, vec![1.0], vec![0.8]).is_ok());
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(Mdp::new(1, 1, 1.0, 1.0, 0.0, vec![1.0], vec![0.0]).is_err());
        assert!(Mdp::new(1, 1, 0.0, 1.0, 0.0, vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = Mdp::random(3, 2, 0.7, 1.0, 0.25, 11).unwrap();
        let back = Mdp::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_shape_error() {
        let text = r#"{"n_states":2,"n_actions":1,"gamma":0.5,"r_max":1,
            "kernel":[[[1.0,0.0]]],"reward_mean":[[[0,0]],[[0,0]]]}"#;
        let err = Mdp::from_json(text).unwrap_err();
        assert!(err.to_string().contains("kernel must have shape"));
    }

    #[test]
    fn samples_stay_in_support_and_range() {
        let m = Mdp::random(4, 2, 0.9, 1.0, 0.4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let smp = m.sample_transition(2, 1, &mut rng);
            assert!(smp.next_state < 4);
            assert!(smp.reward.abs() <= m.r_max());
        }
    }

    #[test]
    fn sampled_frequencies_match_kernel() {
        let kernel = vec![0.2, 0.5, 0.3, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let m = Mdp::new(3, 1, 0.5, 1.0, 0.0, kernel, vec![0.0; 9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[m.sample_transition(0, 0, &mut rng).next_state] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            let f = *c as f64 / n as f64;
            // 5 binomial standard deviations
            assert!((f - p).abs() < 5.0 * (p * (1.0 - p) / n as f64).sqrt());
        }
    }
}
