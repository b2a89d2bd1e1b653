//! Empirical covering numbers of asynchronous update streams.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, ExperimentConfig, SeedSpec};
use super::trace::{run_trial_with_stride, TrialRng, TrialTrace};
use crate::error::{Error, Result};
use crate::learners::{Algorithm, Table};

/// Covering number of one table's stream; `Infinite` when some window never
/// covers every pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoveringNumber {
    Finite(u64),
    Infinite,
}

impl CoveringNumber {
    pub fn finite(self) -> Option<u64> {
        match self {
            CoveringNumber::Finite(l) => Some(l),
            CoveringNumber::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covering {
    pub a: CoveringNumber,
    pub b: CoveringNumber,
    /// The larger of the two.
    pub l: CoveringNumber,
}

/// One asynchronous update: which table moved and which pair (`s * |A| + a`).
pub type Visit = (Table, usize);

/// Smallest `W` such that every length-`W` window of `stream` contains all of
/// `0..n_pairs`.
pub fn window_cover(stream: &[usize], n_pairs: usize) -> CoveringNumber {
    let n = stream.len();
    if n == 0 || n_pairs == 0 {
        return CoveringNumber::Infinite;
    }
    // need[i]: shortest window starting at i that covers everything.
    let mut need = vec![u64::MAX; n];
    let mut counts = vec![0u64; n_pairs];
    let mut distinct = 0;
    let mut j = 0;
    for (i, slot) in need.iter_mut().enumerate() {
        while distinct < n_pairs && j < n {
            if counts[stream[j]] == 0 {
                distinct += 1;
            }
            counts[stream[j]] += 1;
            j += 1;
        }
        if distinct == n_pairs {
            *slot = (j - i) as u64;
        }
        counts[stream[i]] -= 1;
        if counts[stream[i]] == 0 {
            distinct -= 1;
        }
    }
    let mut prefix_max = need;
    for i in 1..n {
        prefix_max[i] = prefix_max[i].max(prefix_max[i - 1]);
    }
    for w in 1..=n {
        if prefix_max[n - w] <= w as u64 {
            return CoveringNumber::Finite(w as u64);
        }
    }
    CoveringNumber::Infinite
}

pub fn measure_covering(stream: &[Visit], n_pairs: usize) -> Result<Covering> {
    if stream.is_empty() {
        return Err(Error::InvalidParam("covering needs a non-empty visit stream".into()));
    }
    if let Some((_, p)) = stream.iter().find(|(_, p)| *p >= n_pairs) {
        return Err(Error::InvalidParam(format!("visit to pair {p} outside 0..{n_pairs}")));
    }
    let pick = |t: Table| stream.iter().filter(|(x, _)| *x == t).map(|(_, p)| *p).collect::<Vec<_>>();
    let a = window_cover(&pick(Table::A), n_pairs);
    let b = window_cover(&pick(Table::B), n_pairs);
    let l = match (a, b) {
        (CoveringNumber::Finite(x), CoveringNumber::Finite(y)) => CoveringNumber::Finite(x.max(y)),
        _ => CoveringNumber::Infinite,
    };
    Ok(Covering { a, b, l })
}

/// Visit stream of an asynchronous trace recorded with stride 1.
pub fn visit_stream(trace: &TrialTrace, n_actions: usize) -> Result<Vec<Visit>> {
    if trace.stride != 1 {
        return Err(Error::Config(format!("covering needs stride 1, trace has stride {}", trace.stride)));
    }
    trace
        .records
        .iter()
        .filter(|r| r.steps > 0)
        .map(|r| {
            let (s, a) = r
                .visited
                .ok_or_else(|| Error::Config("covering needs an asynchronous trace with visited pairs".into()))?;
            let table = if r.a_updates > 0 { Table::A } else { Table::B };
            Ok((table, s * n_actions + a))
        })
        .collect()
}

/// Updates of `pair` by either table during iterations `t1..=t2` (1-based).
pub fn visits_between(stream: &[Visit], pair: usize, t1: u64, t2: u64) -> u64 {
    let lo = (t1.max(1) - 1) as usize;
    let hi = (t2 as usize).min(stream.len());
    if lo >= hi {
        return 0;
    }
    stream[lo..hi].iter().filter(|(_, p)| *p == pair).count() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub pair: usize,
    pub t: u64,
    pub k: u64,
    pub visits: u64,
    pub holds: bool,
}

/// Samples `n` windows `[t, t + 2kL - 1]` that fit in the stream and checks
/// that each pair is updated at least `k` times in them.
pub fn sa2l_spot_check<R: Rng + ?Sized>(
    stream: &[Visit],
    n_pairs: usize,
    covering_l: u64,
    n: usize,
    max_k: u64,
    rng: &mut R,
) -> Result<Vec<SpotCheck>> {
    let len = stream.len() as u64;
    if covering_l == 0 || 2 * covering_l > len {
        return Err(Error::InvalidParam(format!(
            "stream of {len} updates too short for windows of 2L = {}",
            2 * covering_l
        )));
    }
    let k_cap = (len / (2 * covering_l)).min(max_k.max(1));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let pair = rng.gen_range(0..n_pairs);
        let k = rng.gen_range(1..=k_cap);
        let width = 2 * k * covering_l;
        let t = rng.gen_range(1..=len - width + 1);
        let visits = visits_between(stream, pair, t, t + width - 1);
        out.push(SpotCheck { pair, t, k, visits, holds: visits >= k });
    }
    Ok(out)
}

/// Spot checks per seed in [`covering_experiment`].
pub const SPOT_CHECKS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCovering {
    pub seed: u64,
    pub covering: Covering,
    /// Empty when the measured covering number is infinite.
    pub spot_checks: Vec<SpotCheck>,
    pub spot_checks_hold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub iterations: u64,
    pub n_pairs: usize,
    pub per_seed: Vec<SeedCovering>,
    /// Largest measured covering number over the seeds.
    pub covering_l: CoveringNumber,
    pub passed: bool,
}

impl CoveringReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation cannot fail")
    }
}

/// Measures the covering number of asynchronous runs and spot-checks the
/// `2kL`-window visit property with windows drawn from a seed-derived stream.
pub fn covering_experiment(exp: &Experiment, seeds: &[u64], parallel: usize) -> Result<CoveringReport> {
    if exp.config.algorithm != Algorithm::AsyncDouble {
        return Err(Error::Config("algorithm: covering needs async-double".into()));
    }
    if exp.iterations == 0 {
        return Err(Error::Config("horizon: covering needs at least one iteration".into()));
    }
    let n_pairs = exp.mdp.n_pairs();
    let one = |seed: u64| -> Result<SeedCovering> {
        let mut e = exp.clone();
        e.config.trackers = false;
        let trace = run_trial_with_stride(&e, seed, 1)?;
        let stream = visit_stream(&trace, exp.mdp.n_actions())?;
        let covering = measure_covering(&stream, n_pairs)?;
        let spot_checks = match covering.l {
            CoveringNumber::Finite(l) if 2 * l <= stream.len() as u64 => {
                let mut rng = TrialRng::seed_from_u64(seed ^ 0x5a5a_5a5a_5a5a_5a5a);
                sa2l_spot_check(&stream, n_pairs, l, SPOT_CHECKS, 64, &mut rng)?
            }
            _ => Vec::new(),
        };
        let spot_checks_hold = !spot_checks.is_empty() && spot_checks.iter().all(|c| c.holds);
        Ok(SeedCovering { seed, covering, spot_checks, spot_checks_hold })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::Config(format!("parallel: {e}")))?;
    let per_seed: Vec<SeedCovering> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| one(seed).map_err(|e| Error::Trial { seed, cause: Box::new(e) }))
            .collect::<Result<_>>()
    })?;
    let covering_l = per_seed
        .iter()
        .try_fold(0u64, |m, s| s.covering.l.finite().map(|l| m.max(l)))
        .map_or(CoveringNumber::Infinite, CoveringNumber::Finite);
    let passed = covering_l.finite().is_some() && per_seed.iter().all(|s| s.spot_checks_hold);
    let mut config = exp.config.clone();
    config.seeds = SeedSpec::List(seeds.to_vec());
    Ok(CoveringReport {
        schema_version: super::ensemble::SCHEMA_VERSION,
        config,
        iterations: exp.iterations,
        n_pairs,
        per_seed,
        covering_l,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute(stream: &[usize], n_pairs: usize) -> CoveringNumber {
        let n = stream.len();
        for w in 1..=n {
            let ok = (0..=n - w).all(|i| {
                let mut seen = vec![false; n_pairs];
                stream[i..i + w].iter().for_each(|&p| seen[p] = true);
                seen.iter().all(|&x| x)
            });
            if ok {
                return CoveringNumber::Finite(w as u64);
            }
        }
        CoveringNumber::Infinite
    }

    #[test]
    fn round_robin_cycle() {
        let s: Vec<usize> = (0..40).map(|i| i % 4).collect();
        assert_eq!(window_cover(&s, 4), CoveringNumber::Finite(4));
    }

    #[test]
    fn skipped_pair_never_covers() {
        let s: Vec<usize> = (0..40).map(|i| i % 3).collect();
        assert_eq!(window_cover(&s, 4), CoveringNumber::Infinite);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n_pairs = rng.gen_range(1..5);
            let len = rng.gen_range(1..60);
            let s: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n_pairs)).collect();
            assert_eq!(window_cover(&s, n_pairs), brute(&s, n_pairs), "{s:?}");
        }
    }

    #[test]
    fn tables_measured_separately() {
        let stream: Vec<Visit> =
            (0..16).map(|i| (if i % 2 == 0 { Table::A } else { Table::B }, (i / 2) % 4)).collect();
        let c = measure_covering(&stream, 4).unwrap();
        assert_eq!(c.a, CoveringNumber::Finite(4));
        assert_eq!(c.b, CoveringNumber::Finite(4));
        assert_eq!(c.l, CoveringNumber::Finite(4));
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(measure_covering(&[], 4).is_err());
    }

    #[test]
    fn uniform_visits_satisfy_sa2l() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stream: Vec<Visit> = (0..20_000)
            .map(|_| (if rng.gen::<bool>() { Table::A } else { Table::B }, rng.gen_range(0..8)))
            .collect();
        let l = measure_covering(&stream, 8).unwrap().l.finite().unwrap();
        let checks = sa2l_spot_check(&stream, 8, l, 100, 20, &mut rng).unwrap();
        assert!(checks.iter().all(|c| c.holds));
    }

    fn async_exp(exploration: crate::learners::Exploration, iterations: u64) -> Experiment {
        use crate::harness::config::{Horizon, MdpSource, RandomMdpSpec};
        let mut cfg = ExperimentConfig::new(MdpSource::Random(RandomMdpSpec {
            n_states: 2,
            n_actions: 2,
            gamma: 0.6,
            r_max: 1.0,
            noise_halfwidth: 0.2,
            seed: 3,
        }));
        cfg.algorithm = Algorithm::AsyncDouble;
        cfg.exploration = exploration;
        cfg.horizon = Horizon::Iterations(iterations);
        Experiment::new(&cfg, None).unwrap()
    }

    #[test]
    fn round_robin_run_covers_exactly() {
        let exp = async_exp(crate::learners::Exploration::RoundRobin, 2000);
        let rep = covering_experiment(&exp, &[1, 2], 1).unwrap();
        assert_eq!(rep.covering_l, CoveringNumber::Finite(4));
        assert!(rep.passed);
    }

    #[test]
    fn uniform_run_is_finite() {
        let exp = async_exp(crate::learners::Exploration::UniformRandom, 5000);
        let rep = covering_experiment(&exp, &[7], 1).unwrap();
        assert!(rep.covering_l.finite().is_some());
        assert!(rep.passed);
    }
}
