//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,7,12` restricts the run to the listed criteria.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use doubleq::harness::covering::CoveringNumber;
use doubleq::harness::ensemble::{run_ensemble, EnsembleReport, RunOptions};
use doubleq::harness::trace::run_trial_with_stride;
use doubleq::harness::{
    covering_experiment, overestimation_probe, Experiment, ExperimentConfig, Horizon, MdpSource, RandomMdpSpec,
};
use doubleq::learners::{Algorithm, Exploration, LearnerState, LearningRate};
use doubleq::mdp::{sup_norm_diff, Mdp, QTable};
use doubleq::theory::{
    d_seq, derive_constants, g_seq, m_star, prod_help_check, tau_help_check, tau_help_threshold, CCondition,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn load_config(name: &str) -> (ExperimentConfig, std::path::PathBuf) {
    let path = configs_dir().join(name);
    let text = std::fs::read_to_string(&path).expect("shipped config");
    (ExperimentConfig::from_json(&text).expect("valid shipped config"), path)
}

fn desk_mdp_spec(noise: f64) -> MdpSource {
    MdpSource::Random(RandomMdpSpec { n_states: 4, n_actions: 2, gamma: 0.5, r_max: 1.0, noise_halfwidth: noise, seed: 0 })
}

/// Finite-horizon backward recursion: `Q_h = R + gamma P max Q_{h-1}`, `Q_0 = 0`.
fn truncated_horizon_q(mdp: &Mdp, horizon: usize) -> Vec<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut q = vec![0.0; ns * na];
    for _ in 0..horizon {
        let best: Vec<f64> =
            (0..ns).map(|s| q[s * na..(s + 1) * na].iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let p = mdp.kernel_row(s, a);
                let r = mdp.reward_row(s, a);
                next[s * na + a] = (0..ns).map(|sp| p[sp] * (r[sp] + g * best[sp])).sum();
            }
        }
        q = next;
    }
    q
}

fn oracle_exactness() -> Outcome {
    let single = Mdp::single_state(1.0, 0.5, 0.0).unwrap().optimal_q(1e-12).unwrap();
    let single_err = (single.get(0, 0) - 2.0).abs();
    let mdp = Mdp::random(6, 3, 0.9, 1.0, 0.0, 17).unwrap();
    let q = mdp.optimal_q(1e-12).unwrap();
    // 0.9^400 * 10 is far below the tolerance
    let brute = truncated_horizon_q(&mdp, 400);
    let err = sup_norm_diff(q.values(), &brute);
    outcome(
        single_err <= 1e-10 && err <= 1e-6,
        format!("single-state |Q*-2| = {single_err:.2e} (tol 1e-10); random 6x3 vs truncated horizon {err:.2e} (tol 1e-6)"),
    )
}

fn contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::NEG_INFINITY;
    for m in 0..5u64 {
        let gamma = rng.gen_range(0.35..0.99);
        let mdp = Mdp::random(5, 3, gamma, 1.0, 0.0, 100 + m).unwrap();
        for _ in 0..100 {
            let mut table = || {
                let scale = rng.gen_range(0.1..20.0);
                QTable::from_values(5, 3, (0..15).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
            };
            let (q1, q2) = (table(), table());
            let lhs = mdp.bellman_apply(&q1).sup_norm_diff(&mdp.bellman_apply(&q2));
            worst = worst.max(lhs - gamma * q1.sup_norm_diff(&q2));
        }
    }
    outcome(worst <= 1e-12, format!("500 pairs, max ||TQ-TQ'|| - gamma||Q-Q'|| = {worst:.2e} (tol 1e-12)"))
}

fn boundedness() -> Outcome {
    let mut bad = 0;
    let mut worst_norm: f64 = 0.0;
    let mut worst_err: f64 = 0.0;
    for alg in [Algorithm::Vanilla, Algorithm::SyncDouble, Algorithm::AsyncDouble] {
        let mut cfg = ExperimentConfig::new(desk_mdp_spec(0.5));
        cfg.algorithm = alg;
        cfg.horizon = Horizon::Iterations(100_000);
        cfg.schedule.c_conditions = Some(vec![CCondition::SyncG]);
        let exp = Experiment::new(&cfg, None).unwrap();
        for seed in 0..50 {
            let tr = run_trial_with_stride(&exp, seed, 100_000).unwrap();
            worst_norm = worst_norm.max(tr.max_table_norm);
            worst_err = worst_err.max(tr.max_err);
            if tr.max_table_norm > 2.0 + 1e-12 || tr.max_err > 4.0 + 1e-12 {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0,
        format!("150 runs x 1e5 steps: {bad} runs out of bounds; max ||Q|| = {worst_norm:.4} (<= 2), max ||Q-Q*|| = {worst_err:.4} (<= 4)"),
    )
}

fn drift_contraction() -> Outcome {
    let mdp = Mdp::random(4, 2, 0.5, 1.0, 0.5, 0).unwrap();
    let lr = LearningRate::new(0.8).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0u64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = LearnerState::new(Algorithm::SyncDouble, &mdp);
        for _ in 0..10_000 {
            st.sync_double_step(&mdp, lr, &mut rng);
            let u = sup_norm_diff(st.q_b().unwrap().values(), st.q_a().values());
            let h = st.drift_means(&mdp).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            worst = worst.max(h - 0.75 * u);
            checked += 1;
        }
    }
    outcome(worst <= 1e-12, format!("{checked} steps, max |h| - 0.75 ||u^BA|| = {worst:.2e} (tol 1e-12)"))
}

fn sandwich_config() -> Experiment {
    let mut cfg = ExperimentConfig::new(desk_mdp_spec(0.5));
    cfg.horizon = Horizon::Iterations(100_000);
    cfg.schedule.c_conditions = Some(vec![CCondition::SyncG]);
    cfg.trackers = true;
    cfg.stride = Some(100);
    Experiment::new(&cfg, None).unwrap()
}

fn sandwich_report(parallel: usize) -> EnsembleReport {
    let seeds: Vec<u64> = (0..20).collect();
    run_ensemble(&sandwich_config(), &seeds, &RunOptions { parallel, trace_dir: None }).unwrap()
}

fn sandwich() -> Outcome {
    let rep = sandwich_report(0);
    let checked: u64 = rep.trials.iter().map(|t| t.sandwich.as_ref().unwrap().u_checked).sum();
    let r_checked: u64 = rep.trials.iter().map(|t| t.sandwich.as_ref().unwrap().r_checked).sum();
    let s = &rep.summary;
    outcome(
        s.sandwich_violations == 0 && checked > 0 && r_checked > 0,
        format!(
            "20 seeds x 1e5 steps: {} violations; {checked} u-steps and {r_checked} r-steps checked; max excess {:.2e} (tol 1e-9)",
            s.sandwich_violations,
            s.sandwich_max_excess.unwrap_or(0.0)
        ),
    )
}

fn numeric_inequalities() -> Outcome {
    let mut prod_bad = 0;
    let mut prod_n = 0;
    for t1 in 2..=50u64 {
        for t2 in t1 + 1..=200 {
            for k in 1..=9 {
                let w = k as f64 / 10.0;
                let (p, b) = prod_help_check(t1, t2, w).unwrap();
                prod_n += 1;
                if p > b {
                    prod_bad += 1;
                }
            }
        }
    }
    let mut tau_bad = 0;
    let mut tau_n = 0;
    let mut a = 1.5;
    while a <= 20.0 + 1e-9 {
        let mut b = 1.0;
        while b <= 4.0 + 1e-9 {
            for f in [1.0, 1.5, 2.0, 5.0] {
                let tau = tau_help_threshold(a, b) * f;
                let (lhs, rhs) = tau_help_check(a, b, tau).unwrap();
                tau_n += 1;
                if lhs > rhs {
                    tau_bad += 1;
                }
            }
            b += 0.5;
        }
        a += 0.5;
    }
    outcome(
        prod_bad == 0 && tau_bad == 0,
        format!("product bound {prod_bad}/{prod_n} violations; tau bound {tau_bad}/{tau_n} violations"),
    )
}

fn theory_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_beta: f64 = 0.0;
    let mut worst_gamma: f64 = 0.0;
    let mut worst_seq: f64 = 0.0;
    for _ in 0..1000 {
        let gamma = rng.gen_range(1.0 / 3.0..1.0);
        if gamma <= 1.0 / 3.0 {
            continue;
        }
        let k = derive_constants(gamma, 1.0).unwrap();
        worst_beta = worst_beta.max((k.beta - k.xi).abs());
        worst_gamma = worst_gamma.max((k.gamma_prime - k.gamma_dprime).abs());
        for q in 0..=100 {
            let g = g_seq(q, &k);
            worst_seq = worst_seq.max((k.sigma * d_seq(q, &k) - g).abs() / g);
        }
    }
    let k = derive_constants(0.5, 1.0).unwrap();
    let m = m_star(0.5, 0.1, k.v_max);
    let d = d_seq(m as u32, &k);
    outcome(
        worst_beta <= 1e-14 && worst_gamma <= 1e-14 && worst_seq <= 1e-12 && m == 36 && d <= 0.1,
        format!(
            "|beta-xi| {worst_beta:.1e}, |gamma'-gamma''| {worst_gamma:.1e} (tol 1e-14); sigma D vs G rel {worst_seq:.1e} (tol 1e-12); m* = {m}, D_36 = {d:.4}"
        ),
    )
}

/// Both desk-scale criteria come from one ensemble run to the epsilon = 0.25
/// schedule end; the envelope criterion reads the first m*(0.5) blocks.
fn desk_scale(report: &EnsembleReport) -> (Outcome, Outcome) {
    let consts = report.derived.constants;
    let blocks = m_star(0.5, 0.5, consts.v_max) as usize;
    let n = report.trials.len();
    let mut g_fail = 0;
    let mut contained = true;
    for t in &report.trials {
        let g = t.envelope_g.as_ref().unwrap();
        let sd = t.envelope_sigma_d.as_ref().unwrap();
        let g_ok = g.iter().take(blocks).all(|&x| x);
        let sd_ok = sd.iter().take(blocks).all(|&x| x);
        if !g_ok {
            g_fail += 1;
        }
        if g_ok && !sd_ok {
            contained = false;
        }
    }
    let g_rate = g_fail as f64 / n as f64;
    let env = outcome(
        n == 200 && g_rate <= 0.05 && contained,
        format!(
            "{n} seeds, {blocks} blocks, c = {:.4}: G-violation rate {g_rate:.3} (<= 0.05), containment {contained}",
            report.derived.c.unwrap_or(f64::NAN)
        ),
    );
    let ok = report.trials.iter().filter(|t| t.final_err_a <= 0.25).count();
    let rate = ok as f64 / n as f64;
    let conv = outcome(
        n == 200 && rate >= 0.95,
        format!(
            "T = {} iterations, ||Q^A_T - Q*|| <= 0.25 in {ok}/{n} seeds (>= 95%); max error {:.2e}",
            report.derived.iterations, report.summary.max_final_err
        ),
    );
    (env, conv)
}

fn desk_scale_report() -> EnsembleReport {
    let (cfg, path) = load_config("acceptance.json");
    let exp = Experiment::new(&cfg, path.parent()).unwrap();
    run_ensemble(&exp, &cfg.seeds.seeds(), &RunOptions::default()).unwrap()
}

fn update_split() -> Outcome {
    let mut cfg = ExperimentConfig::new(desk_mdp_spec(0.5));
    cfg.horizon = Horizon::Iterations(1_000_000);
    cfg.schedule.c_conditions = Some(vec![CCondition::SyncG]);
    cfg.stride = Some(1000);
    let exp = Experiment::new(&cfg, None).unwrap();
    let seeds: Vec<u64> = (0..100).collect();
    let rep = run_ensemble(&exp, &seeds, &RunOptions::default()).unwrap();
    let split_ok = rep.trials.iter().filter(|t| t.split_ok == Some(true)).count();
    let s = &rep.summary;
    let block_rate = s.block_pass_rate.unwrap_or(0.0);
    outcome(
        split_ok >= 99 && block_rate >= 0.95 && s.block_pairs > 0,
        format!(
            "|I^A - T/2| <= 3 sqrt(T/4) in {split_ok}/100 seeds (>= 99); I^A_k >= (kappa/2) len in {:.4} of {} (seed, block) pairs (>= 0.95)",
            block_rate, s.block_pairs
        ),
    )
}

fn covering_config(exploration: Exploration) -> Experiment {
    let mut cfg = ExperimentConfig::new(MdpSource::Random(RandomMdpSpec {
        n_states: 3,
        n_actions: 3,
        gamma: 0.6,
        r_max: 1.0,
        noise_halfwidth: 0.2,
        seed: 5,
    }));
    cfg.algorithm = Algorithm::AsyncDouble;
    cfg.exploration = exploration;
    cfg.horizon = Horizon::Iterations(20_000);
    Experiment::new(&cfg, None).unwrap()
}

fn covering_reports() -> (String, String) {
    let rr = covering_experiment(&covering_config(Exploration::RoundRobin), &[0], 0).unwrap();
    let un = covering_experiment(&covering_config(Exploration::UniformRandom), &[0], 0).unwrap();
    (rr.to_json(), un.to_json())
}

fn covering() -> Outcome {
    let rr = covering_experiment(&covering_config(Exploration::RoundRobin), &[0], 0).unwrap();
    let un = covering_experiment(&covering_config(Exploration::UniformRandom), &[0], 0).unwrap();
    let spots: Vec<_> = rr.per_seed.iter().chain(&un.per_seed).flat_map(|s| s.spot_checks.iter()).collect();
    let held = spots.iter().filter(|c| c.holds).count();
    outcome(
        rr.covering_l == CoveringNumber::Finite(9) && un.covering_l.finite().is_some() && held == spots.len() && spots.len() == 200,
        format!(
            "round-robin L = {:?} (expect 9); uniform L = {:?}; 2kL window property held in {held}/{} spot checks",
            rr.covering_l,
            un.covering_l,
            spots.len()
        ),
    )
}

fn overestimate_report() -> doubleq::harness::OverestimateReport {
    let (cfg, path) = load_config("overestimate.json");
    let exp = Experiment::new(&cfg, path.parent()).unwrap();
    overestimation_probe(&exp, &cfg.seeds.seeds(), 0).unwrap()
}

fn overestimation() -> Outcome {
    let rep = overestimate_report();
    let v = &rep.vanilla;
    let d = &rep.difference;
    outcome(
        rep.per_seed.len() == 500 && rep.iterations == 10_000 && v.mean > 3.0 * v.std_err && d.mean > 3.0 * d.std_err,
        format!(
            "vanilla bias {:.4} (3 se {:.4}); double bias {:.4}; paired difference {:.4} (3 se {:.4})",
            v.mean,
            3.0 * v.std_err,
            rep.double.mean,
            d.mean,
            3.0 * d.std_err
        ),
    )
}

fn determinism() -> Outcome {
    let a = sandwich_report(1).to_json();
    let b = sandwich_report(0).to_json();
    let (c1, c2) = covering_reports();
    let (c3, c4) = covering_reports();
    let o1 = overestimate_report().to_json();
    let o2 = overestimate_report().to_json();
    let same = [a == b, c1 == c3 && c2 == c4, o1 == o2];
    outcome(
        same.iter().all(|&x| x),
        format!("byte-identical reports: sandwich ensemble {}, covering {}, overestimation {}", same[0], same[1], same[2]),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|v| v.contains(&n));

    type Criterion = (u32, &'static str, f64, fn() -> Outcome);
    let simple: [Criterion; 11] = [
        (1, "oracle exactness", 1.0, oracle_exactness),
        (2, "contraction", 1.0, contraction),
        (3, "boundedness", 120.0, boundedness),
        (4, "drift contraction", 60.0, drift_contraction),
        (5, "sandwich recursions", 300.0, sandwich),
        (6, "numeric inequalities", 10.0, numeric_inequalities),
        (7, "theory identities", 1.0, theory_identities),
        (10, "update split", 300.0, update_split),
        (11, "covering", 10.0, covering),
        (12, "overestimation probe", 300.0, overestimation),
        (13, "determinism", f64::INFINITY, determinism),
    ];
    let mut results: Vec<(u32, &str, Outcome, f64, f64)> = Vec::new();
    let line = |n: u32, name: &str, o: &Outcome, secs: f64, budget: f64| {
        let timing = if secs <= budget {
            format!("{secs:.1} s")
        } else {
            format!("{secs:.1} s, over the {budget:.0} s budget on this machine")
        };
        println!(
            "criterion {n:>2} {:<22} {}  {} [{timing}]",
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    for (n, name, budget, f) in simple {
        if !wanted(n) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        let secs = t0.elapsed().as_secs_f64();
        line(n, name, &o, secs, budget);
        results.push((n, name, o, secs, budget));
    }
    if wanted(8) || wanted(9) {
        let t0 = Instant::now();
        let rep = desk_scale_report();
        let secs = t0.elapsed().as_secs_f64();
        let (env, conv) = desk_scale(&rep);
        for (n, name, o) in [(8, "envelope validation", env), (9, "convergence", conv)] {
            if wanted(n) {
                line(n, name, &o, secs, 900.0);
                results.push((n, name, o, secs, 900.0));
            }
        }
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
