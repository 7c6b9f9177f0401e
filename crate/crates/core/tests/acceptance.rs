//! Acceptance criteria A1–A9. Prints one PASS/FAIL line per criterion and exits non-zero if any
//! criterion fails.

use std::time::{Duration, Instant};

use ldlr_core::dataset::{synthesize, SynthSpec};
use ldlr_core::graph::{laplacian, learn_affinity, pairwise_sq_dists, project_simplex, row_kkt_residuals};
use ldlr_core::harness::{compare_arms, Arm, DataSource, ExperimentConfig};
use ldlr_core::metrics::{critical_difference, friedman, score};
use ldlr_core::msvr::{augmented_gram, compute_weights, fit, residual_norms, stationarity_residual};
use ldlr_core::recovery::{nuclear_norm, recover, soft_threshold, svt};
use ldlr_core::{KernelSpec, Matrix, Measure, MsvrConfig, RankTable, RecoveryConfig};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    out.detail.push_str(&format!("; {:.2}s", elapsed.as_secs_f64()));
    if let Some(limit) = limit {
        if elapsed > limit {
            out.pass = false;
            out.detail.push_str(&format!(" exceeds {}s", limit.as_secs()));
        }
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

const GRID_STEPS: [f64; 6] = [-3e-3, -2e-3, -1e-3, 1e-3, 2e-3, 3e-3];

fn a1_prox_operators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let x = gaussian(&mut rng, 5, 4);
        let tau = rng.random_range(0.05..2.0);

        let prox_l1 = |y: &Matrix| tau * y.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * (y - &x).norm_squared();
        let y = soft_threshold(&x, tau);
        let base = prox_l1(&y);
        for k in 0..y.len() {
            for step in GRID_STEPS {
                let mut p = y.clone();
                p[k] += step;
                worst = worst.max(base - prox_l1(&p));
            }
        }

        let prox_nuc = |y: &Matrix| tau * nuclear_norm(y) + 0.5 * (y - &x).norm_squared();
        let y = svt(&x, tau).unwrap();
        let base = prox_nuc(&y);
        let svd = x.clone().svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let shrunk = svd.singular_values.map(|s| (s - tau).max(0.0));
        for k in 0..shrunk.len() {
            for step in GRID_STEPS {
                let mut s = shrunk.clone();
                s[k] += step;
                let p = &u * Matrix::from_diagonal(&s) * &v_t;
                worst = worst.max(base - prox_nuc(&p));
            }
        }
        for k in 0..y.len() {
            for step in GRID_STEPS {
                let mut p = y.clone();
                p[k] += step;
                worst = worst.max(base - prox_nuc(&p));
            }
        }
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("largest improvement by a perturbation {worst:.2e}"),
    }
}

fn a2_simplex_and_kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_grid = 0.0f64;
    for _ in 0..1000 {
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let p = project_simplex(&v);
        let mut best = (f64::INFINITY, [0.0; 3]);
        for a in 0..=1000 {
            for b in 0..=(1000 - a) {
                let q = [a as f64 * 1e-3, b as f64 * 1e-3, (1000 - a - b) as f64 * 1e-3];
                let d = (0..3).map(|i| (q[i] - v[i]).powi(2)).sum::<f64>();
                if d < best.0 {
                    best = (d, q);
                }
            }
        }
        let gap = (0..3).map(|i| (p[i] - best.1[i]).abs()).fold(0.0, f64::max);
        worst_grid = worst_grid.max(gap);
    }

    let mut worst_kkt = 0.0f64;
    for (n, seed) in [(5, 1), (20, 2), (50, 3), (50, 4)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, n, 3);
        for gamma in [0.05, 1.0, 10.0] {
            let graph = learn_affinity(&x, gamma).unwrap();
            let dists = pairwise_sq_dists(&x);
            for i in 0..n {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let u: Vec<f64> = others.iter().map(|&j| dists[(i, j)]).collect();
                let a: Vec<f64> = others.iter().map(|&j| graph.affinity[(i, j)]).collect();
                let (stationarity, min_multiplier) = row_kkt_residuals(&u, &a, gamma);
                worst_kkt = worst_kkt.max(stationarity).max(-min_multiplier);
                let sum: f64 = a.iter().sum();
                worst_kkt = worst_kkt.max((sum - 1.0).abs());
            }
        }
    }
    Outcome {
        pass: worst_grid <= 2e-3 && worst_kkt <= 1e-8,
        detail: format!("grid gap {worst_grid:.2e}, KKT residual {worst_kkt:.2e}"),
    }
}

fn a3_spec(seed: u64) -> SynthSpec {
    SynthSpec { n: 200, m: 10, d: 8, rank: 3, error_fraction: 0.05, seed }
}

struct PlantedRun {
    ratio: f64,
    jaccard: f64,
    feasibility: f64,
    iterations: usize,
}

fn planted_runs() -> Vec<PlantedRun> {
    (1..=10)
        .map(|seed| {
            let s = synthesize(&a3_spec(seed)).unwrap();
            let lap = laplacian(&learn_affinity(s.corrupted.features(), 1.0).unwrap());
            let d = s.corrupted.labels();
            let r = recover(d, &lap, &RecoveryConfig::default()).unwrap();
            let truth = s.clean.labels();
            let ratio = (&r.d_tilde - truth).norm() / (d - truth).norm();
            let (mut inter, mut union) = (0usize, 0usize);
            for (e, p) in r.error.iter().zip(s.planted_error.iter()) {
                let (a, b) = (*e != 0.0, *p != 0.0);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            let feasibility = (&r.d_tilde + &r.error - d).amax().max((&r.d_tilde - &r.z).amax());
            PlantedRun {
                ratio,
                jaccard: inter as f64 / union as f64,
                feasibility,
                iterations: r.iterations,
            }
        })
        .collect()
}

fn a3_planted_recovery(runs: &[PlantedRun]) -> Outcome {
    let good_ratio = runs.iter().filter(|r| r.ratio <= 0.5).count();
    let good_support = runs.iter().filter(|r| r.jaccard >= 0.5).count();
    let worst_ratio = runs.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let best_jaccard = runs.iter().map(|r| r.jaccard).fold(0.0, f64::max);
    Outcome {
        pass: good_ratio >= 9 && good_support == runs.len(),
        detail: format!(
            "error ratio ≤ 0.5 in {good_ratio}/10 (worst {worst_ratio:.3}); support Jaccard ≥ 0.5 in {good_support}/10 (best {best_jaccard:.3})"
        ),
    }
}

fn a4_feasibility(runs: &[PlantedRun]) -> Outcome {
    let worst = runs.iter().map(|r| r.feasibility).fold(0.0, f64::max);
    let iters = runs.iter().map(|r| r.iterations).max().unwrap_or(0);
    Outcome {
        pass: worst <= 1e-7 && iters <= 500,
        detail: format!("worst residual {worst:.2e}, most iterations {iters}"),
    }
}

fn a5_irwls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_rise = f64::NEG_INFINITY;
    for fit_index in 0..20 {
        let n = rng.random_range(10..40);
        let x = gaussian(&mut rng, n, 3);
        let t = random_distributions(&mut rng, n, 4);
        let config = MsvrConfig {
            kappa: rng.random_range(0.1..10.0),
            nu: rng.random_range(0.0..0.5),
            epsilon: rng.random_range(0.0..0.1),
            ..MsvrConfig::default()
        };
        let kernel = if fit_index % 2 == 0 { KernelSpec::default() } else { KernelSpec::linear() };
        let (_, diag) = fit(&x, &t, &config, &kernel).unwrap();
        for w in diag.objective_history.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }

    let mut worst_stationarity = 0.0f64;
    for _ in 0..5 {
        let x = gaussian(&mut rng, 30, 3);
        let t = random_distributions(&mut rng, 30, 4);
        let config = MsvrConfig { epsilon: 0.0, nu: 0.0, tol: 1e-12, ..MsvrConfig::default() };
        let (model, _) = fit(&x, &t, &config, &KernelSpec::default()).unwrap();
        let gram = augmented_gram(&model.kernel, &x, &x).unwrap();
        let pred = &gram * &model.dual_coefficients;
        let weights = compute_weights(&residual_norms(&t, &pred), config.epsilon);
        let r = stationarity_residual(&gram, &t, &model.dual_coefficients, &weights, &config);
        worst_stationarity = worst_stationarity.max(r.amax());
    }
    Outcome {
        pass: worst_rise <= 0.0 && worst_stationarity <= 1e-6,
        detail: format!("largest objective increase {worst_rise:.2e}, stationarity {worst_stationarity:.2e}"),
    }
}

fn random_distributions(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Matrix {
    let mut t = Matrix::from_fn(n, m, |_, _| rng.random::<f64>() + 1e-3);
    for mut row in t.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    t
}

fn a6_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let identity = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let mut worst_identity = 0.0f64;
    for m in [2, 5, 18] {
        for _ in 0..50 {
            let d = random_distributions(&mut rng, 1, m);
            for (k, measure) in Measure::ALL.iter().enumerate() {
                let v = score(d.as_slice(), d.as_slice(), *measure).unwrap();
                worst_identity = worst_identity.max((v - identity[k]).abs());
            }
        }
    }
    let truth = [0.5, 0.5];
    let pred = [0.25, 0.75];
    let derived = [
        (Measure::Chebyshev, 0.25),
        (Measure::Canberra, 0.53333),
        (Measure::Clark, 0.38873),
        (Measure::Kl, 0.14384),
        (Measure::Intersection, 0.75),
        (Measure::Sorensen, 0.25),
    ];
    let worst_pair = derived
        .iter()
        .map(|(m, v)| (score(&truth, &pred, *m).unwrap() - v).abs())
        .fold(0.0, f64::max);
    Outcome {
        pass: worst_identity <= 1e-12 && worst_pair <= 1e-5,
        detail: format!("identity error {worst_identity:.2e}, hand pair error {worst_pair:.2e}"),
    }
}

fn a7_friedman() -> Outcome {
    let names = |p: &str, k: usize| (1..=k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let table = RankTable::from_ranks(
        names("alg", 3),
        names("set", 3),
        vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 3.0]],
    )
    .unwrap();
    let (chi2, f_f) = friedman(&table).unwrap();
    let cd = critical_difference(2.724, 9, 12);
    Outcome {
        pass: (chi2 - 14.0 / 3.0).abs() <= 1e-12 && (f_f - 7.0).abs() <= 1e-12 && (cd - 3.0455).abs() <= 1e-4,
        detail: format!("chi2 {chi2}, F_F {f_f}, CD {cd:.5}"),
    }
}

fn experiment(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DataSource::Synthetic { spec: a3_spec(seed), planted_corruption: true });
    cfg.noise.scale = 0.0;
    cfg
}

fn a8_ordering() -> Outcome {
    let mut wins = 0;
    let mut gap_sum = 0.0;
    let mut lines = Vec::new();
    for seed in 1..=10 {
        let report = compare_arms(&experiment(seed)).unwrap();
        let cheb = |arm| report.arm(arm).get(Measure::Chebyshev);
        let cos = |arm| report.arm(arm).get(Measure::Cosine);
        if cheb(Arm::RecoveredTrained) < cheb(Arm::NoisyTrained) && cos(Arm::RecoveredTrained) > cos(Arm::NoisyTrained) {
            wins += 1;
        }
        gap_sum += cheb(Arm::GroundTruthTrained) - cheb(Arm::RecoveredTrained);
        lines.push(format!(
            "{:.4}/{:.4}/{:.4}",
            cheb(Arm::GroundTruthTrained),
            cheb(Arm::RecoveredTrained),
            cheb(Arm::NoisyTrained)
        ));
    }
    let mean_gap = gap_sum / 10.0;
    Outcome {
        pass: wins >= 8 && mean_gap <= 0.02,
        detail: format!(
            "recovered beats noisy in {wins}/10, mean ground-truth minus recovered Chebyshev {mean_gap:.4}; chebyshev gt/rec/noisy {}",
            lines.join(" ")
        ),
    }
}

fn a9_zero_noise() -> Outcome {
    let mut worst = 0.0f64;
    for seed in [1, 2] {
        let mut cfg = ExperimentConfig::new(DataSource::Synthetic { spec: a3_spec(seed), planted_corruption: false });
        cfg.noise.scale = 0.0;
        cfg.repetitions = 3;
        let report = compare_arms(&cfg).unwrap();
        let base = DVector::from_row_slice(&report.ground_truth_trained.means());
        for arm in [Arm::RecoveredTrained, Arm::NoisyTrained] {
            let other = DVector::from_row_slice(&report.arm(arm).means());
            worst = worst.max((&other - &base).amax());
        }
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("largest disagreement between arms {worst:.2e}"),
    }
}

fn main() {
    let mut results = Vec::new();
    results.push(("A1 prox operators", timed(Some(Duration::from_secs(10)), a1_prox_operators)));
    results.push(("A2 simplex projection and KKT", timed(Some(Duration::from_secs(30)), a2_simplex_and_kkt)));
    let start = Instant::now();
    let runs = planted_runs();
    let planted_time = start.elapsed();
    let mut a3 = a3_planted_recovery(&runs);
    a3.detail.push_str(&format!("; {:.2}s", planted_time.as_secs_f64()));
    if planted_time > Duration::from_secs(120) {
        a3.pass = false;
    }
    results.push(("A3 planted recovery", a3));
    results.push(("A4 ADMM feasibility", a4_feasibility(&runs)));
    results.push(("A5 IRWLS descent and stationarity", timed(None, a5_irwls)));
    results.push(("A6 metric identities", timed(None, a6_metrics)));
    results.push(("A7 Friedman and critical difference", timed(None, a7_friedman)));
    results.push(("A8 arm ordering", timed(Some(Duration::from_secs(300)), a8_ordering)));
    results.push(("A9 zero-noise agreement", timed(None, a9_zero_noise)));

    let mut failed = 0;
    for (name, outcome) in &results {
        println!("{} {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        failed += (!outcome.pass) as usize;
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
