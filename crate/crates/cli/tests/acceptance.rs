//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see them). Criteria 1 and 2 are
//! exact-property suites; 3 through 7 are Monte Carlo reproductions whose
//! ground truth is closed form; 8 and 9 pin end-to-end exactness and
//! byte-level determinism of the CLI.

use std::fmt::Display;
use std::io::Write as _;
use std::process::Command;

use apishift_core::budget::{
    required_budget_flat, required_budget_masa, sigma_bound, ConfidenceParams, MasaBudgetOptions,
};
use apishift_core::estimator::{batch_score, PartitionStats, StatsGrid};
use apishift_core::harness::seed::{oracle_seed, trial_seed};
use apishift_core::harness::{ingest_manifest, run_experiment, ExperimentConfig, ExperimentSource};
use apishift_core::loss::{expected_loss_closed_form, optimal_loss, weighted_frobenius_sq};
use apishift_core::oracle::{PredictionLog, PredictionOracle, Scenario, SimulatedOracle};
use apishift_core::sampler::{
    optimal_allocation, run_fixed, run_masa, run_uniform, RunResult, SamplerConfig, Strategy,
};
use apishift_core::types::{
    Allocation, ConfusionMatrix, Dimensions, LabelDistribution, PartitionId, PartitionWeights,
    ScoreGrid, WeightMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn verdict(criterion: &str, pass: bool, detail: impl Display) -> bool {
    println!(
        "acceptance {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// Criterion 1: folding the constant-time update over 1000 random label
/// sequences (lengths up to 10^4, alphabet sizes 2, 7, 31) reproduces the
/// batch score and the empirical frequencies to 1e-12.
#[test]
fn criterion_1_incremental_equals_batch() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xC1);
    let mut worst_sigma = 0.0f64;
    let mut worst_mu = 0.0f64;
    for case in 0..1000 {
        let labels = [2usize, 7, 31][case % 3];
        let len = rng.random_range(2..=10_000usize);
        let mut stats = PartitionStats::new(labels);
        let mut counts = vec![0u64; labels];
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            let label = rng.random_range(0..labels);
            seq.push(label);
            counts[label] += 1;
            stats.observe(label).unwrap();
        }
        let batch = batch_score(&seq).unwrap();
        worst_sigma = worst_sigma.max((stats.sigma2() - batch).abs());
        for j in 0..labels {
            let freq = counts[j] as f64 / len as f64;
            worst_mu = worst_mu.max((stats.mu_hat()[j] - freq).abs());
        }
    }
    let pass = worst_sigma < 1e-12 && worst_mu < 1e-12;
    assert!(verdict(
        "criterion 1 (incremental equals batch)",
        pass,
        format!("max |sigma2 - batch| = {worst_sigma:.2e}, max |mu - freq| = {worst_mu:.2e}")
    ));
}

/// Criterion 2: on 20 random 2x2 scenarios with budgets up to 16, exhaustive
/// enumeration of integer allocations confirms the proportional rounding is
/// within one sample move of the best integer allocation, and the continuous
/// bound lower-bounds every integer allocation.
#[test]
fn criterion_2_allocation_optimality() {
    let dims = Dimensions::new(2, 2).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(0xC2);
    let mut worst_excess = 0.0f64;
    for _ in 0..20 {
        let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        let p = PartitionWeights::from_grid(
            dims,
            vec![
                vec![raw[0] / total, raw[1] / total],
                vec![raw[2] / total, raw[3] / total],
            ],
        )
        .unwrap();
        let scores =
            ScoreGrid::new(dims, (0..4).map(|_| rng.random::<f64>() * 0.7 + 0.01).collect())
                .unwrap();
        let n = rng.random_range(4..=16u64);
        let ours = optimal_allocation(&p, &scores, n).unwrap();
        let our_loss = expected_loss_closed_form(&ours, &p, &scores).unwrap();
        let bound = optimal_loss(n, &p, &scores).unwrap();

        let mut best_loss = f64::INFINITY;
        let mut best = Allocation::zero(dims);
        for a in 1..=(n - 3) {
            for b in 1..=(n - a - 2) {
                for c in 1..=(n - a - b - 1) {
                    let d = n - a - b - c;
                    let alloc = Allocation::new(dims, vec![a, b, c, d]).unwrap();
                    let loss = expected_loss_closed_form(&alloc, &p, &scores).unwrap();
                    assert!(loss >= bound - 1e-15, "integer allocation beat the bound");
                    if loss < best_loss {
                        best_loss = loss;
                        best = alloc;
                    }
                }
            }
        }
        // One rounding step: the largest loss increase any single-sample
        // move away from the best allocation can cause.
        let mut step = 0.0f64;
        for from in dims.cells() {
            if best.count(from) < 2 {
                continue;
            }
            for to in dims.cells() {
                if from == to {
                    continue;
                }
                let mut counts = best.counts().to_vec();
                counts[from.label * 2 + from.level] -= 1;
                counts[to.label * 2 + to.level] += 1;
                let loss = expected_loss_closed_form(
                    &Allocation::new(dims, counts).unwrap(),
                    &p,
                    &scores,
                )
                .unwrap();
                step = step.max(loss - best_loss);
            }
        }
        worst_excess = worst_excess.max(our_loss - (best_loss + step));
    }
    let pass = worst_excess <= 1e-15;
    assert!(verdict(
        "criterion 2 (allocation optimality by enumeration)",
        pass,
        format!("worst excess over best-plus-one-step = {worst_excess:.2e}")
    ));
}

fn moderate_scenario() -> Scenario {
    let dims = Dimensions::new(2, 2).unwrap();
    let p = PartitionWeights::from_grid(dims, vec![vec![0.3, 0.2], vec![0.25, 0.25]]).unwrap();
    let mu = vec![
        LabelDistribution::new(vec![0.9, 0.1]).unwrap(),
        LabelDistribution::new(vec![0.6, 0.4]).unwrap(),
        LabelDistribution::new(vec![0.2, 0.8]).unwrap(),
        LabelDistribution::new(vec![0.5, 0.5]).unwrap(),
    ];
    let c_old = ConfusionMatrix::from_rows(vec![vec![0.4, 0.1], vec![0.2, 0.3]]).unwrap();
    Scenario::new(dims, p, mu, c_old).unwrap()
}

/// Ten equal-mass partitions, one with sigma 0.9 and nine with sigma 0.01;
/// the closed-form uniform/optimal loss ratio is 0.08109/0.009801 = 8.274.
fn skewed_scenario() -> Scenario {
    let labels = 10;
    let dims = Dimensions::new(labels, 1).unwrap();
    let p = PartitionWeights::from_grid(dims, vec![vec![0.1]; labels]).unwrap();
    // score 0.81: mass m on one label, rest spread evenly; m solves
    // m^2 + (1-m)^2/9 = 0.19.
    let m = (2.0 + (4.0f64 + 4.0 * 10.0 * 0.71).sqrt()) / 20.0;
    let spread = (1.0 - m) / 9.0;
    let mut hot = vec![spread; labels];
    hot[0] = 1.0 - 9.0 * spread;
    // score 1e-4: probability x on a second label with 2x(1-x) = 1e-4.
    let x = (1.0 - (1.0f64 - 2e-4).sqrt()) / 2.0;
    let mut mu = Vec::with_capacity(labels);
    mu.push(LabelDistribution::new(hot).unwrap());
    for i in 1..labels {
        let mut v = vec![0.0; labels];
        v[i] = 1.0 - x;
        v[(i + 1) % labels] = x;
        mu.push(LabelDistribution::new(v).unwrap());
    }
    let c_old = {
        // Reference with a mild diagonal drift so the shift is nonzero.
        let mut rows = vec![vec![0.0; labels]; labels];
        for (i, dist) in mu.iter().enumerate() {
            for j in 0..labels {
                rows[i][j] = 0.1 * dist.prob(j);
            }
            let moved = rows[i][i].min(0.02);
            rows[i][i] -= moved;
            rows[i][(i + 1) % labels] += moved;
        }
        ConfusionMatrix::from_rows(rows).unwrap()
    };
    Scenario::new(dims, p, mu, c_old).unwrap()
}

fn mc_mean_loss(
    scenario: &Scenario,
    strategy: Strategy,
    budget: u64,
    trials: u64,
    master: u64,
    run: impl Fn(&mut SimulatedOracle, &SamplerConfig) -> RunResult,
) -> f64 {
    let truth = scenario.true_shift().unwrap();
    let w = WeightMatrix::ones(scenario.dims().labels());
    let mut total = 0.0;
    for trial in 0..trials {
        let seed = trial_seed(master, strategy, budget, trial);
        let mut oracle = SimulatedOracle::new(scenario, oracle_seed(seed));
        let config = SamplerConfig {
            budget,
            explore: 1.0,
            seed,
            strategy,
        };
        let result = run(&mut oracle, &config);
        assert!(!result.aborted);
        let err = result.shift_estimate.minus(&truth).unwrap();
        total += weighted_frobenius_sq(&err, &w).unwrap();
    }
    total / trials as f64
}

/// Criterion 3: Monte Carlo error of fixed allocations matches the closed
/// form within 10% at N=2000 over 1500 trials, for both the proportional
/// (uniform) and the optimal allocation.
#[test]
fn criterion_3_closed_form_vs_monte_carlo() {
    let scenario = moderate_scenario();
    let p = scenario.weights();
    let scores = scenario.true_scores();
    let budget = 2000u64;
    let trials = 1500u64;

    let proportional = optimal_allocation(p, &ScoreGrid::uniform(p.dims(), 0.5).unwrap(), budget)
        .unwrap();
    let optimal = optimal_allocation(p, &scores, budget).unwrap();

    let mut detail = String::new();
    let mut pass = true;
    for (name, alloc) in [("uniform", &proportional), ("oracle_optimal", &optimal)] {
        let expected = expected_loss_closed_form(alloc, p, &scores).unwrap();
        let mean = mc_mean_loss(
            &scenario,
            Strategy::OracleOptimal,
            budget,
            trials,
            0xC3 ^ alloc.count(PartitionId::new(0, 0)),
            |oracle, config| {
                run_fixed(oracle, None, alloc, p, scenario.c_old(), config).unwrap()
            },
        );
        let rel = (mean - expected).abs() / expected;
        pass &= rel <= 0.10;
        detail.push_str(&format!("{name}: mc {mean:.4e} vs closed {expected:.4e} (rel {rel:.3}); "));
    }
    assert!(verdict("criterion 3 (closed form vs Monte Carlo)", pass, detail));
}

/// Criterion 4: on the skewed scenario at N=4000 (1500 trials) the adaptive
/// sampler's mean loss is at most 0.4x uniform's and at least the optimal
/// closed form; the closed-form uniform/optimal ratio itself is 8.274 and
/// the Monte Carlo ratio lands within 25% of it.
#[test]
fn criterion_4_error_vs_uniform() {
    let scenario = skewed_scenario();
    let p = scenario.weights();
    let scores = scenario.true_scores();
    let budget = 4000u64;
    let trials = 1500u64;

    let uniform_closed: f64 =
        p.active().map(|c| p.mass(c) * scores.score(c)).sum::<f64>() / budget as f64;
    let optimal_closed = optimal_loss(budget, p, &scores).unwrap();
    let closed_ratio = uniform_closed / optimal_closed;

    let masa = mc_mean_loss(&scenario, Strategy::Masa, budget, trials, 0xC4, |oracle, config| {
        run_masa(oracle, None, p, scenario.c_old(), config).unwrap()
    });
    let uniform =
        mc_mean_loss(&scenario, Strategy::Uniform, budget, trials, 0xC4, |oracle, config| {
            run_uniform(oracle, None, p, scenario.c_old(), config).unwrap()
        });

    let mc_ratio = uniform / optimal_closed;
    let pass = (closed_ratio - 8.274).abs() < 0.01
        && masa <= 0.4 * uniform
        && masa >= optimal_closed
        && (mc_ratio - closed_ratio).abs() / closed_ratio <= 0.25;
    assert!(verdict(
        "criterion 4 (adaptive beats uniform on skew)",
        pass,
        format!(
            "masa {masa:.3e}, uniform {uniform:.3e} (masa/uniform {:.3}), optimal {optimal_closed:.3e}, closed ratio {closed_ratio:.2}, mc ratio {mc_ratio:.2}",
            masa / uniform
        )
    ));
}

/// Criterion 5: the loss ratio of the adaptive sampler to the optimal
/// allocation, on the skewed scenario at N in {500, 2000, 8000} with 1500
/// trials each, decreases strictly and ends at or below 1.15.
///
/// The strict decrease holds. The 1.15 endpoint does not: with the default
/// exploration weight the selection rule's (a/n)^(1/4) bonus dominates the
/// 0.01 sigma of the nine cold partitions, pinning them near n ~ a * (p_hot
/// sigma_hot N / p_cold)^(4/5) samples each, which keeps the ratio near 2.3
/// at N=8000 (it would approach 1 only around N ~ 5e7). The assertion is
/// kept as specified rather than loosened to what the sampler actually
/// achieves; the printed detail carries the measured ratios. The sandwich
/// property (optimal <= masa <= uniform at every budget) is also checked
/// and does hold.
#[test]
fn criterion_5_gap_ratio_trend() {
    let scenario = skewed_scenario();
    let p = scenario.weights();
    let scores = scenario.true_scores();
    let trials = 1500u64;
    let budgets = [500u64, 2000, 8000];

    let mut ratios = Vec::new();
    let mut sandwich = true;
    for &budget in &budgets {
        let masa =
            mc_mean_loss(&scenario, Strategy::Masa, budget, trials, 0xC5, |oracle, config| {
                run_masa(oracle, None, p, scenario.c_old(), config).unwrap()
            });
        let optimal = optimal_loss(budget, p, &scores).unwrap();
        let uniform_closed: f64 =
            p.active().map(|c| p.mass(c) * scores.score(c)).sum::<f64>() / budget as f64;
        sandwich &= masa >= optimal && masa <= uniform_closed;
        ratios.push(masa / optimal);
    }
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let endpoint = *ratios.last().unwrap() <= 1.15;
    let pass = decreasing && endpoint && sandwich;
    assert!(verdict(
        "criterion 5 (gap ratio strictly decreasing, <= 1.15 at N=8000)",
        pass,
        format!(
            "ratios at N=500/2000/8000: {:.3}/{:.3}/{:.3}; strictly decreasing: {decreasing}; sandwich optimal<=masa<=uniform: {sandwich}; endpoint <= 1.15: {endpoint}",
            ratios[0], ratios[1], ratios[2]
        )
    ));
}

/// Criterion 6: the flat requirement at a 1% error / 95% confidence target
/// sits in the published 15K to 21K band, and the adaptive stopping rule on
/// the skewed scenario saves at least half of it.
#[test]
fn criterion_6_budget_savings() {
    let params = ConfidenceParams::new(0.01, 0.05).unwrap();
    let flat = required_budget_flat(&params);
    let scenario = skewed_scenario();
    let report = required_budget_masa(
        &scenario,
        &params,
        &MasaBudgetOptions::new(flat, 1.0, 0xC6),
    )
    .unwrap();
    let savings = report.savings.unwrap_or(0.0);
    let pass = (15_000..=21_000).contains(&flat) && savings >= 0.5;
    assert!(verdict(
        "criterion 6 (budget savings)",
        pass,
        format!(
            "flat {flat}, adaptive {:?}, savings {:.1}%",
            report.adaptive,
            savings * 100.0
        )
    ));
}

/// Criterion 7: with the per-event delta chosen so LK*N*delta = 0.1, the
/// fraction of 2000 simulated runs in which any partition's sigma estimate
/// ever leaves its concentration band stays within 0.1 plus three binomial
/// standard errors.
#[test]
fn criterion_7_concentration_coverage() {
    let scenario = moderate_scenario();
    let p = scenario.weights();
    let truth = scenario.true_scores();
    let budget = 125u64;
    let runs = 2000u64;
    let lk = p.active_count() as f64;
    let delta = 0.1 / (lk * budget as f64);

    let mut violations = 0u64;
    for run in 0..runs {
        let mut oracle = SimulatedOracle::new(&scenario, 0xC7_000 + run);
        let mut stats = StatsGrid::new(scenario.dims());
        let cells: Vec<PartitionId> = p.active().collect();
        let mut violated = false;
        for i in 0..budget {
            let cell = cells[(i % cells.len() as u64) as usize];
            let label = oracle.predict(cell, None).unwrap();
            stats.observe(cell, label).unwrap();
            let t = stats.cell(cell).n();
            if t >= 2 {
                let width = sigma_bound(t, delta).unwrap();
                if (stats.cell(cell).sigma() - truth.sigma(cell)).abs() > width {
                    violated = true;
                    break;
                }
            }
        }
        violations += u64::from(violated);
    }
    let frequency = violations as f64 / runs as f64;
    let limit = 0.1 + 3.0 * (0.1f64 * 0.9 / runs as f64).sqrt();
    let pass = frequency <= limit;
    assert!(verdict(
        "criterion 7 (concentration coverage)",
        pass,
        format!("violation frequency {frequency:.4} <= {limit:.4}")
    ));
}

/// Criterion 8: on a 1000-item manifest with a full replay log, spending the
/// whole budget without replacement reproduces the brute-force shift matrix
/// to 1e-12.
#[test]
fn criterion_8_end_to_end_exactness() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = dir.path().join("manifest.jsonl");
    let mut rng = ChaCha12Rng::seed_from_u64(0xC8);
    let labels = 3usize;
    let mut manifest = std::fs::File::create(&manifest_path).unwrap();
    let mut log = PredictionLog::default();
    let mut joint_old = vec![0u64; labels * labels];
    let mut joint_new = vec![0u64; labels * labels];
    let total = 1000usize;
    for i in 0..total {
        let true_label = rng.random_range(0..labels);
        let old = if rng.random::<f64>() < 0.8 {
            true_label
        } else {
            (true_label + 1) % labels
        };
        let new = if rng.random::<f64>() < 0.7 {
            true_label
        } else {
            (true_label + 2) % labels
        };
        let confidence: f64 = rng.random();
        writeln!(
            manifest,
            r#"{{"id": "it{i}", "true_label": {}, "confidence": {confidence}, "old_prediction": {}}}"#,
            true_label + 1,
            old + 1
        )
        .unwrap();
        log.insert(format!("it{i}"), new);
        joint_old[true_label * labels + old] += 1;
        joint_new[true_label * labels + new] += 1;
    }
    drop(manifest);

    let dims = Dimensions::new(labels, 2).unwrap();
    let ingested = ingest_manifest(&manifest_path, dims).unwrap();
    let source = ExperimentSource::Replay {
        dataset: ingested.dataset,
        weights: ingested.weights,
        log,
        c_old: ingested.c_old.unwrap(),
    };
    let config = ExperimentConfig {
        strategies: vec![Strategy::Uniform],
        budgets: vec![total as u64],
        trials: 1,
        master_seed: 0xC8,
        explore: 1.0,
        weights_matrix: None,
        workers: 1,
        collect_traces: false,
        stopping: None,
    };
    let report = run_experiment(&source, &config).unwrap();
    let estimate = report.final_estimate.unwrap();
    assert!(!estimate.aborted);

    let mut worst = 0.0f64;
    for i in 0..labels {
        for j in 0..labels {
            let brute =
                (joint_new[i * labels + j] as f64 - joint_old[i * labels + j] as f64)
                    / total as f64;
            worst = worst.max((estimate.entries[i][j] - brute).abs());
        }
    }
    let pass = worst <= 1e-12;
    assert!(verdict(
        "criterion 8 (end-to-end exactness)",
        pass,
        format!("max |emitted - brute force| = {worst:.2e}")
    ));
}

/// Criterion 9: running the CLI's `simulate` twice with the same config and
/// seed yields byte-identical curves.csv and trace files.
#[test]
fn criterion_9_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("sim.json");
    std::fs::write(
        &config_path,
        r#"{
            "scenario": {
                "L": 2, "K": 2,
                "p": [[0.3, 0.2], [0.25, 0.25]],
                "mu": [[[0.9, 0.1], [0.6, 0.4]], [[0.2, 0.8], [0.5, 0.5]]],
                "c_old": [[0.4, 0.1], [0.2, 0.3]]
            },
            "strategies": ["masa", "uniform"],
            "budgets": [64, 128],
            "trials": 4,
            "master_seed": 99
        }"#,
    )
    .unwrap();

    let run = |out: &str| {
        let out_dir = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_apishift"))
            .args(["simulate", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out_dir)
            .args(["--seed", "7", "--trace"])
            .status()
            .unwrap();
        assert!(status.success());
        out_dir
    };
    let a = run("a");
    let b = run("b");

    let mut same = std::fs::read(a.join("curves.csv")).unwrap()
        == std::fs::read(b.join("curves.csv")).unwrap();
    let mut traces = 0;
    for entry in std::fs::read_dir(a.join("traces")).unwrap() {
        let name = entry.unwrap().file_name();
        same &= std::fs::read(a.join("traces").join(&name)).unwrap()
            == std::fs::read(b.join("traces").join(&name)).unwrap();
        traces += 1;
    }
    let pass = same && traces == 2 * 2 * 4;
    assert!(verdict(
        "criterion 9 (CLI determinism)",
        pass,
        format!("curves.csv and {traces} trace files byte-identical: {same}")
    ));
}
