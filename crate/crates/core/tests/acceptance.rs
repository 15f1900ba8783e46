//! Acceptance suite. Each test prints one PASS/FAIL line with the measured
//! value and the tolerance it is held to.

mod common;

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use common::{batch_objective, finite_difference, max_relative_error, normal, random_data, rng};
use psvgp::experiment::{
    boundary_rmsd, load_data, rmspe, run_sweep, summarize, train_on, Dataset, SummaryRow, SweepRow, TrainRun,
};
use psvgp::fabric::sim::{run_simulated, SimConfig};
use psvgp::fabric::{run_training, WorkerAssignment};
use psvgp::gp_math::{exact_posterior, log_marginal, KernelParams};
use psvgp::linalg::Matrix;
use psvgp::partition::{
    boundary_probes, build_grid_partition, neighborhoods, AdjacencyRule, NeighborGraph, PartitionData,
};
use psvgp::sgd::{adam_step, source_probs, stochastic_grad, train_isvgp, AdamConfig, AdamState, TrainSettings};
use psvgp::svgp::{elbo, elbo_grad, elbo_gradient_weighted, initialize, predict, VariationalState};
use rand::Rng;

/// Criteria run one at a time so each runtime is measured without contention.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, name: &str, pass: bool, detail: String, started: Instant) {
    println!(
        "criterion {criterion} ({name}): {} {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
}

fn bits(models: &[Option<VariationalState<f64>>]) -> Vec<Option<Vec<u64>>> {
    models
        .iter()
        .map(|m| m.as_ref().map(|s| s.to_flat().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn benchmark(seed: u64) -> Dataset {
    static CACHE: OnceLock<Dataset> = OnceLock::new();
    if seed == 1 {
        return CACHE.get_or_init(|| load_data(&TrainRun::default(), 1).unwrap()).clone();
    }
    load_data(&TrainRun::default(), seed).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let _serial = serial();
    let t = Instant::now();
    let mut r = rng(2024);
    let (x, y) = random_data(20, 2, &mut r);
    let state = common::random_state(3, 2, &mut r);
    let analytic = elbo_grad(&x, &y, &state, 1.0, 20.0).unwrap();
    let numeric = finite_difference(&x, &y, &state, 20.0, 1e-5);
    let (err, _) = max_relative_error(analytic.as_slice(), &numeric);
    // plain relative error as well, for coordinates not near zero
    let strict = analytic
        .as_slice()
        .iter()
        .zip(&numeric)
        .filter(|(a, _)| a.abs() > 1e-3)
        .map(|(a, n)| (a - n).abs() / a.abs())
        .fold(0.0, f64::max);
    let pass = err < 1e-5 && strict < 1e-5 && t.elapsed() < Duration::from_secs(10);
    report(
        1,
        "gradient vs central differences",
        pass,
        format!(
            "max error {err:.2e} relative to max(|g|, 1) and {strict:.2e} relative to |g| (both < 1e-5) over {} coordinates",
            numeric.len()
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_02_elbo_bound() {
    let _serial = serial();
    let t = Instant::now();
    let mut r = rng(77);
    let (x, y) = random_data(25, 2, &mut r);
    let kernel = KernelParams::new(&[0.3, 0.4], 0.9, 20.0).unwrap();
    let bound = log_marginal(&x, &y, &kernel).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let mut s = common::random_state(4, 2, &mut r);
        s.kernel = kernel.clone();
        let value = batch_objective(&x, &y, &s, 25.0);
        worst = worst.max(value - bound);
    }
    let pass = worst <= 1e-6 && t.elapsed() < Duration::from_secs(30);
    report(
        2,
        "ELBO below log marginal",
        pass,
        format!("max(elbo - log marginal) = {worst:.3e} (<= 1e-6) over 50 states"),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_03_estimator_unbiased() {
    let _serial = serial();
    let t = Instant::now();
    let parts = vec![
        PartitionData::new(0, Matrix::from_row_major(3, 2, vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.4]), vec![0.5, -0.2, 0.1]),
        PartitionData::new(1, Matrix::from_row_major(3, 2, vec![0.6, 0.2, 0.8, 0.3, 0.7, 0.45]), vec![1.1, 0.7, 0.9]),
    ];
    let graph = NeighborGraph {
        adjacency: vec![vec![1], vec![0]],
        counts: vec![3, 3],
    };
    let mut state = initialize(&parts[0].coords, &parts[0].responses, 1, &mut rng(5)).unwrap();
    state.mean[0] = -0.4;
    let subsets = [[0, 1], [0, 2], [1, 2]];
    let mut worst = 0.0f64;
    for delta in [0.0, 0.4, 1.0] {
        let probs = source_probs::<f64>(0, &graph, delta).unwrap();
        let mut mean = vec![0.0; state.layout().len()];
        for (&k, &p) in probs.ids.iter().zip(&probs.probs) {
            for s in &subsets {
                let u = stochastic_grad(&state, &parts[k], s, &probs).unwrap();
                for (acc, v) in mean.iter_mut().zip(u.as_slice()) {
                    *acc += p / 3.0 * v;
                }
            }
        }
        let target = elbo_gradient_weighted(&parts, &state, &[1.0, delta]).unwrap();
        for (a, b) in mean.iter().zip(target.as_slice()) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-12));
        }
        // the weighted objective is what the target differentiates
        assert!(elbo(&parts, &state, &[1.0, delta]).unwrap().is_finite());
    }
    let pass = worst <= 1e-8 && t.elapsed() < Duration::from_secs(10);
    report(
        3,
        "estimator unbiasedness by enumeration",
        pass,
        format!("max relative error {worst:.2e} (<= 1e-8) for delta in {{0, 0.4, 1}}"),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_04_isvgp_equivalence() {
    let _serial = serial();
    let t = Instant::now();
    let data = benchmark(1);
    let run = TrainRun {
        delta: 0.0,
        iterations: 300,
        ..TrainRun::default()
    };
    let grid = build_grid_partition(&data.coords, &data.responses, run.nx, run.ny).unwrap();
    let graph = neighborhoods(&grid, AdjacencyRule::Edge, false);
    let settings = run.settings();
    let reference: Vec<_> = grid
        .partitions
        .iter()
        .map(|p| (!p.is_empty()).then(|| train_isvgp(p, &settings).unwrap()))
        .collect();
    let mut pass = true;
    let mut detail = Vec::new();
    for procs in [1, 4] {
        let out = run_training(&grid.partitions, &graph, &settings, procs, run.watchdog()).unwrap();
        let same = bits(&out.models) == bits(&reference);
        detail.push(format!("procs {procs}: {}", if same { "identical" } else { "differs" }));
        pass &= same;
    }
    pass &= t.elapsed() < Duration::from_secs(60);
    report(4, "delta = 0 equals independent SVGPs", pass, detail.join(", "), t);
    assert!(pass);
}

#[test]
fn criterion_05_determinism_across_workers() {
    let _serial = serial();
    let t = Instant::now();
    let data = benchmark(1);
    let base = TrainRun {
        delta: 0.5,
        m: 5,
        iterations: 500,
        ..TrainRun::default()
    };
    let mut reference = None;
    let mut pass = true;
    for procs in [1, 2, 4, 8, 16] {
        let run = TrainRun { procs, ..base.clone() };
        let o = train_on(&run, &data).unwrap();
        let key = (bits(&o.train.models), o.report.rmspe.to_bits(), o.report.boundary_rmsd.to_bits());
        match &reference {
            None => reference = Some(key),
            Some(r) => pass &= *r == key,
        }
    }
    pass &= t.elapsed() < Duration::from_secs(600);
    report(
        5,
        "bitwise determinism for 1, 2, 4, 8, 16 workers",
        pass,
        "models, rmspe and boundary rmsd compared bitwise".into(),
        t,
    );
    assert!(pass);
}

/// Benchmark sweep at m = 5 over ten replications, shared by criteria 6 and 7.
fn trend_sweep() -> &'static (Vec<SweepRow>, f64) {
    static SWEEP: OnceLock<(Vec<SweepRow>, f64)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let t = Instant::now();
        let base = TrainRun {
            m: 5,
            procs: 4,
            ..TrainRun::default()
        };
        let rows = run_sweep(&base, &[0.0, 0.125, 0.25, 0.5, 1.0], &[5], 10, true).unwrap();
        assert!(rows.iter().all(|r| r.is_ok()));
        (rows, t.elapsed().as_secs_f64())
    })
}

fn cell(summary: &[SummaryRow], delta: f64) -> &SummaryRow {
    summary.iter().find(|s| s.delta == delta).unwrap()
}

#[test]
fn criterion_06_smoothing_tradeoff() {
    let _serial = serial();
    let t = Instant::now();
    let (rows, seconds) = trend_sweep();
    let s = summarize(rows);
    let (d0, d1) = (cell(&s, 0.0), cell(&s, 0.125));
    let smoother = d1.median_boundary_rmsd < d0.median_boundary_rmsd;
    let increase = d1.median_rmspe / d0.median_rmspe - 1.0;
    let pass = smoother && increase < 0.10 && *seconds < 1800.0;
    report(
        6,
        "smoother boundaries at small delta",
        pass,
        format!(
            "median boundary rmsd {:.4} -> {:.4} ({}), median rmspe {:.4} -> {:.4} (+{:.1}%, bound 10%)",
            d0.median_boundary_rmsd,
            d1.median_boundary_rmsd,
            if smoother { "lower" } else { "not lower" },
            d0.median_rmspe,
            d1.median_rmspe,
            100.0 * increase
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_07_accuracy_trend() {
    let _serial = serial();
    let t = Instant::now();
    let (rows, seconds) = trend_sweep();
    let s = summarize(rows);
    let medians: Vec<f64> = [0.0, 0.25, 0.5, 1.0].iter().map(|&d| cell(&s, d).median_rmspe).collect();
    let mut violations = 0;
    let mut within_slack = true;
    for w in medians.windows(2) {
        if w[1] < w[0] {
            violations += 1;
            within_slack &= (w[0] - w[1]) / w[0] <= 0.01;
        }
    }
    let pass = violations <= 1 && within_slack && *seconds < 3600.0;
    report(
        7,
        "median rmspe non-decreasing in delta",
        pass,
        format!("medians at delta 0, 0.25, 0.5, 1: {medians:.4?}; {violations} violation(s)"),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_08_message_counts() {
    let _serial = serial();
    let t = Instant::now();
    let data = benchmark(1);
    let base = TrainRun {
        procs: 16,
        iterations: 500,
        ..TrainRun::default()
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for delta in [0.0, 0.125, 0.5, 1.0] {
        let run = TrainRun { delta, ..base.clone() };
        let o = train_on(&run, &data).unwrap();
        // one partition per worker, so every draw of k′ ≠ j is remote
        let (mut expected, mut variance) = (0.0, 0.0);
        for j in 0..o.graph.len() {
            if o.graph.count(j) == 0 {
                continue;
            }
            let p_remote = 1.0 - source_probs::<f64>(j, &o.graph, delta).unwrap().probs[0];
            expected += run.iterations as f64 * p_remote;
            variance += run.iterations as f64 * p_remote * (1.0 - p_remote);
        }
        let observed = o.report.batch_requests as f64;
        let ok = if delta == 0.0 {
            o.report.batch_requests == 0
        } else {
            (observed - expected).abs() <= 3.0 * variance.sqrt()
        };
        detail.push(format!(
            "delta {delta}: {observed} requests, expected {expected:.1} ± {:.1}",
            3.0 * variance.sqrt()
        ));
        pass &= ok;
    }
    pass &= t.elapsed() < Duration::from_secs(600);
    report(8, "request counts within 3 sigma at 16 workers", pass, detail.join("; "), t);
    assert!(pass);
}

#[test]
fn criterion_09_quiescent_termination() {
    let _serial = serial();
    let t = Instant::now();
    let mut r = rng(9);
    let x = Matrix::from_fn(80, 2, |_, _| r.random::<f64>());
    let y: Vec<f64> = (0..80).map(|i| (4.0 * x[(i, 0)]).sin() + 0.1 * normal(&mut r)).collect();
    let grid = build_grid_partition(&x, &y, 2, 2).unwrap();
    let graph = neighborhoods(&grid, AdjacencyRule::Edge, false);
    let settings = TrainSettings {
        delta: 1.0,
        batch_size: 4,
        iterations: 40,
        num_inducing: 2,
        master_seed: 3,
        adam: AdamConfig::default(),
        record_trace: false,
    };
    // worker 0 is scheduled far more often, so it finishes first and must keep serving
    let assignment = WorkerAssignment::contiguous(4, 2).unwrap();
    let (mut unanswered, mut post_exit, mut undelivered, mut early) = (0, 0, 0, 0);
    for trial in 0..1000u64 {
        let cfg = SimConfig {
            seed: trial,
            delivery_prob: 0.2 + 0.6 * ((trial % 7) as f64 / 6.0),
            weights: vec![50.0, 1.0],
            ..SimConfig::default()
        };
        let rep = run_simulated(&grid.partitions, &graph, &settings, &assignment, &cfg).unwrap();
        unanswered += rep.unanswered_requests;
        post_exit += rep.post_exit_messages;
        undelivered += rep.undelivered;
        early += usize::from(rep.progress_at_finish[0][1] < settings.iterations);
    }
    let pass = unanswered == 0 && post_exit == 0 && undelivered == 0 && t.elapsed() < Duration::from_secs(300);
    report(
        9,
        "quiescent termination over 1000 interleavings",
        pass,
        format!(
            "unanswered {unanswered}, post-exit {post_exit}, undelivered {undelivered}; \
             early finisher served a still-training peer in {early}/1000 trials"
        ),
        t,
    );
    assert!(pass);
    assert!(early > 900);
}

#[test]
fn criterion_10_exact_limit() {
    let _serial = serial();
    let t = Instant::now();
    let mut r = rng(10);
    let (x, y) = random_data(15, 2, &mut r);
    let kernel = KernelParams::new(&[0.35, 0.35], 1.0, 30.0).unwrap();
    let mean = vec![0.0; 15];
    let chol = Matrix::from_fn(15, 15, |i, j| if i == j { 0.3 } else { 0.0 });
    let mut state = VariationalState::new(x.clone(), mean, &chol, kernel.clone()).unwrap();
    let layout = state.layout();
    let keep = [layout.mean(), layout.chol()];
    let mut adam = AdamState::new(
        layout.len(),
        AdamConfig {
            step_size: 0.01,
            ..AdamConfig::default()
        },
    );
    let probes = Matrix::from_fn(40, 2, |_, _| r.random::<f64>());
    let exact = exact_posterior(&x, &y, &kernel, &probes).unwrap();
    let rms = |s: &VariationalState<f64>| {
        let p = predict(s, &probes).unwrap();
        (p.mean.iter().zip(&exact.mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 40.0).sqrt()
    };
    let steps = 20_000;
    for step in 0..steps {
        // geometric decay from 1e-2 to 1e-5
        adam.config.step_size = 1e-2 * 1e-3f64.powf(step as f64 / steps as f64);
        let mut g = elbo_grad(&x, &y, &state, 1.0, 15.0).unwrap();
        g.retain(&keep);
        adam_step(&mut state, &g, &mut adam);
    }
    let err = rms(&state);
    let frozen = state.inducing == x && state.kernel == kernel;
    let pass = err < 1e-4 && frozen && t.elapsed() < Duration::from_secs(60);
    report(
        10,
        "exact GP limit with inducing points at the data",
        pass,
        format!("rms difference of predictive means {err:.2e} (< 1e-4) at 40 probes"),
        t,
    );
    assert!(pass);
}

#[test]
fn metrics_are_defined_on_benchmark() {
    let _serial = serial();
    // sanity check that the pieces used above agree on a small run
    let data = benchmark(1);
    let run = TrainRun {
        iterations: 50,
        procs: 2,
        ..TrainRun::default()
    };
    let o = train_on(&run, &data).unwrap();
    let probes = boundary_probes(&o.grid, &o.graph, run.probes_per_edge, false).unwrap();
    assert_eq!(boundary_rmsd(&o.train.models, &probes).unwrap().rmsd, o.report.boundary_rmsd);
    assert_eq!(rmspe(&o.train.models, &o.grid.partitions).unwrap(), o.report.rmspe);
}
