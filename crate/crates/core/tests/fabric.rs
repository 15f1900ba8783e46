mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::rng;
use psvgp::fabric::sim::{run_simulated, SimConfig};
use psvgp::fabric::{
    run_training, run_training_with, tcp_network, AuditKind, Envelope, Message, MessageKind, Transport,
    WorkerAssignment,
};
use psvgp::linalg::Matrix;
use psvgp::partition::{build_grid_partition, neighborhoods, AdjacencyRule, NeighborGraph, PartitionData};
use psvgp::sgd::{train_isvgp, train_sequential, AdamConfig, LocalTrainer, TrainSettings};
use rand::Rng;

const WATCHDOG: Duration = Duration::from_secs(60);

fn dataset(n: usize, nx: usize, ny: usize, seed: u64) -> (Vec<PartitionData<f64>>, NeighborGraph) {
    let mut r = rng(seed);
    let x = Matrix::from_fn(n, 2, |_, _| r.random::<f64>());
    let y: Vec<f64> = (0..n)
        .map(|i| (5.0 * x[(i, 0)]).sin() + (3.0 * x[(i, 1)]).cos() + 0.1 * common::normal(&mut r))
        .collect();
    let grid = build_grid_partition(&x, &y, nx, ny).unwrap();
    let graph = neighborhoods(&grid, AdjacencyRule::Edge, false);
    (grid.partitions, graph)
}

fn settings(delta: f64, iterations: usize) -> TrainSettings<f64> {
    TrainSettings {
        delta,
        batch_size: 8,
        iterations,
        num_inducing: 4,
        master_seed: 11,
        adam: AdamConfig::default(),
        record_trace: false,
    }
}

fn bits(models: &[Option<psvgp::svgp::VariationalState<f64>>]) -> Vec<Option<Vec<u64>>> {
    models
        .iter()
        .map(|m| m.as_ref().map(|s| s.to_flat().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn single_worker_sends_nothing_and_matches_sequential() {
    let (parts, graph) = dataset(300, 3, 3, 1);
    let s = settings(0.5, 40);
    let out = run_training(&parts, &graph, &s, 1, WATCHDOG).unwrap();
    assert_eq!(out.messages_sent(), 0);
    assert_eq!(out.batch_requests, 0);
    let reference = train_sequential(&parts, &graph, &s).unwrap();
    assert_eq!(bits(&out.models), bits(&reference));
}

#[test]
fn delta_zero_sends_no_requests_and_equals_isvgp() {
    let (parts, graph) = dataset(320, 4, 4, 2);
    let s = settings(0.0, 30);
    let isvgp: Vec<_> = parts
        .iter()
        .map(|p| (!p.is_empty()).then(|| train_isvgp(p, &s).unwrap()))
        .collect();
    for procs in [1, 2, 4, 16] {
        let out = run_training(&parts, &graph, &s, procs, WATCHDOG).unwrap();
        assert_eq!(out.batch_requests, 0, "procs {procs}");
        assert!(out
            .audit
            .iter()
            .all(|e| e.kind != Some(MessageKind::BatchRequest) && e.kind != Some(MessageKind::BatchReply)));
        assert_eq!(bits(&out.models), bits(&isvgp), "procs {procs}");
    }
}

#[test]
fn results_independent_of_worker_count() {
    let (parts, graph) = dataset(400, 4, 4, 3);
    let s = settings(0.5, 25);
    let base = run_training(&parts, &graph, &s, 1, WATCHDOG).unwrap();
    for procs in [2, 3, 4, 8, 16] {
        let out = run_training(&parts, &graph, &s, procs, WATCHDOG).unwrap();
        assert_eq!(bits(&out.models), bits(&base.models), "procs {procs}");
        assert_eq!(out.stray_messages, 0);
    }
}

#[test]
fn request_count_matches_replayed_draws() {
    let (parts, graph) = dataset(200, 2, 2, 4);
    let s = settings(1.0, 100);
    let out = run_training(&parts, &graph, &s, 2, WATCHDOG).unwrap();
    let assignment = WorkerAssignment::contiguous(4, 2).unwrap();
    let mut expected = 0;
    for p in &parts {
        let mut t = LocalTrainer::new(p, &graph, &s).unwrap();
        for _ in 0..s.iterations {
            let d = t.draw(&graph);
            if assignment.owner_of(d.source) != assignment.owner_of(p.id) {
                expected += 1;
            }
        }
    }
    assert!(expected > 0);
    assert_eq!(out.batch_requests, expected);
    let sent = out
        .audit
        .iter()
        .filter(|e| e.event == AuditKind::Send && e.kind == Some(MessageKind::BatchRequest))
        .count() as u64;
    assert_eq!(sent, expected);
}

#[test]
fn communication_stays_within_neighbor_owners() {
    let (parts, graph) = dataset(500, 4, 4, 5);
    let s = settings(1.0, 20);
    let assignment = WorkerAssignment::contiguous(16, 8).unwrap();
    let out = run_training(&parts, &graph, &s, 8, WATCHDOG).unwrap();
    for r in 0..8 {
        let allowed = assignment.peers(r, &graph);
        let seen: BTreeSet<usize> = out.audit.iter().filter(|e| e.worker == r).filter_map(|e| e.peer).collect();
        assert!(seen.is_subset(&allowed), "worker {r}: {seen:?} vs {allowed:?}");
    }
    // every worker exits exactly once and does nothing afterwards
    for r in 0..8 {
        let events: Vec<_> = out.audit.iter().filter(|e| e.worker == r).collect();
        assert_eq!(events.last().unwrap().event, AuditKind::Exit);
        assert_eq!(events.iter().filter(|e| e.event == AuditKind::Exit).count(), 1);
    }
}

#[test]
fn tcp_transport_matches_in_process() {
    let (parts, graph) = dataset(300, 3, 3, 6);
    let s = settings(0.7, 30);
    let assignment = WorkerAssignment::contiguous(9, 3).unwrap();
    let tcp = run_training_with(&parts, &graph, &s, &assignment, tcp_network(3).unwrap(), WATCHDOG).unwrap();
    let local = run_training(&parts, &graph, &s, 3, WATCHDOG).unwrap();
    assert!(tcp.batch_requests > 0);
    assert_eq!(tcp.batch_requests, local.batch_requests);
    assert_eq!(bits(&tcp.models), bits(&local.models));
}

#[test]
fn empty_partitions_get_no_model() {
    // all points in the left column of a 3×2 grid's bounding box corners
    let x = Matrix::from_row_major(
        8,
        2,
        vec![0.0, 0.0, 0.1, 0.2, 0.2, 0.1, 0.05, 0.9, 0.1, 1.0, 0.2, 0.8, 1.0, 0.0, 0.95, 0.1],
    );
    let y = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
    let grid = build_grid_partition(&x, &y, 3, 2).unwrap();
    let graph = neighborhoods(&grid, AdjacencyRule::Edge, false);
    assert!(grid.counts().contains(&0));
    let s = TrainSettings {
        num_inducing: 2,
        ..settings(1.0, 10)
    };
    let out = run_training(&grid.partitions, &graph, &s, 3, WATCHDOG).unwrap();
    for (p, m) in grid.partitions.iter().zip(&out.models) {
        assert_eq!(p.is_empty(), m.is_none());
    }
}

/// Drops every batch reply, so requesters wait forever.
struct Lossy<X>(X);

impl<X: Transport<f64>> Transport<f64> for Lossy<X> {
    fn worker(&self) -> usize {
        self.0.worker()
    }
    fn send(&mut self, to: usize, message: Message<f64>) -> psvgp::Result<()> {
        if message.kind() == MessageKind::BatchReply {
            return Ok(());
        }
        self.0.send(to, message)
    }
    fn poll(&mut self) -> psvgp::Result<Vec<Envelope<f64>>> {
        self.0.poll()
    }
}

#[test]
fn watchdog_reports_stuck_worker() {
    let (parts, graph) = dataset(100, 2, 1, 7);
    let s = settings(1.0, 50);
    let assignment = WorkerAssignment::contiguous(2, 2).unwrap();
    let endpoints = psvgp::fabric::in_process_network(2).into_iter().map(Lossy).collect();
    let err = run_training_with(&parts, &graph, &s, &assignment, endpoints, Duration::from_millis(300)).unwrap_err();
    let text = err.to_string();
    assert!(matches!(err, psvgp::Error::Watchdog { .. }), "{text}");
    assert!(text.contains("awaiting reply"), "{text}");
}

#[test]
fn simulated_interleavings_match_threads() {
    let (parts, graph) = dataset(240, 2, 2, 8);
    let s = settings(1.0, 30);
    let assignment = WorkerAssignment::contiguous(4, 2).unwrap();
    let threaded = run_training(&parts, &graph, &s, 2, WATCHDOG).unwrap();
    for seed in 0..20 {
        let cfg = SimConfig {
            seed,
            delivery_prob: 0.3,
            ..SimConfig::default()
        };
        let sim = run_simulated(&parts, &graph, &s, &assignment, &cfg).unwrap();
        assert_eq!(bits(&sim.models), bits(&threaded.models));
        assert_eq!(sim.unanswered_requests, 0);
        assert_eq!(sim.post_exit_messages, 0);
        assert_eq!(sim.undelivered, 0);
    }
}

#[test]
fn early_finisher_keeps_serving() {
    let (parts, graph) = dataset(160, 2, 2, 9);
    let s = TrainSettings {
        num_inducing: 2,
        batch_size: 4,
        ..settings(1.0, 200)
    };
    let assignment = WorkerAssignment::contiguous(4, 2).unwrap();
    let cfg = SimConfig {
        seed: 1,
        delivery_prob: 0.8,
        weights: vec![200.0, 1.0],
        ..SimConfig::default()
    };
    let sim = run_simulated(&parts, &graph, &s, &assignment, &cfg).unwrap();
    let at_a = &sim.progress_at_finish[0];
    assert_eq!(at_a[0], 200);
    assert!(at_a[1] < 200, "B should still be training when A finishes: {at_a:?}");
    assert_eq!(sim.unanswered_requests, 0);
    assert_eq!(sim.post_exit_messages, 0);
    assert_eq!(sim.undelivered, 0);
}
