//! Configuration, data handling, metrics and experiment orchestration.

pub mod config;
pub mod data;
pub mod metrics;
mod tables;

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::{run_training, write_audit, TrainOutput};
use crate::sgd::source_probs;
use crate::partition::{boundary_probes, build_grid_partition, neighborhoods, GridPartition, NeighborGraph};
use crate::svgp::{read_state_file, write_state_file, VariationalState};

pub use config::{parse_grid, SynthSpec, TrainRun};
pub use data::{ingest_csv, normalize, read_csv, synthesize, write_csv, CoordMap, Dataset, RawData};
pub use metrics::{boundary_rmsd, holdout_rmspe, rmspe, BoundaryReport};
pub use tables::{
    read_results, read_scaling, read_summary, summarize, write_results, write_scaling, write_summary, ScalingRow,
    SummaryRow, SweepRow,
};

/// Per-partition view of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionDiagnostic {
    pub partition: usize,
    pub observations: usize,
    pub neighbors: usize,
    /// Probability that a draw uses a neighbor's data.
    pub remote_probability: f64,
    /// `None` for an empty partition.
    pub rmspe: Option<f64>,
}

/// Metrics of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rmspe: f64,
    pub boundary_rmsd: f64,
    pub probes_used: usize,
    pub probes_skipped: usize,
    /// Out-of-sample error when a holdout fraction is configured.
    pub holdout_rmspe: Option<f64>,
    /// Training phase only.
    pub seconds: f64,
    pub seconds_per_iteration: f64,
    /// Partitioning and neighbor graph construction.
    pub setup_seconds: f64,
    /// Scoring after training.
    pub metric_seconds: f64,
    pub messages: usize,
    pub batch_requests: u64,
    pub skipped_steps: usize,
    pub partitions: Vec<PartitionDiagnostic>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn diagnostics(
    models: &[Option<VariationalState<f64>>],
    grid: &GridPartition<f64>,
    graph: &NeighborGraph,
    delta: f64,
) -> Result<Vec<PartitionDiagnostic>> {
    grid.partitions
        .iter()
        .map(|p| {
            let remote_probability = if p.is_empty() {
                0.0
            } else {
                1.0 - source_probs::<f64>(p.id, graph, delta)?.probs[0]
            };
            let rmspe = match models.get(p.id).and_then(Option::as_ref) {
                Some(_) if !p.is_empty() => Some(rmspe(models, std::slice::from_ref(p))?),
                _ => None,
            };
            Ok(PartitionDiagnostic {
                partition: p.id,
                observations: p.len(),
                neighbors: graph.adjacency[p.id].len(),
                remote_probability,
                rmspe,
            })
        })
        .collect()
}

pub struct RunOutcome {
    pub grid: GridPartition<f64>,
    pub graph: NeighborGraph,
    pub train: TrainOutput<f64>,
    pub report: RunReport,
}

/// The configured data set: the CSV file, or the synthetic field drawn with `seed`.
pub fn load_data(run: &TrainRun, seed: u64) -> Result<Dataset> {
    match &run.data {
        Some(path) => ingest_csv(path),
        None => normalize(&synthesize(&run.synth, seed)?),
    }
}

/// Partitions, trains and scores one configuration on `data`.
pub fn train_on(run: &TrainRun, data: &Dataset) -> Result<RunOutcome> {
    run.validate()?;
    let (train_data, held) = if run.holdout > 0.0 {
        let (a, b) = data.split_holdout(run.holdout, run.seed);
        (a, Some(b))
    } else {
        (data.clone(), None)
    };
    let setup = Instant::now();
    let grid = build_grid_partition(&train_data.coords, &train_data.responses, run.nx, run.ny)?;
    let graph = neighborhoods(&grid, run.adjacency, run.wraparound);
    let setup_seconds = setup.elapsed().as_secs_f64();
    if !grid.len().is_multiple_of(run.procs) {
        warn!("{} partitions do not divide evenly over {} workers", grid.len(), run.procs);
    }
    let started = Instant::now();
    let train = run_training(&grid.partitions, &graph, &run.settings(), run.procs, run.watchdog())?;
    info!(
        "trained {} partitions on {} workers in {:.2}s",
        grid.len(),
        run.procs,
        started.elapsed().as_secs_f64()
    );
    let scoring = Instant::now();
    let probes = boundary_probes(&grid, &graph, run.probes_per_edge, run.wraparound)?;
    let boundary = boundary_rmsd(&train.models, &probes)?;
    if boundary.probes_skipped > 0 {
        warn!("{} boundary probes touch empty partitions and were skipped", boundary.probes_skipped);
    }
    let holdout_rmspe = match &held {
        Some(h) if !h.is_empty() => Some(holdout_rmspe(&train.models, &grid, &h.coords, &h.responses)?),
        _ => None,
    };
    let total = rmspe(&train.models, &grid.partitions)?;
    let partitions = diagnostics(&train.models, &grid, &graph, run.delta)?;
    let report = RunReport {
        rmspe: total,
        boundary_rmsd: boundary.rmsd,
        probes_used: boundary.probes_used,
        probes_skipped: boundary.probes_skipped,
        holdout_rmspe,
        seconds: train.seconds,
        seconds_per_iteration: train.seconds / run.iterations as f64,
        setup_seconds,
        metric_seconds: scoring.elapsed().as_secs_f64(),
        messages: train.messages_sent(),
        batch_requests: train.batch_requests,
        skipped_steps: train.skipped_steps,
        partitions,
    };
    Ok(RunOutcome {
        grid,
        graph,
        train,
        report,
    })
}

pub fn run_once(run: &TrainRun) -> Result<RunOutcome> {
    let data = load_data(run, run.seed)?;
    train_on(run, &data)
}

fn model_path(dir: &Path, partition: usize) -> std::path::PathBuf {
    dir.join(format!("partition-{partition:04}.txt"))
}

/// One checkpoint file per trained partition.
pub fn write_models(dir: &Path, models: &[Option<VariationalState<f64>>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, m) in models.iter().enumerate() {
        if let Some(state) = m {
            write_state_file(&model_path(dir, k), state)?;
        }
    }
    Ok(())
}

/// Reads checkpoints for `count` partitions; missing files give `None`.
pub fn read_models(dir: &Path, count: usize) -> Result<Vec<Option<VariationalState<f64>>>> {
    (0..count)
        .map(|k| {
            let p = model_path(dir, k);
            if p.exists() {
                read_state_file(&p).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Writes every artifact of a single run into `dir`.
pub fn write_run(dir: &Path, run: &TrainRun, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("resolved-config.txt"), run.to_config_string())?;
    let row = SweepRow::from_report(run, 1, &outcome.report);
    write_results(&dir.join("results.csv"), std::slice::from_ref(&row))?;
    write_summary(&dir.join("summary.csv"), &summarize(std::slice::from_ref(&row)))?;
    write_models(&dir.join("models"), &outcome.train.models)?;
    write_audit(&outcome.train.audit, fs::File::create(dir.join("transport-audit.csv"))?)?;
    outcome.grid.write_manifest(fs::File::create(dir.join("partitions.csv"))?)?;
    fs::write(dir.join("report.json"), outcome.report.to_json()?)?;
    Ok(())
}

/// Rebuilds the partition layout for `run` and scores saved checkpoints.
pub fn recompute_metrics(run: &TrainRun, models_dir: &Path) -> Result<RunReport> {
    let data = load_data(run, run.seed)?;
    let train_data = if run.holdout > 0.0 {
        data.split_holdout(run.holdout, run.seed).0
    } else {
        data
    };
    let grid = build_grid_partition(&train_data.coords, &train_data.responses, run.nx, run.ny)?;
    let graph = neighborhoods(&grid, run.adjacency, run.wraparound);
    let models = read_models(models_dir, grid.len())?;
    if models.iter().all(Option::is_none) {
        return Err(Error::config(format!("no checkpoints found in {}", models_dir.display())));
    }
    let probes = boundary_probes(&grid, &graph, run.probes_per_edge, run.wraparound)?;
    let boundary = boundary_rmsd(&models, &probes)?;
    Ok(RunReport {
        rmspe: rmspe(&models, &grid.partitions)?,
        boundary_rmsd: boundary.rmsd,
        probes_used: boundary.probes_used,
        probes_skipped: boundary.probes_skipped,
        holdout_rmspe: None,
        seconds: 0.0,
        seconds_per_iteration: 0.0,
        setup_seconds: 0.0,
        metric_seconds: 0.0,
        messages: 0,
        batch_requests: 0,
        skipped_steps: 0,
        partitions: diagnostics(&models, &grid, &graph, run.delta)?,
    })
}

/// Seed of replication `rep` (1-based).
pub fn replication_seed(base: &TrainRun, rep: usize) -> u64 {
    base.seed + rep as u64 - 1
}

/// Every `(δ, m, rep)` combination. Replication `rep` draws its data (when
/// synthetic) and its training streams from [`replication_seed`]. Failed runs
/// are recorded and the sweep continues.
pub fn run_sweep(base: &TrainRun, deltas: &[f64], ms: &[usize], reps: usize, parallel: bool) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if deltas.is_empty() || ms.is_empty() || reps == 0 {
        return Err(Error::config("a sweep needs at least one delta, one m and one replication"));
    }
    let one_rep = |rep: usize| -> Vec<SweepRow> {
        let seed = replication_seed(base, rep);
        let data = load_data(base, seed);
        let mut rows = Vec::with_capacity(deltas.len() * ms.len());
        for &delta in deltas {
            for &m in ms {
                let run = TrainRun {
                    delta,
                    m,
                    seed,
                    ..base.clone()
                };
                let result = match &data {
                    Ok(d) => train_on(&run, d).map(|o| o.report),
                    Err(e) => Err(Error::config(format!("data: {e}"))),
                };
                rows.push(match result {
                    Ok(report) => SweepRow::from_report(&run, rep, &report),
                    Err(e) => {
                        warn!("delta {delta} m {m} rep {rep} failed: {e}");
                        SweepRow::failed(&run, rep, &e.to_string())
                    }
                });
            }
        }
        rows
    };
    let per_rep: Vec<Vec<SweepRow>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = (1..=reps).map(|rep| s.spawn(move || one_rep(rep))).collect();
            handles.into_iter().map(|h| h.join().expect("replication thread panicked")).collect()
        })
    } else {
        (1..=reps).map(one_rep).collect()
    };
    let mut rows: Vec<SweepRow> = per_rep.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.delta
            .total_cmp(&b.delta)
            .then(a.m.cmp(&b.m))
            .then(a.rep.cmp(&b.rep))
    });
    Ok(rows)
}

/// Wall time and message counts for each `(δ, N_proc)` on one data set.
pub fn run_scaling(base: &TrainRun, deltas: &[f64], proc_counts: &[usize]) -> Result<Vec<ScalingRow>> {
    base.validate()?;
    let data = load_data(base, base.seed)?;
    let partitions = base.nx * base.ny;
    let mut rows = Vec::new();
    for &delta in deltas {
        for &procs in proc_counts {
            if procs == 0 || !partitions.is_multiple_of(procs) {
                warn!("{procs} workers do not divide {partitions} partitions evenly");
            }
            let run = TrainRun {
                delta,
                procs,
                ..base.clone()
            };
            let outcome = train_on(&run, &data)?;
            rows.push(ScalingRow {
                delta,
                procs,
                seconds: outcome.report.seconds,
                messages: outcome.report.messages,
                batch_requests: outcome.report.batch_requests,
                rmspe: outcome.report.rmspe,
                boundary_rmsd: outcome.report.boundary_rmsd,
            });
        }
    }
    Ok(rows)
}
