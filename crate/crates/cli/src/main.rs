use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use psvgp::experiment::{
    recompute_metrics, run_once, run_scaling, run_sweep, summarize, synthesize, write_csv, write_results,
    write_run, write_scaling, write_summary, TrainRun,
};

#[derive(Parser)]
#[command(name = "psvgp", version, about = "Partitioned sparse variational GP regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark field as `<out>/benchmark.csv`.
    Synth(RunArgs),
    /// Train one configuration and write its models, metrics and logs to `<out>`.
    Train(RunArgs),
    /// Train every (delta, m, replication) combination.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated delta values.
        #[arg(long, value_name = "LIST", default_value = "0,0.125,0.25,0.5,1")]
        deltas: String,
        /// Comma-separated inducing point counts.
        #[arg(long, value_name = "LIST", default_value = "5")]
        ms: String,
        #[arg(long, value_name = "INT", default_value_t = 10)]
        reps: usize,
        /// Run replications concurrently. Timings are then not comparable.
        #[arg(long)]
        parallel: bool,
    },
    /// Time training across worker counts.
    Scaling {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "LIST", default_value = "0,0.125,0.5,1")]
        deltas: String,
        /// Comma-separated worker counts.
        #[arg(long, value_name = "LIST", default_value = "1,2,4,8,16")]
        proc_counts: String,
    },
    /// Recompute metrics from the checkpoints of a finished `train` run.
    Metrics {
        /// Output directory of the run; its resolved config is the base unless --config is given.
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Flags shared by every subcommand. Each maps to the configuration key of the same name.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` file applied before the flags below.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// CSV with a lon,lat,value header; omit for the synthetic field.
    #[arg(long, value_name = "PATH")]
    data: Option<String>,
    #[arg(long, value_name = "NX,NY")]
    grid: Option<String>,
    /// Inducing points per partition.
    #[arg(long, value_name = "INT")]
    m: Option<String>,
    /// Weight of neighbor data, in [0, 1].
    #[arg(long, value_name = "FLOAT")]
    delta: Option<String>,
    #[arg(long, value_name = "INT")]
    batch: Option<String>,
    #[arg(long, value_name = "INT")]
    iters: Option<String>,
    #[arg(long, value_name = "INT")]
    procs: Option<String>,
    #[arg(long, value_name = "INT")]
    seed: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    step_size: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    beta1: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    beta2: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    epsilon: Option<String>,
    #[arg(long, value_name = "INT")]
    probes_per_edge: Option<String>,
    #[arg(long, value_name = "BOOL")]
    wraparound: Option<String>,
    /// `edge` or `edge+corner`.
    #[arg(long, value_name = "RULE")]
    adjacency: Option<String>,
    /// Fraction of observations held out for an out-of-sample error.
    #[arg(long, value_name = "FLOAT")]
    holdout: Option<String>,
    /// Seconds a worker may wait without progress before aborting.
    #[arg(long, value_name = "SECS")]
    watchdog: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, value_name = "INT")]
    synth_size: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    synth_lengthscale: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    synth_variance: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    synth_noise_precision: Option<String>,
}

impl RunArgs {
    fn resolve(&self, base: TrainRun) -> Result<TrainRun> {
        let mut run = match &self.config {
            Some(path) => TrainRun::from_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => base,
        };
        let flags = [
            ("data", &self.data),
            ("grid", &self.grid),
            ("m", &self.m),
            ("delta", &self.delta),
            ("batch", &self.batch),
            ("iters", &self.iters),
            ("procs", &self.procs),
            ("seed", &self.seed),
            ("step-size", &self.step_size),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("epsilon", &self.epsilon),
            ("probes-per-edge", &self.probes_per_edge),
            ("wraparound", &self.wraparound),
            ("adjacency", &self.adjacency),
            ("holdout", &self.holdout),
            ("watchdog", &self.watchdog),
            ("out", &self.out),
            ("synth-size", &self.synth_size),
            ("synth-lengthscale", &self.synth_lengthscale),
            ("synth-variance", &self.synth_variance),
            ("synth-noise-precision", &self.synth_noise_precision),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                run.set(key, v).with_context(|| format!("--{key}"))?;
            }
        }
        run.validate()?;
        Ok(run)
    }
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("--{flag}: {s:?} is not a valid value"))
        })
        .collect::<Result<Vec<T>>>()?;
    if values.is_empty() {
        bail!("--{flag} is empty");
    }
    Ok(values)
}

fn prepare(run: &TrainRun) -> Result<&Path> {
    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    fs::write(run.out.join("resolved-config.txt"), run.to_config_string())?;
    Ok(&run.out)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(args) => {
            let run = args.resolve(TrainRun::default())?;
            let dir = prepare(&run)?;
            let raw = synthesize(&run.synth, run.seed)?;
            let path = dir.join("benchmark.csv");
            write_csv(&raw, fs::File::create(&path)?)?;
            println!("wrote {} observations to {}", raw.len(), path.display());
        }
        Command::Train(args) => {
            let run = args.resolve(TrainRun::default())?;
            let outcome = run_once(&run)?;
            write_run(&run.out, &run, &outcome)?;
            let r = &outcome.report;
            println!(
                "rmspe {} boundary_rmsd {} seconds {:.3} messages {} batch_requests {}",
                r.rmspe, r.boundary_rmsd, r.seconds, r.messages, r.batch_requests
            );
            if let Some(h) = r.holdout_rmspe {
                println!("holdout_rmspe {h}");
            }
            info!("outputs in {}", run.out.display());
        }
        Command::Sweep {
            run,
            deltas,
            ms,
            reps,
            parallel,
        } => {
            let run = run.resolve(TrainRun::default())?;
            let deltas: Vec<f64> = parse_list("deltas", &deltas)?;
            let ms: Vec<usize> = parse_list("ms", &ms)?;
            let dir = prepare(&run)?;
            let rows = run_sweep(&run, &deltas, &ms, reps, parallel)?;
            let summary = summarize(&rows);
            write_results(&dir.join("results.csv"), &rows)?;
            write_summary(&dir.join("summary.csv"), &summary)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            for s in &summary {
                println!(
                    "delta {} m {} runs {} median_rmspe {} median_boundary_rmsd {}",
                    s.delta, s.m, s.runs, s.median_rmspe, s.median_boundary_rmsd
                );
            }
            if failed > 0 {
                bail!("{failed} of {} runs failed; see results.csv", rows.len());
            }
        }
        Command::Scaling {
            run,
            deltas,
            proc_counts,
        } => {
            let run = run.resolve(TrainRun::default())?;
            let deltas: Vec<f64> = parse_list("deltas", &deltas)?;
            let procs: Vec<usize> = parse_list("proc-counts", &proc_counts)?;
            let dir = prepare(&run)?;
            let rows = run_scaling(&run, &deltas, &procs)?;
            write_scaling(&dir.join("scaling.csv"), &rows)?;
            for r in &rows {
                println!(
                    "delta {} procs {} seconds {:.3} messages {}",
                    r.delta, r.procs, r.seconds, r.messages
                );
            }
        }
        Command::Metrics { run_dir, run } => {
            let base_path = run_dir.join("resolved-config.txt");
            let base = if run.config.is_none() {
                TrainRun::from_file(&base_path).with_context(|| format!("reading {}", base_path.display()))?
            } else {
                TrainRun::default()
            };
            let resolved = run.resolve(base)?;
            let report = recompute_metrics(&resolved, &run_dir.join("models"))?;
            println!("{}", report.to_json()?);
        }
    }
    Ok(())
}
