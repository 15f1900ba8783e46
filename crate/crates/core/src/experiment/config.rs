use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::partition::AdjacencyRule;
use crate::sgd::{AdamConfig, TrainSettings};

/// The standard synthetic field: a `side × side` lattice on the unit square.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub side: usize,
    pub lengthscale: f64,
    pub variance: f64,
    pub noise_precision: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            side: 64,
            lengthscale: 0.08,
            variance: 1.0,
            noise_precision: 25.0,
        }
    }
}

/// One training configuration. Keys accepted by [`TrainRun::set`] match the
/// CLI flag names.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    /// CSV with a `lon,lat,value` header; `None` uses the synthetic field.
    pub data: Option<PathBuf>,
    pub synth: SynthSpec,
    pub nx: usize,
    pub ny: usize,
    pub m: usize,
    pub delta: f64,
    pub batch: usize,
    pub iterations: usize,
    pub procs: usize,
    pub seed: u64,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub probes_per_edge: usize,
    pub wraparound: bool,
    pub adjacency: AdjacencyRule,
    /// Fraction of observations held out for an out-of-sample error; 0 disables.
    pub holdout: f64,
    pub watchdog_secs: f64,
    pub out: PathBuf,
}

impl Default for TrainRun {
    fn default() -> Self {
        let adam = AdamConfig::<f64>::default();
        TrainRun {
            data: None,
            synth: SynthSpec::default(),
            nx: 4,
            ny: 4,
            m: 5,
            delta: 0.0,
            batch: 32,
            iterations: 1500,
            procs: 1,
            seed: 1,
            step_size: adam.step_size,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            probes_per_edge: 20,
            wraparound: false,
            adjacency: AdjacencyRule::Edge,
            holdout: 0.0,
            watchdog_secs: 120.0,
            out: PathBuf::from("psvgp-out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::config(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

/// Parses `NX,NY`.
pub fn parse_grid(value: &str) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::config(format!("grid: expected NX,NY, got {value:?}")))?;
    Ok((parse("grid", a)?, parse("grid", b)?))
}

impl TrainRun {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "data" => {
                let v = value.trim();
                self.data = (!v.is_empty() && v != "synthetic").then(|| PathBuf::from(v));
            }
            "grid" => (self.nx, self.ny) = parse_grid(value)?,
            "m" => self.m = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "iters" => self.iterations = parse(key, value)?,
            "procs" => self.procs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "step-size" => self.step_size = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "probes-per-edge" => self.probes_per_edge = parse(key, value)?,
            "wraparound" => self.wraparound = parse_bool(key, value)?,
            "adjacency" => self.adjacency = parse(key, value)?,
            "holdout" => self.holdout = parse(key, value)?,
            "watchdog" => self.watchdog_secs = parse(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "synth-size" => self.synth.side = parse(key, value)?,
            "synth-lengthscale" => self.synth.lengthscale = parse(key, value)?,
            "synth-variance" => self.synth.variance = parse(key, value)?,
            "synth-noise-precision" => self.synth.noise_precision = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut run = TrainRun::default();
        run.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(run)
    }

    /// Every key, in a form [`TrainRun::apply_text`] reads back unchanged.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let data = self
            .data
            .as_ref()
            .map_or("synthetic".to_string(), |p| p.display().to_string());
        let _ = writeln!(s, "data = {data}");
        let _ = writeln!(s, "synth-size = {}", self.synth.side);
        let _ = writeln!(s, "synth-lengthscale = {}", self.synth.lengthscale);
        let _ = writeln!(s, "synth-variance = {}", self.synth.variance);
        let _ = writeln!(s, "synth-noise-precision = {}", self.synth.noise_precision);
        let _ = writeln!(s, "grid = {},{}", self.nx, self.ny);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "delta = {}", self.delta);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "iters = {}", self.iterations);
        let _ = writeln!(s, "procs = {}", self.procs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "step-size = {}", self.step_size);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "probes-per-edge = {}", self.probes_per_edge);
        let _ = writeln!(s, "wraparound = {}", self.wraparound);
        let _ = writeln!(s, "adjacency = {}", self.adjacency);
        let _ = writeln!(s, "holdout = {}", self.holdout);
        let _ = writeln!(s, "watchdog = {}", self.watchdog_secs);
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid x", self.nx),
            ("grid y", self.ny),
            ("m", self.m),
            ("batch", self.batch),
            ("iters", self.iterations),
            ("procs", self.procs),
            ("synth-size", self.synth.side),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if self.procs > self.nx * self.ny {
            return Err(Error::config(format!(
                "{} workers exceed the {} partitions",
                self.procs,
                self.nx * self.ny
            )));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::config("holdout must lie in [0, 1)"));
        }
        let finite_positive = [
            ("step-size", self.step_size),
            ("epsilon", self.epsilon),
            ("watchdog", self.watchdog_secs),
            ("synth-lengthscale", self.synth.lengthscale),
            ("synth-variance", self.synth.variance),
            ("synth-noise-precision", self.synth.noise_precision),
        ];
        for (name, v) in finite_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive and finite")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> TrainSettings<f64> {
        TrainSettings {
            delta: self.delta,
            batch_size: self.batch,
            iterations: self.iterations,
            num_inducing: self.m,
            master_seed: self.seed,
            adam: AdamConfig {
                step_size: self.step_size,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            record_trace: false,
        }
    }

    pub fn watchdog(&self) -> Duration {
        Duration::from_secs_f64(self.watchdog_secs)
    }
}
