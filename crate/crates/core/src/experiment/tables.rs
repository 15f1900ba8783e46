use std::collections::BTreeMap;
use std::path::Path;

use super::{RunReport, TrainRun};
use crate::error::{Error, Result};

/// One line of the long-format results table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub m: usize,
    pub rep: usize,
    pub rmspe: f64,
    pub boundary_rmsd: f64,
    pub seconds: f64,
    pub messages: usize,
    pub batch_requests: u64,
    /// `ok`, or the error of a failed run.
    pub status: String,
}

impl SweepRow {
    pub fn from_report(run: &TrainRun, rep: usize, r: &RunReport) -> Self {
        SweepRow {
            delta: run.delta,
            m: run.m,
            rep,
            rmspe: r.rmspe,
            boundary_rmsd: r.boundary_rmsd,
            seconds: r.seconds,
            messages: r.messages,
            batch_requests: r.batch_requests,
            status: "ok".into(),
        }
    }

    pub fn failed(run: &TrainRun, rep: usize, error: &str) -> Self {
        SweepRow {
            delta: run.delta,
            m: run.m,
            rep,
            rmspe: f64::NAN,
            boundary_rmsd: f64::NAN,
            seconds: f64::NAN,
            messages: 0,
            batch_requests: 0,
            status: error.replace(['\n', '\r'], " "),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Aggregate over the successful replications of one `(δ, m)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub delta: f64,
    pub m: usize,
    pub runs: usize,
    pub failures: usize,
    pub mean_rmspe: f64,
    pub mean_boundary_rmsd: f64,
    pub mean_seconds: f64,
    pub mean_messages: f64,
    pub median_rmspe: f64,
    pub median_boundary_rmsd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub delta: f64,
    pub procs: usize,
    pub seconds: f64,
    pub messages: usize,
    pub batch_requests: u64,
    pub rmspe: f64,
    pub boundary_rmsd: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Median, averaging the middle pair for even counts.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Groups rows by `(δ, m)` in order of first appearance.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(u64, usize)> = Vec::new();
    let mut groups: BTreeMap<(u64, usize), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.delta.to_bits(), r.m);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ok: Vec<&&SweepRow> = g.iter().filter(|r| r.is_ok()).collect();
            let col = |f: fn(&SweepRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let rmspe = col(|r| r.rmspe);
            let rmsd = col(|r| r.boundary_rmsd);
            SummaryRow {
                delta: f64::from_bits(key.0),
                m: key.1,
                runs: ok.len(),
                failures: g.len() - ok.len(),
                mean_rmspe: mean(&rmspe),
                mean_boundary_rmsd: mean(&rmsd),
                mean_seconds: mean(&col(|r| r.seconds)),
                mean_messages: mean(&col(|r| r.messages as f64)),
                median_rmspe: median(&rmspe),
                median_boundary_rmsd: median(&rmsd),
            }
        })
        .collect()
}

const RESULTS_HEADER: [&str; 9] = [
    "delta",
    "m",
    "rep",
    "rmspe",
    "boundary_rmsd",
    "seconds",
    "messages",
    "batch_requests",
    "status",
];

const SUMMARY_HEADER: [&str; 10] = [
    "delta",
    "m",
    "runs",
    "failures",
    "mean_rmspe",
    "mean_boundary_rmsd",
    "mean_seconds",
    "mean_messages",
    "median_rmspe",
    "median_boundary_rmsd",
];

const SCALING_HEADER: [&str; 7] = [
    "delta",
    "procs",
    "seconds",
    "messages",
    "batch_requests",
    "rmspe",
    "boundary_rmsd",
];

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<&str> = r.headers()?.iter().collect();
    if found != header {
        return Err(Error::Parse {
            path: name,
            line: 1,
            message: format!("unexpected header {}", found.join(",")),
        });
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((rec.position().map_or(0, |p| p.line()), rec))
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("bad value in column {}", i + 1),
    })
}

pub fn write_results(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_table(
        path,
        &RESULTS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.delta.to_string(),
                r.m.to_string(),
                r.rep.to_string(),
                r.rmspe.to_string(),
                r.boundary_rmsd.to_string(),
                r.seconds.to_string(),
                r.messages.to_string(),
                r.batch_requests.to_string(),
                r.status.clone(),
            ]
        }),
    )
}

pub fn read_results(path: &Path) -> Result<Vec<SweepRow>> {
    read_table(path, &RESULTS_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(SweepRow {
                delta: field(path, line, &rec, 0)?,
                m: field(path, line, &rec, 1)?,
                rep: field(path, line, &rec, 2)?,
                rmspe: field(path, line, &rec, 3)?,
                boundary_rmsd: field(path, line, &rec, 4)?,
                seconds: field(path, line, &rec, 5)?,
                messages: field(path, line, &rec, 6)?,
                batch_requests: field(path, line, &rec, 7)?,
                status: rec.get(8).unwrap_or("").to_string(),
            })
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_table(
        path,
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.delta.to_string(),
                r.m.to_string(),
                r.runs.to_string(),
                r.failures.to_string(),
                r.mean_rmspe.to_string(),
                r.mean_boundary_rmsd.to_string(),
                r.mean_seconds.to_string(),
                r.mean_messages.to_string(),
                r.median_rmspe.to_string(),
                r.median_boundary_rmsd.to_string(),
            ]
        }),
    )
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_table(path, &SUMMARY_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(SummaryRow {
                delta: field(path, line, &rec, 0)?,
                m: field(path, line, &rec, 1)?,
                runs: field(path, line, &rec, 2)?,
                failures: field(path, line, &rec, 3)?,
                mean_rmspe: field(path, line, &rec, 4)?,
                mean_boundary_rmsd: field(path, line, &rec, 5)?,
                mean_seconds: field(path, line, &rec, 6)?,
                mean_messages: field(path, line, &rec, 7)?,
                median_rmspe: field(path, line, &rec, 8)?,
                median_boundary_rmsd: field(path, line, &rec, 9)?,
            })
        })
        .collect()
}

pub fn write_scaling(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    write_table(
        path,
        &SCALING_HEADER,
        rows.iter().map(|r| {
            vec![
                r.delta.to_string(),
                r.procs.to_string(),
                r.seconds.to_string(),
                r.messages.to_string(),
                r.batch_requests.to_string(),
                r.rmspe.to_string(),
                r.boundary_rmsd.to_string(),
            ]
        }),
    )
}

pub fn read_scaling(path: &Path) -> Result<Vec<ScalingRow>> {
    read_table(path, &SCALING_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(ScalingRow {
                delta: field(path, line, &rec, 0)?,
                procs: field(path, line, &rec, 1)?,
                seconds: field(path, line, &rec, 2)?,
                messages: field(path, line, &rec, 3)?,
                batch_requests: field(path, line, &rec, 4)?,
                rmspe: field(path, line, &rec, 5)?,
                boundary_rmsd: field(path, line, &rec, 6)?,
            })
        })
        .collect()
}
