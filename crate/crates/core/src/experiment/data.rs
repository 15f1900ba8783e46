use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SynthSpec;
use crate::error::{Error, Result};
use crate::gp_math::{sample_grf, KernelParams};
use crate::linalg::Matrix;

/// Observations as read from disk, before any normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawData {
    pub lon: Vec<f64>,
    pub lat: Vec<f64>,
    pub value: Vec<f64>,
}

impl RawData {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Per-axis affine map `scaled = (raw − offset) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordMap {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl CoordMap {
    pub fn identity() -> Self {
        CoordMap {
            offset: [0.0; 2],
            scale: [1.0; 2],
        }
    }

    pub fn to_unit(&self, raw: [f64; 2]) -> [f64; 2] {
        [
            (raw[0] - self.offset[0]) / self.scale[0],
            (raw[1] - self.offset[1]) / self.scale[1],
        ]
    }

    pub fn to_raw(&self, unit: [f64; 2]) -> [f64; 2] {
        [
            unit[0] * self.scale[0] + self.offset[0],
            unit[1] * self.scale[1] + self.offset[1],
        ]
    }
}

/// Model-ready data: coordinates in `[0,1]²`, responses centered.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub coords: Matrix<f64>,
    pub responses: Vec<f64>,
    /// Subtracted from the raw responses.
    pub mean: f64,
    pub map: CoordMap,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn uncenter(&self, v: f64) -> f64 {
        v + self.mean
    }

    /// Splits off a uniformly chosen `fraction` of the rows.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let n = self.len();
        let k = ((n as f64) * fraction).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let mut held = index::sample(&mut rng, n, k.min(n)).into_vec();
        held.sort_unstable();
        let mut is_held = vec![false; n];
        for &i in &held {
            is_held[i] = true;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
        (self.subset(&keep), self.subset(&held))
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            coords: Matrix::from_fn(rows.len(), 2, |i, j| self.coords[(rows[i], j)]),
            responses: rows.iter().map(|&i| self.responses[i]).collect(),
            mean: self.mean,
            map: self.map.clone(),
        }
    }
}

fn parse_field(text: &str, path: &str, line: u64, name: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        message: format!("{name}: {text:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_string(),
            line,
            message: format!("{name} is not finite"),
        });
    }
    Ok(v)
}

/// Reads `lon,lat,value` rows. `name` labels errors.
pub fn read_csv<R: Read>(reader: R, name: &str) -> Result<RawData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["lon", "lat", "value"] {
        return Err(Error::Parse {
            path: name.to_string(),
            line: 1,
            message: format!("expected header lon,lat,value, found {}", header.join(",")),
        });
    }
    let mut data = RawData {
        lon: Vec::new(),
        lat: Vec::new(),
        value: Vec::new(),
    };
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Parse {
                path: name.to_string(),
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        data.lon.push(parse_field(&record[0], name, line, "lon")?);
        data.lat.push(parse_field(&record[1], name, line, "lat")?);
        data.value.push(parse_field(&record[2], name, line, "value")?);
    }
    Ok(data)
}

/// Writes `lon,lat,value` rows with shortest round-trip formatting.
pub fn write_csv<W: Write>(data: &RawData, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["lon", "lat", "value"])?;
    for i in 0..data.len() {
        out.write_record([data.lon[i].to_string(), data.lat[i].to_string(), data.value[i].to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Centers responses and scales each coordinate axis onto `[0, 1]`.
pub fn normalize(raw: &RawData) -> Result<Dataset> {
    if raw.is_empty() {
        return Err(Error::config("data set has no observations"));
    }
    let n = raw.len();
    let mut map = CoordMap::identity();
    for (axis, values) in [&raw.lon, &raw.lat].into_iter().enumerate() {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        map.offset[axis] = lo;
        map.scale[axis] = if hi > lo { hi - lo } else { 1.0 };
    }
    let coords = Matrix::from_fn(n, 2, |i, j| map.to_unit([raw.lon[i], raw.lat[i]])[j]);
    let mean = raw.value.iter().sum::<f64>() / n as f64;
    let responses = raw.value.iter().map(|v| v - mean).collect();
    Ok(Dataset {
        coords,
        responses,
        mean,
        map,
    })
}

pub fn ingest_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    normalize(&read_csv(file, &path.display().to_string())?)
}

/// Lattice points `((i)/(s−1), (j)/(s−1))`, row-major with x fastest.
pub fn lattice(side: usize) -> Matrix<f64> {
    let step = if side > 1 { 1.0 / (side - 1) as f64 } else { 0.0 };
    Matrix::from_fn(side * side, 2, |i, j| {
        let (ix, iy) = (i % side, i / side);
        if j == 0 {
            ix as f64 * step
        } else {
            iy as f64 * step
        }
    })
}

/// A noisy Gaussian-random-field draw on the lattice, in raw units.
pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<RawData> {
    let grid = lattice(spec.side);
    let kernel = KernelParams::isotropic(2, spec.lengthscale, spec.variance, spec.noise_precision)?;
    let value = sample_grf(&grid, &kernel, seed)?;
    Ok(RawData {
        lon: (0..grid.rows()).map(|i| grid[(i, 0)]).collect(),
        lat: (0..grid.rows()).map(|i| grid[(i, 1)]).collect(),
        value,
    })
}
