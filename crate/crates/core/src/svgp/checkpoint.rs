//! Plain-text checkpoint record for a [`VariationalState`].
//!
//! ```text
//! psvgp-state 1
//! inducing_points 3 2
//! 0e0 1e-1
//! ...
//! variational_mean 3
//! variational_chol_packed 6
//! log_lengthscales 2
//! log_process_variance 1
//! log_noise_precision 1
//! end
//! ```
//!
//! Each field header names the field and its dims; values follow row-major,
//! one matrix row per line, written as shortest round-trip `f64` literals so
//! reading back reproduces every bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gp_math::KernelParams;
use crate::linalg::Matrix;
use crate::Scalar;

use super::state::VariationalState;

const MAGIC: &str = "psvgp-state";
const VERSION: u32 = 1;

fn write_values<T: Scalar, W: Write>(w: &mut W, values: &[T], per_line: usize) -> std::io::Result<()> {
    for chunk in values.chunks(per_line.max(1)) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{:e}", v.as_f64())).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn write_state<T: Scalar, W: Write>(w: &mut W, state: &VariationalState<T>) -> Result<()> {
    let m = state.num_inducing();
    let d = state.dim();
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "inducing_points {m} {d}")?;
    write_values(w, state.inducing.as_slice(), d)?;
    writeln!(w, "variational_mean {m}")?;
    write_values(w, &state.mean, m)?;
    writeln!(w, "variational_chol_packed {}", state.chol_packed.len())?;
    let mut offset = 0;
    for i in 0..m {
        write_values(w, &state.chol_packed[offset..offset + i + 1], i + 1)?;
        offset += i + 1;
    }
    writeln!(w, "log_lengthscales {d}")?;
    write_values(w, &state.kernel.log_lengthscales, d)?;
    writeln!(w, "log_process_variance 1")?;
    write_values(w, &[state.kernel.log_variance], 1)?;
    writeln!(w, "log_noise_precision 1")?;
    write_values(w, &[state.kernel.log_noise_precision], 1)?;
    writeln!(w, "end")?;
    Ok(())
}

struct Reader<R> {
    lines: std::io::Lines<R>,
    line_no: u64,
    tokens: std::vec::IntoIter<String>,
}

impl<R: BufRead> Reader<R> {
    fn next_token(&mut self) -> Result<String> {
        loop {
            if let Some(t) = self.tokens.next() {
                return Ok(t);
            }
            let line = self
                .lines
                .next()
                .ok_or_else(|| Error::Format(format!("unexpected end of record after line {}", self.line_no)))??;
            self.line_no += 1;
            self.tokens = line.split_whitespace().map(str::to_owned).collect::<Vec<_>>().into_iter();
        }
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let t = self.next_token()?;
        if t == word {
            Ok(())
        } else {
            Err(Error::Format(format!("line {}: expected `{word}`, found `{t}`", self.line_no)))
        }
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.next_token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("line {}: expected a count, found `{t}`", self.line_no)))
    }

    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n)
            .map(|_| {
                let t = self.next_token()?;
                t.parse::<f64>()
                    .map(T::of)
                    .map_err(|_| Error::Format(format!("line {}: bad number `{t}`", self.line_no)))
            })
            .collect()
    }

    fn field<T: Scalar>(&mut self, name: &str, dims: &[usize]) -> Result<Vec<T>> {
        self.expect(name)?;
        for &want in dims {
            let got = self.usize()?;
            if got != want {
                return Err(Error::Format(format!(
                    "line {}: field `{name}` has dimension {got}, expected {want}",
                    self.line_no
                )));
            }
        }
        self.values(dims.iter().product())
    }
}

pub fn read_state<T: Scalar, R: BufRead>(r: R) -> Result<VariationalState<T>> {
    let mut rd = Reader {
        lines: r.lines(),
        line_no: 0,
        tokens: Vec::new().into_iter(),
    };
    rd.expect(MAGIC)?;
    let version = rd.usize()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported state version {version}")));
    }
    rd.expect("inducing_points")?;
    let m = rd.usize()?;
    let d = rd.usize()?;
    if m == 0 || d == 0 {
        return Err(Error::Format("empty inducing set".into()));
    }
    let z = rd.values(m * d)?;
    let mean = rd.field("variational_mean", &[m])?;
    let chol_packed = rd.field("variational_chol_packed", &[m * (m + 1) / 2])?;
    let log_lengthscales = rd.field("log_lengthscales", &[d])?;
    let log_variance = rd.field("log_process_variance", &[1])?[0];
    let log_noise_precision = rd.field("log_noise_precision", &[1])?[0];
    rd.expect("end")?;
    Ok(VariationalState {
        inducing: Matrix::from_row_major(m, d, z),
        mean,
        chol_packed,
        kernel: KernelParams {
            log_lengthscales,
            log_variance,
            log_noise_precision,
        },
    })
}

pub fn write_state_file<T: Scalar>(path: &Path, state: &VariationalState<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_state(&mut w, state)?;
    w.flush()?;
    Ok(())
}

pub fn read_state_file<T: Scalar>(path: &Path) -> Result<VariationalState<T>> {
    read_state(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_state() -> impl Strategy<Value = VariationalState<f64>> {
        (1usize..5, 1usize..3).prop_flat_map(|(m, d)| {
            let p = m * (m + 1) / 2;
            (
                prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO | prop::num::f64::INFINITE, m * d),
                prop::collection::vec(-1e6f64..1e6, m),
                prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL, p),
                prop::collection::vec(-5f64..5.0, d),
                -10f64..10.0,
                -10f64..10.0,
            )
                .prop_map(move |(z, mean, chol, ls, v, b)| VariationalState {
                    inducing: Matrix::from_row_major(m, d, z),
                    mean,
                    chol_packed: chol,
                    kernel: KernelParams {
                        log_lengthscales: ls,
                        log_variance: v,
                        log_noise_precision: b,
                    },
                })
        })
    }

    fn bits(s: &VariationalState<f64>) -> Vec<u64> {
        s.to_flat().iter().map(|v| v.to_bits()).collect()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(state in arb_state()) {
            let mut buf = Vec::new();
            write_state(&mut buf, &state).unwrap();
            let back: VariationalState<f64> = read_state(buf.as_slice()).unwrap();
            prop_assert_eq!(bits(&back), bits(&state));
        }
    }

    #[test]
    fn f32_state_survives_f64_text() {
        let s = VariationalState::<f32>::new(
            Matrix::from_row_major(1, 1, vec![0.1f32]),
            vec![1.0 / 3.0],
            &Matrix::from_row_major(1, 1, vec![0.7f32]),
            KernelParams::new(&[0.3f32], 1.1, 9.0).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_state(&mut buf, &s).unwrap();
        let back: VariationalState<f32> = read_state(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn wrong_dims_rejected() {
        let text = "psvgp-state 1\ninducing_points 1 1\n0\nvariational_mean 2\n0 0\n";
        let err = read_state::<f64, _>(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("variational_mean"), "{err}");
        assert!(read_state::<f64, _>("garbage".as_bytes()).is_err());
    }
}
