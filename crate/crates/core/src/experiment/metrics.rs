use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::partition::{BoundaryProbe, GridPartition, PartitionData};
use crate::svgp::{predict, VariationalState};

type Models = [Option<VariationalState<f64>>];

/// Root mean squared error over all observations, each predicted by the model
/// of the partition it belongs to.
pub fn rmspe(models: &Models, parts: &[PartitionData<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in parts {
        if p.is_empty() {
            continue;
        }
        let model = models
            .get(p.id)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::config(format!("no model for nonempty partition {}", p.id)))?;
        let pred = predict(model, &p.coords)?;
        sum += pred
            .mean
            .iter()
            .zip(&p.responses)
            .map(|(f, y)| (y - f).powi(2))
            .sum::<f64>();
        n += p.len();
    }
    if n == 0 {
        return Err(Error::config("no observations to score"));
    }
    Ok((sum / n as f64).sqrt())
}

/// Root mean squared error on points outside the training set, each predicted
/// by the model owning the partition cell it falls in.
pub fn holdout_rmspe(models: &Models, grid: &GridPartition<f64>, coords: &Matrix<f64>, responses: &[f64]) -> Result<f64> {
    let mut by_partition: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..responses.len() {
        by_partition.entry(grid.locate(coords.row(i))).or_default().push(i);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, rows) in by_partition {
        let Some(model) = models.get(k).and_then(Option::as_ref) else {
            continue;
        };
        let pts = Matrix::from_fn(rows.len(), coords.cols(), |i, j| coords[(rows[i], j)]);
        let pred = predict(model, &pts)?;
        for (f, &i) in pred.mean.iter().zip(&rows) {
            sum += (responses[i] - f).powi(2);
        }
        n += rows.len();
    }
    if n == 0 {
        return Err(Error::config("no held-out observation falls in a modeled partition"));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryReport {
    pub rmsd: f64,
    pub probes_used: usize,
    /// Probes with an empty partition on either side.
    pub probes_skipped: usize,
}

/// Root mean squared difference between the two neighboring models'
/// predictive means at each probe.
pub fn boundary_rmsd(models: &Models, probes: &[BoundaryProbe<f64>]) -> Result<BoundaryReport> {
    let has = |k: usize| models.get(k).is_some_and(Option::is_some);
    let used: Vec<&BoundaryProbe<f64>> = probes.iter().filter(|p| has(p.a) && has(p.b)).collect();
    let skipped = probes.len() - used.len();
    if used.is_empty() {
        return Ok(BoundaryReport {
            rmsd: f64::NAN,
            probes_used: 0,
            probes_skipped: skipped,
        });
    }
    // evaluate each model once on all of its probe points
    let mut points: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    let mut slot = Vec::with_capacity(used.len());
    for p in &used {
        let ia = points.entry(p.a).or_default();
        ia.push(&p.point_a);
        let sa = ia.len() - 1;
        let ib = points.entry(p.b).or_default();
        ib.push(&p.point_b);
        slot.push((sa, ib.len() - 1));
    }
    let mut means: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (k, pts) in points {
        let dim = pts[0].len();
        let m = Matrix::from_fn(pts.len(), dim, |i, j| pts[i][j]);
        means.insert(k, predict(models[k].as_ref().unwrap(), &m)?.mean);
    }
    let sum: f64 = used
        .iter()
        .zip(&slot)
        .map(|(p, &(sa, sb))| (means[&p.a][sa] - means[&p.b][sb]).powi(2))
        .sum();
    Ok(BoundaryReport {
        rmsd: (sum / used.len() as f64).sqrt(),
        probes_used: used.len(),
        probes_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_math::KernelParams;

    /// A model whose predictive mean is the constant `c` far from its inducing input.
    fn constant_model(c: f64) -> VariationalState<f64> {
        // with one inducing point and a huge lengthscale the mean is k·K⁻¹·m ≈ m everywhere
        let z = Matrix::from_row_major(1, 2, vec![0.5, 0.5]);
        let k = KernelParams::isotropic(2, 1e6, 1.0, 10.0).unwrap();
        VariationalState::new(z, vec![c], &Matrix::identity(1), k).unwrap()
    }

    fn part(id: usize, pts: Vec<f64>, y: Vec<f64>) -> PartitionData<f64> {
        let n = y.len();
        PartitionData::new(id, Matrix::from_row_major(n, 2, pts), y)
    }

    #[test]
    fn perfect_and_zero_predictors() {
        let p = part(0, vec![0.1, 0.1, 0.9, 0.9], vec![2.0, 2.0]);
        assert!(rmspe(&[Some(constant_model(2.0))], std::slice::from_ref(&p)).unwrap() < 1e-7);
        // zero predictor on centered data gives the population standard deviation
        let y = vec![1.0, -3.0, 2.0, 0.0];
        let q = part(0, vec![0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4], y.clone());
        let sd = (y.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        assert!((rmspe(&[Some(constant_model(0.0))], &[q]).unwrap() - sd).abs() < 1e-7);
    }

    #[test]
    fn two_partition_toy() {
        let parts = vec![
            part(0, vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 2.0]),
            part(1, vec![0.7, 0.2, 0.8, 0.6, 0.9, 0.9], vec![-1.0, 0.0, 1.0]),
        ];
        let models = vec![Some(constant_model(1.5)), Some(constant_model(0.5))];
        // errors: 0.5, 0.5 | 1.5, 0.5, 0.5
        let expected = ((0.25 + 0.25 + 2.25 + 0.25 + 0.25) / 5.0f64).sqrt();
        assert!((rmspe(&models, &parts).unwrap() - expected).abs() < 1e-7);
        assert!(rmspe(&[Some(constant_model(0.0)), None], &parts).is_err());
    }

    #[test]
    fn boundary_closed_forms() {
        let probes: Vec<BoundaryProbe<f64>> = (0..3)
            .map(|i| BoundaryProbe {
                a: 0,
                b: 1,
                point_a: vec![0.5, i as f64 / 2.0],
                point_b: vec![0.5, i as f64 / 2.0],
            })
            .collect();
        let same = vec![Some(constant_model(0.7)), Some(constant_model(0.7))];
        assert_eq!(boundary_rmsd(&same, &probes).unwrap().rmsd, 0.0);
        let opposite = vec![Some(constant_model(0.3)), Some(constant_model(-0.3))];
        let r = boundary_rmsd(&opposite, &probes).unwrap();
        assert!((r.rmsd - 0.6).abs() < 1e-7);
        assert_eq!((r.probes_used, r.probes_skipped), (3, 0));
        let missing = vec![Some(constant_model(0.3)), None];
        let r = boundary_rmsd(&missing, &probes).unwrap();
        assert_eq!((r.probes_used, r.probes_skipped), (0, 3));
    }
}
